"""Scenario configuration: TOML in, validated dataclasses out, TOML back.

Lookup order for the file is an explicit path, then ``$QRM_EDGE_CONFIG``,
then the bundled ``defaults.toml``.
"""

from __future__ import annotations

import os
import sys
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .domain import (
    BatteryState, DomainError, ModeProfile, Policy, normalize_distribution, profiles_by_id, validate_policy,
)
from .nodesim import NodeConfig

ENV_VAR = "QRM_EDGE_CONFIG"


class ConfigError(DomainError):
    pass


@dataclass(frozen=True)
class SimulationSettings:
    input_fps: float = 25.0
    batch_frames: int = 64
    telemetry_period_ms: float = 100.0
    switch_latency_s: float = 0.0
    retry_timeout_s: float = 5.0
    energy_window_s: float = 60.0
    speedup: float = 1.0


@dataclass(frozen=True)
class OutputSettings:
    dir: str = "qrm_out"
    port: int = 7171
    host: str = "127.0.0.1"


@dataclass(frozen=True)
class NodeSpec:
    id: str
    policy: str | None = None
    initial_mode: int | None = None
    seed: int | None = None
    capacity_wh: float | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    profiles: dict[int, ModeProfile]
    policies: dict[str, Policy]
    class_labels: tuple[str, ...]
    class_weights: tuple[float, ...]
    capacity_wh: float = 47.7
    seed: int = 0
    default_policy: str = "scenario1"
    confusion_profiles: dict[int, tuple[tuple[float, ...], ...]] = field(default_factory=dict)
    simulation: SimulationSettings = SimulationSettings()
    output: OutputSettings = OutputSettings()
    nodes: tuple[NodeSpec, ...] = ()

    def __post_init__(self):
        self.validate()

    @property
    def class_distribution(self) -> tuple[float, ...]:
        return normalize_distribution(self.class_weights)

    def policy(self, name: str) -> Policy:
        try:
            return self.policies[name]
        except KeyError:
            raise ConfigError(f"unknown policy {name!r}; known: {', '.join(self.policies)}") from None

    def validate(self) -> None:
        if not self.profiles:
            raise ConfigError("no operating modes configured")
        for policy in self.policies.values():
            validate_policy(policy, self.profiles.keys())
        if self.default_policy not in self.policies:
            raise ConfigError(f"default policy {self.default_policy!r} is not defined")
        if len(self.class_weights) != len(self.class_labels) or not self.class_labels:
            raise ConfigError("class_weights must match class_labels one-to-one")
        if self.capacity_wh <= 0:
            raise ConfigError("capacity_wh must be > 0")
        for mode in self.confusion_profiles:
            if mode not in self.profiles:
                raise ConfigError(f"confusion profile for unknown mode {mode}")
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ConfigError("node ids must be unique")
        for n in self.nodes:
            if n.policy is not None and n.policy not in self.policies:
                raise ConfigError(f"node {n.id}: unknown policy {n.policy!r}")
            if n.initial_mode is not None and n.initial_mode not in self.profiles:
                raise ConfigError(f"node {n.id}: unknown initial mode {n.initial_mode}")

    def node_policy(self, spec: NodeSpec) -> Policy:
        return self.policy(spec.policy or self.default_policy)

    def node_configs(self) -> list[NodeConfig]:
        """Per-node simulator configs; a node starts in its policy's top-band mode
        unless told otherwise, and seeds default to ``seed + index``."""
        out = []
        for i, spec in enumerate(self.nodes):
            policy = self.node_policy(spec)
            capacity = spec.capacity_wh or self.capacity_wh
            out.append(NodeConfig(
                node_id=spec.id,
                initial_mode=policy.bands[0].mode if spec.initial_mode is None else spec.initial_mode,
                battery=BatteryState.full(capacity),
                profiles=self.profiles,
                class_labels=self.class_labels,
                class_distribution=self.class_distribution,
                confusion_profiles={m: list(map(list, rows)) for m, rows in self.confusion_profiles.items()},
                input_fps=self.simulation.input_fps,
                batch_frames=self.simulation.batch_frames,
                telemetry_period_ms=self.simulation.telemetry_period_ms,
                switch_latency_s=self.simulation.switch_latency_s,
                rng_seed=self.seed + i if spec.seed is None else spec.seed,
            ))
        return out

    def with_overrides(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


def _profile(entry: dict) -> ModeProfile:
    entry = dict(entry)
    return ModeProfile(mode_id=int(entry.pop("id")), **entry)


def from_dict(data: dict[str, Any]) -> ScenarioConfig:
    """Build and validate a config from parsed TOML.

    Raises:
        ConfigError: on missing keys, unknown keys or failed validation.
    """
    data = dict(data)
    try:
        profiles = profiles_by_id(_profile(m) for m in data.pop("modes"))
        policies = {name: Policy.from_rows(name, rows) for name, rows in data.pop("policies").items()}
        confusion = {int(k): tuple(tuple(float(x) for x in row) for row in v)
                     for k, v in data.pop("confusion_profiles", {}).items()}
        cfg = ScenarioConfig(
            profiles=profiles,
            policies=policies,
            class_labels=tuple(data.pop("class_labels")),
            class_weights=tuple(float(w) for w in data.pop("class_weights")),
            capacity_wh=float(data.pop("capacity_wh", 47.7)),
            seed=int(data.pop("seed", 0)),
            default_policy=data.pop("default_policy", next(iter(policies))),
            confusion_profiles=confusion,
            simulation=SimulationSettings(**data.pop("simulation", {})),
            output=OutputSettings(**data.pop("output", {})),
            nodes=tuple(NodeSpec(**n) for n in data.pop("nodes", [])),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid configuration: {exc!r}") from None
    if data:
        raise ConfigError(f"unknown configuration keys: {sorted(data)}")
    return cfg


def to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    out: dict[str, Any] = {
        "capacity_wh": cfg.capacity_wh,
        "seed": cfg.seed,
        "default_policy": cfg.default_policy,
        "class_labels": list(cfg.class_labels),
        "class_weights": list(cfg.class_weights),
        "modes": [{"id": p.mode_id, **{k: v for k, v in asdict(p).items() if k != "mode_id"}}
                  for p in cfg.profiles.values()],
        "policies": {name: p.rows() for name, p in cfg.policies.items()},
        "simulation": asdict(cfg.simulation),
        "output": asdict(cfg.output),
        "nodes": [{k: v for k, v in asdict(n).items() if v is not None} for n in cfg.nodes],
    }
    if cfg.confusion_profiles:
        out["confusion_profiles"] = {str(m): [list(r) for r in rows] for m, rows in cfg.confusion_profiles.items()}
    return out


def loads(text: str) -> ScenarioConfig:
    try:
        return from_dict(tomllib.loads(text))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from None


def dumps(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def default_config_text() -> str:
    return resources.files("qrm_edge").joinpath("data/defaults.toml").read_text(encoding="utf-8")


def load(path: str | os.PathLike | None = None) -> ScenarioConfig:
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is None:
        return loads(default_config_text())
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text)
