"""Core value types shared by the collector, the node simulator and the reports.

Everything here is an immutable value. Percentages are real numbers in
[0, 100]; battery bands use half-open intervals ``(lo, hi]`` so that a
reading of exactly 50.0% belongs to the band below it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

REALTIME_MIN_FPS = 25.0


class DomainError(ValueError):
    """A value violates one of the domain invariants."""


class PolicyError(DomainError):
    """A policy does not cover (0, 100] exactly or references an unknown mode."""


@dataclass(frozen=True)
class ModeProfile:
    """Cost and quality parameters of one deployable operating mode."""

    mode_id: int
    model_name: str
    model_size_mb: float
    gpu_power_w: float
    device_power_w: float
    throughput_fps: float
    accuracy_pct: float
    f1_pct: float

    def __post_init__(self):
        if self.mode_id < 0:
            raise DomainError(f"mode id must be non-negative, got {self.mode_id}")
        for name in ("model_size_mb", "gpu_power_w", "device_power_w", "throughput_fps"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be > 0 for mode {self.mode_id}")
        if self.gpu_power_w > self.device_power_w:
            raise DomainError(
                f"mode {self.mode_id}: GPU power {self.gpu_power_w} W exceeds "
                f"device power {self.device_power_w} W"
            )
        if self.throughput_fps < REALTIME_MIN_FPS:
            raise DomainError(
                f"mode {self.mode_id}: {self.throughput_fps} fps is below the "
                f"{REALTIME_MIN_FPS:g} fps real-time floor"
            )
        for name in ("accuracy_pct", "f1_pct"):
            if not 0.0 <= getattr(self, name) <= 100.0:
                raise DomainError(f"{name} must lie in [0, 100] for mode {self.mode_id}")


@dataclass(frozen=True)
class Band:
    lower_pct: float  # exclusive
    upper_pct: float  # inclusive
    mode: int

    def contains(self, pct: float) -> bool:
        return self.lower_pct < pct <= self.upper_pct

    @property
    def width_pct(self) -> float:
        return self.upper_pct - self.lower_pct


@dataclass(frozen=True)
class Policy:
    """Battery bands, highest charge first, each mapped to a mode id."""

    name: str
    bands: tuple[Band, ...]

    @classmethod
    def from_rows(cls, name: str, rows: Iterable[Sequence[float]]) -> "Policy":
        """Build from ``(lower, upper, mode)`` rows."""
        return cls(name, tuple(Band(float(lo), float(hi), int(m)) for lo, hi, m in rows))

    @classmethod
    def constant(cls, name: str, mode: int) -> "Policy":
        return cls(name, (Band(0.0, 100.0, mode),))

    @property
    def modes(self) -> tuple[int, ...]:
        return tuple(b.mode for b in self.bands)

    def rows(self) -> list[list[float]]:
        return [[b.lower_pct, b.upper_pct, b.mode] for b in self.bands]


def validate_policy(policy: Policy, known_modes: Iterable[int] | None = None) -> Policy:
    """Return ``policy`` unchanged if its bands tile (0, 100] from the top down.

    Raises:
        PolicyError: on an empty band list, a gap, an overlap, a band that does
            not start at 100 or end at 0, or a mode missing from ``known_modes``.
    """
    bands = policy.bands
    if not bands:
        raise PolicyError(f"policy {policy.name!r} has no bands")
    if bands[0].upper_pct != 100.0:
        raise PolicyError(f"policy {policy.name!r} must start at 100%, starts at {bands[0].upper_pct}")
    if bands[-1].lower_pct != 0.0:
        raise PolicyError(f"policy {policy.name!r} must end at 0%, ends at {bands[-1].lower_pct}")
    for band in bands:
        if not band.lower_pct < band.upper_pct:
            raise PolicyError(f"policy {policy.name!r}: empty band {band}")
    for above, below in zip(bands, bands[1:]):
        if below.upper_pct < above.lower_pct:
            raise PolicyError(
                f"policy {policy.name!r}: gap between {below.upper_pct}% and {above.lower_pct}%"
            )
        if below.upper_pct > above.lower_pct:
            raise PolicyError(
                f"policy {policy.name!r}: bands overlap between {above.lower_pct}% and {below.upper_pct}%"
            )
    if known_modes is not None:
        known = set(known_modes)
        for band in bands:
            if band.mode not in known:
                raise PolicyError(f"policy {policy.name!r} references unknown mode {band.mode}")
    return policy


def band_index(policy: Policy, battery_pct: float) -> int:
    """Index of the band holding ``battery_pct`` (0 = fullest band)."""
    if not 0.0 < battery_pct <= 100.0:
        raise DomainError(f"battery percentage {battery_pct} is outside (0, 100]")
    for i, band in enumerate(policy.bands):
        if band.lower_pct < battery_pct <= band.upper_pct:
            return i
    raise PolicyError(f"policy {policy.name!r} does not cover {battery_pct}%")


def band_for(policy: Policy, battery_pct: float) -> int:
    """Mode id prescribed by ``policy`` at ``battery_pct``.

    A battery at 0% is dead, which ends the run rather than selecting a band,
    so it raises :class:`DomainError`.
    """
    return policy.bands[band_index(policy, battery_pct)].mode


@dataclass(frozen=True)
class BatteryState:
    capacity_wh: float
    remaining_wh: float

    def __post_init__(self):
        if not self.capacity_wh > 0:
            raise DomainError(f"capacity must be > 0 Wh, got {self.capacity_wh}")
        if not 0.0 <= self.remaining_wh <= self.capacity_wh:
            raise DomainError(
                f"remaining {self.remaining_wh} Wh outside [0, {self.capacity_wh}]"
            )

    @classmethod
    def full(cls, capacity_wh: float) -> "BatteryState":
        return cls(capacity_wh, capacity_wh)

    @property
    def percentage(self) -> float:
        return 100.0 * self.remaining_wh / self.capacity_wh


@dataclass(frozen=True)
class ClassCounts:
    tp: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise DomainError(f"negative count in {self}")


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """K x K counts, rows are the true class and columns the predicted class."""

    counts: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or counts.shape[0] < 1:
            raise DomainError(f"confusion matrix must be K x K with K >= 1, got shape {counts.shape}")
        if (counts < 0).any():
            raise DomainError("confusion matrix has negative entries")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        labels = tuple(self.labels) or tuple(str(i) for i in range(counts.shape[0]))
        if len(labels) != counts.shape[0]:
            raise DomainError(f"{len(labels)} labels for {counts.shape[0]} classes")
        object.__setattr__(self, "labels", labels)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_records(cls, records: Sequence["PredictionRecord"], labels: Sequence[str] = ()) -> "ConfusionMatrix":
        """Tally records, deciding each one by the arg-max confidence."""
        if not records:
            raise DomainError("no prediction records")
        k = len(records[0].confidences)
        counts = np.zeros((k, k), dtype=np.int64)
        for rec in records:
            counts[rec.true_class, rec.predicted_class] += 1
        return cls(counts, tuple(labels))

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.counts, other.counts)


@dataclass(frozen=True)
class PredictionRecord:
    true_class: int
    confidences: tuple[float, ...]

    def __post_init__(self):
        confidences = tuple(float(c) for c in self.confidences)
        object.__setattr__(self, "confidences", confidences)
        if not confidences:
            raise DomainError("empty confidence vector")
        if not 0 <= self.true_class < len(confidences):
            raise DomainError(f"true class {self.true_class} outside 0..{len(confidences) - 1}")
        if any(not 0.0 <= c <= 1.0 for c in confidences):
            raise DomainError("confidences must lie in [0, 1]")

    @property
    def predicted_class(self) -> int:
        return int(np.argmax(self.confidences))


class _TelemetryFields(NamedTuple):
    node_id: str
    timestamp_ms: float
    mode: int
    gpu_power_w: float
    device_power_w: float
    temperature_c: float
    fps: float
    battery_pct: float
    label: str
    confidence: float


class TelemetrySample(_TelemetryFields):
    """One periodic node report. Only scalar qualities, never image data.

    Tuple-backed: nodes build ten of these per simulated second.
    """

    __slots__ = ()

    def __new__(cls, node_id: str, timestamp_ms: float, mode: int, gpu_power_w: float,
                device_power_w: float, temperature_c: float, fps: float, battery_pct: float,
                label: str, confidence: float):
        if not 0.0 <= battery_pct <= 100.0:
            raise DomainError(f"battery_pct {battery_pct} outside [0, 100]")
        if not 0.0 <= confidence <= 1.0:
            raise DomainError(f"confidence {confidence} outside [0, 1]")
        if mode < 0:
            raise DomainError(f"negative mode {mode}")
        return tuple.__new__(cls, (node_id, timestamp_ms, mode, gpu_power_w, device_power_w,
                                   temperature_c, fps, battery_pct, label, confidence))


@dataclass(frozen=True)
class ReconfigCommand:
    command_id: int
    node_id: str
    target_mode: int
    issued_at_ms: float

    def __post_init__(self):
        if self.command_id < 0 or self.target_mode < 0:
            raise DomainError(f"invalid command {self}")


def profiles_by_id(profiles: Iterable[ModeProfile]) -> dict[int, ModeProfile]:
    out: dict[int, ModeProfile] = {}
    for p in profiles:
        if p.mode_id in out:
            raise DomainError(f"duplicate mode id {p.mode_id}")
        out[p.mode_id] = p
    return out


def normalize_distribution(weights: Mapping[str, float] | Sequence[float]) -> tuple[float, ...]:
    values = np.asarray(list(weights.values()) if isinstance(weights, Mapping) else weights, dtype=float)
    if (values < 0).any() or values.sum() <= 0:
        raise DomainError("class weights must be non-negative with a positive sum")
    return tuple(float(v) for v in values / values.sum())


__all__ = [
    "Band", "BatteryState", "ClassCounts", "ConfusionMatrix", "DomainError", "ModeProfile",
    "Policy", "PolicyError", "PredictionRecord", "ReconfigCommand", "TelemetrySample",
    "band_for", "band_index", "normalize_distribution", "profiles_by_id", "validate_policy",
]
