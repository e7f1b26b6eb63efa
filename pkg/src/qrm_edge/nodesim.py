"""Deterministic discrete-event model of one battery-powered edge node.

The node runs on a virtual millisecond clock. It completes an inference
batch every ``batch_frames / input_fps`` seconds, raises a telemetry tick
every ``telemetry_period_ms``, drains its battery at the active mode's device
power and stops at the instant the battery is empty. Classification is
synthetic: predictions are drawn from a per-mode confusion profile with the
node's seeded generator, so equal configs give equal event streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence, Union

import numpy as np

from .domain import (
    BatteryState, DomainError, ModeProfile, PredictionRecord, ReconfigCommand, TelemetrySample,
)
from .protocol import quantize

MS_PER_WH_AT_1W = 3.6e6  # 1 Wh drained at 1 W lasts 3.6e6 ms
BASE_TEMPERATURE_C = 35.0
TEMPERATURE_PER_GPU_W = 5.0


def uniform_error_profile(accuracy_pct: float, n_classes: int) -> np.ndarray:
    """Row-stochastic matrix with ``accuracy_pct/100`` on the diagonal and the
    remaining mass spread evenly over the other classes."""
    acc = accuracy_pct / 100.0
    if n_classes == 1:
        return np.ones((1, 1))
    off = (1.0 - acc) / (n_classes - 1)
    m = np.full((n_classes, n_classes), off)
    np.fill_diagonal(m, acc)
    return m


def _check_stochastic(name: str, values: np.ndarray, tol: float = 1e-9):
    if (values < 0).any() or not np.allclose(values.sum(axis=-1), 1.0, rtol=0.0, atol=tol):
        raise DomainError(f"{name} must be non-negative and sum to 1 (+/- {tol})")


class SyntheticClassifier:
    """Draws (true class, predicted class, confidence) triples."""

    def __init__(self, profiles: Mapping[int, np.ndarray], class_distribution: Sequence[float],
                 rng: np.random.Generator):
        self.profiles = {m: np.asarray(p, dtype=float) for m, p in profiles.items()}
        self._cum_rows = {m: np.cumsum(p, axis=1) for m, p in self.profiles.items()}
        self._row_argmax = {m: np.argmax(p, axis=1) for m, p in self.profiles.items()}
        self._cum_dist = np.cumsum(np.asarray(class_distribution, dtype=float))
        self.rng = rng

    @property
    def n_classes(self) -> int:
        return len(self._cum_dist)

    def draw_true_class(self) -> int:
        k = int(np.searchsorted(self._cum_dist, self.rng.random(), side="right"))
        return min(k, self.n_classes - 1)

    def classify(self, mode: int, true_class: int) -> tuple[int, float]:
        """Predicted class from the confusion row of ``true_class``; confidence
        U[0.5, 1] when the draw hits the row's arg-max, else U[0.2, 0.8]."""
        cum = self._cum_rows[mode][true_class]
        pred = min(int(np.searchsorted(cum, self.rng.random(), side="right")), self.n_classes - 1)
        if pred == self._row_argmax[mode][true_class]:
            conf = self.rng.uniform(0.5, 1.0)
        else:
            conf = self.rng.uniform(0.2, 0.8)
        return pred, float(conf)


def to_prediction_record(true_class: int, predicted: int, confidence: float, n_classes: int) -> PredictionRecord:
    """Expand a single-label output into a full confidence vector; the rest of
    the mass is shared evenly, so the arg-max stays ``predicted``."""
    if n_classes == 1:
        return PredictionRecord(true_class, (confidence,))
    rest = (1.0 - confidence) / (n_classes - 1)
    conf = [rest] * n_classes
    conf[predicted] = confidence
    return PredictionRecord(true_class, tuple(conf))


@dataclass
class NodeConfig:
    node_id: str
    initial_mode: int
    battery: BatteryState
    profiles: Mapping[int, ModeProfile]
    class_labels: tuple[str, ...]
    class_distribution: tuple[float, ...]
    confusion_profiles: dict[int, np.ndarray] = field(default_factory=dict)
    input_fps: float = 25.0
    batch_frames: int = 64
    telemetry_period_ms: float = 100.0
    switch_latency_s: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        k = len(self.class_labels)
        if len(self.class_distribution) != k:
            raise DomainError(f"{len(self.class_distribution)} class probabilities for {k} labels")
        _check_stochastic("class distribution", np.asarray(self.class_distribution, dtype=float))
        if self.initial_mode not in self.profiles:
            raise DomainError(f"initial mode {self.initial_mode} has no profile")
        profiles = {}
        for mode, prof in self.profiles.items():
            matrix = self.confusion_profiles.get(mode)
            matrix = uniform_error_profile(prof.accuracy_pct, k) if matrix is None else np.asarray(matrix, dtype=float)
            if matrix.shape != (k, k):
                raise DomainError(f"confusion profile for mode {mode} must be {k}x{k}")
            _check_stochastic(f"confusion rows of mode {mode}", matrix)
            profiles[mode] = matrix
        self.confusion_profiles = profiles
        if self.input_fps <= 0 or self.batch_frames <= 0 or self.telemetry_period_ms <= 0:
            raise DomainError("input_fps, batch_frames and telemetry_period_ms must be positive")
        if self.switch_latency_s < 0:
            raise DomainError("switch latency must be >= 0")

    @property
    def batch_period_ms(self) -> float:
        return 1000.0 * self.batch_frames / self.input_fps


@dataclass(frozen=True, slots=True)
class BatchCompleted:
    timestamp_ms: float
    true_class: int
    predicted_class: int
    confidence: float


@dataclass(frozen=True, slots=True)
class TelemetryDue:
    timestamp_ms: float


@dataclass(frozen=True, slots=True)
class ModeSwitched:
    timestamp_ms: float
    from_mode: int
    to_mode: int


@dataclass(frozen=True, slots=True)
class BatteryExhausted:
    timestamp_ms: float


NodeEvent = Union[BatchCompleted, TelemetryDue, ModeSwitched, BatteryExhausted]


@dataclass(frozen=True)
class PowerSegment:
    mode: int
    power_w: float
    start_ms: float
    end_ms: float

    @property
    def energy_wh(self) -> float:
        return self.power_w * (self.end_ms - self.start_ms) / MS_PER_WH_AT_1W


class NodeSim:
    """Mutable simulation state of one node; owned by a single activity."""

    def __init__(self, config: NodeConfig):
        self.config = config
        self.capacity_wh = config.battery.capacity_wh
        self.initial_wh = config.battery.remaining_wh
        self.clock_ms = 0.0
        self.mode = config.initial_mode
        self.exhausted = self.initial_wh <= 0
        self.classifier = SyntheticClassifier(
            config.confusion_profiles, config.class_distribution, np.random.default_rng(config.rng_seed)
        )
        self.last_label = ""
        self.last_confidence = 0.0
        self.segments: list[PowerSegment] = []
        self._batch_period = config.batch_period_ms
        self._tel_period = float(config.telemetry_period_ms)
        self._tel_k = 1
        self._seg_start_ms = 0.0
        self._seg_start_wh = self.initial_wh
        self._power = config.profiles[self.mode].device_power_w
        self._batch_base = 0.0
        self._batch_n = 1
        self._switch_target: int | None = None
        self._switch_done_ms = math.inf
        self._temperature = {
            m: quantize(BASE_TEMPERATURE_C + TEMPERATURE_PER_GPU_W * p.gpu_power_w)
            for m, p in config.profiles.items()
        }

    # -- battery ---------------------------------------------------------
    @property
    def power_w(self) -> float:
        return self._power

    @property
    def switching(self) -> bool:
        return self._switch_target is not None

    def remaining_wh(self, at_ms: float | None = None) -> float:
        t = self.clock_ms if at_ms is None else at_ms
        return max(0.0, self._seg_start_wh - self._power * (t - self._seg_start_ms) / MS_PER_WH_AT_1W)

    @property
    def battery(self) -> BatteryState:
        return BatteryState(self.capacity_wh, self.remaining_wh())

    @property
    def battery_pct(self) -> float:
        return 100.0 * self.remaining_wh() / self.capacity_wh

    def exhaustion_ms(self) -> float:
        return self._seg_start_ms + self._seg_start_wh * MS_PER_WH_AT_1W / self._power

    def _close_segment(self, t: float) -> None:
        self.segments.append(PowerSegment(self.mode, self._power, self._seg_start_ms, t))
        self._seg_start_wh = self.remaining_wh(t)
        self._seg_start_ms = t

    # -- events ----------------------------------------------------------
    def iter_events(self, until_ms: float = math.inf) -> Iterator[NodeEvent]:
        """Yield events with timestamps <= ``until_ms`` in time order.

        State is re-read on every iteration, so a command applied between two
        yields takes effect from the current clock onward. Ties resolve as
        exhaustion, mode switch, batch, telemetry.
        """
        tel_period = self._tel_period
        while not self.exhausted:
            t_tel = self._tel_k * tel_period
            if self._switch_target is None:
                t_batch = self._batch_base + self._batch_n * self._batch_period
                t_next = t_batch if t_batch < t_tel else t_tel
            else:
                t_batch = math.inf
                t_next = min(self._switch_done_ms, t_tel)
            t_exh = self._seg_start_ms + self._seg_start_wh * MS_PER_WH_AT_1W / self._power
            if t_exh <= t_next:
                if t_exh > until_ms:
                    return
                self.clock_ms = t_exh
                self._close_segment(t_exh)
                self._seg_start_wh = 0.0
                self.exhausted = True
                yield BatteryExhausted(t_exh)
                return
            if t_next > until_ms:
                return
            self.clock_ms = t_next
            if t_next == self._switch_done_ms:
                yield self._complete_switch(t_next)
            elif t_next == t_batch:
                self._batch_n += 1
                yield self._run_batch(t_next)
            else:
                self._tel_k += 1
                yield TelemetryDue(t_next)

    def step(self, until_ms: float) -> list[NodeEvent]:
        """Advance the clock to ``until_ms`` and return the events on the way."""
        events = list(self.iter_events(until_ms))
        if not self.exhausted and until_ms > self.clock_ms:
            self.clock_ms = until_ms
        return events

    def _run_batch(self, t: float) -> BatchCompleted:
        true_class = self.classifier.draw_true_class()
        pred, conf = self.synth_classify(true_class)
        self.last_label = self.config.class_labels[pred]
        self.last_confidence = quantize(conf)
        return BatchCompleted(t, true_class, pred, conf)

    def synth_classify(self, true_class: int) -> tuple[int, float]:
        return self.classifier.classify(self.mode, true_class)

    # -- reconfiguration -------------------------------------------------
    def apply_reconfig(self, cmd: ReconfigCommand) -> ModeSwitched | None:
        """Begin switching to ``cmd.target_mode`` at the current clock.

        With zero latency the switch is immediate and its event is returned.
        Otherwise inference pauses, the old mode keeps drawing power, and the
        ``ModeSwitched`` event comes out of :meth:`iter_events` once the
        latency has elapsed. Commands for the current (or already pending)
        target are no-ops.
        """
        target = cmd.target_mode
        if target not in self.config.profiles:
            raise DomainError(f"node {self.config.node_id}: unknown target mode {target}")
        if self.exhausted:
            return None
        if self._switch_target is None and target == self.mode:
            return None
        if self._switch_target == target:
            return None
        latency_ms = 1000.0 * self.config.switch_latency_s
        if latency_ms == 0.0:
            self._switch_target = None
            self._switch_done_ms = math.inf
            return self._complete_switch(self.clock_ms, target)
        if self._switch_target is None:
            self._switch_done_ms = self.clock_ms + latency_ms
        self._switch_target = target
        return None

    def _complete_switch(self, t: float, target: int | None = None) -> ModeSwitched:
        target = self._switch_target if target is None else target
        old = self.mode
        self._close_segment(t)
        self.mode = target
        self._power = self.config.profiles[target].device_power_w
        self._switch_target = None
        self._switch_done_ms = math.inf
        self._batch_base = t
        self._batch_n = 1
        return ModeSwitched(t, old, target)

    # -- reporting -------------------------------------------------------
    def telemetry(self) -> TelemetrySample:
        """Snapshot of the node's qualities at the current clock."""
        prof = self.config.profiles[self.mode]
        t = self.clock_ms
        remaining = self._seg_start_wh - self._power * (t - self._seg_start_ms) / MS_PER_WH_AT_1W
        return TelemetrySample(
            self.config.node_id,
            t if t.is_integer() else quantize(t),
            self.mode,
            prof.gpu_power_w,
            self._power,
            self._temperature[self.mode],
            0.0 if self._switch_target is not None else prof.throughput_fps,
            quantize(100.0 * max(remaining, 0.0) / self.capacity_wh),
            self.last_label,
            self.last_confidence,
        )

    def energy_drained_wh(self) -> float:
        closed = sum(s.energy_wh for s in self.segments)
        if self.exhausted:
            return closed
        return closed + self._power * (self.clock_ms - self._seg_start_ms) / MS_PER_WH_AT_1W


def sample_predictions(
    profile: np.ndarray, class_distribution: Sequence[float], n: int, seed: int = 0
) -> list[PredictionRecord]:
    """``n`` synthetic prediction records drawn from one confusion profile."""
    clf = SyntheticClassifier({0: profile}, class_distribution, np.random.default_rng(seed))
    k = clf.n_classes
    out = []
    for _ in range(n):
        true_class = clf.draw_true_class()
        pred, conf = clf.classify(0, true_class)
        out.append(to_prediction_record(true_class, pred, conf, k))
    return out
