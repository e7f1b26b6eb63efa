"""Constant-power battery discharge and closed-form policy evaluation."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

from .domain import BatteryState, DomainError, ModeProfile, Policy, validate_policy
from .metrics import TimedSegment, time_weighted_f1

SECONDS_PER_HOUR = 3600.0


def discharge(battery: BatteryState, power_w: float, duration_s: float) -> BatteryState:
    """Drain ``power_w`` for ``duration_s`` seconds, stopping at empty."""
    if power_w <= 0:
        raise DomainError(f"power must be > 0 W, got {power_w}")
    if duration_s < 0:
        raise DomainError(f"duration must be >= 0 s, got {duration_s}")
    used = power_w * duration_s / SECONDS_PER_HOUR
    return BatteryState(battery.capacity_wh, max(0.0, battery.remaining_wh - used))


def time_to_threshold(battery: BatteryState, power_w: float, threshold_pct: float) -> float:
    """Seconds until the battery falls to ``threshold_pct`` at constant power."""
    if power_w <= 0:
        raise DomainError(f"power must be > 0 W, got {power_w}")
    target_wh = threshold_pct / 100.0 * battery.capacity_wh
    if target_wh > battery.remaining_wh:
        raise DomainError(
            f"threshold {threshold_pct}% is above the current {battery.percentage:.4f}%"
        )
    return (battery.remaining_wh - target_wh) * SECONDS_PER_HOUR / power_w


def calibrate_capacity(profile: ModeProfile, target_hours: float) -> float:
    """Capacity (Wh) that runs ``profile`` for exactly ``target_hours``."""
    if target_hours <= 0:
        raise DomainError(f"target hours must be > 0, got {target_hours}")
    return profile.device_power_w * target_hours


def format_duration(seconds: float) -> str:
    """``Hh MM'`` with minutes rounded half-up, e.g. ``12h 16'``."""
    minutes = math.floor(seconds / 60.0 + 0.5)
    return f"{minutes // 60}h {minutes % 60:02d}'"


@dataclass(frozen=True)
class Segment:
    mode: int
    duration_s: float
    energy_wh: float


@dataclass(frozen=True)
class ScenarioReport:
    policy: str
    total_working_time_s: float
    segments: tuple[Segment, ...]
    weighted_f1_pct: float
    reconfiguration_count: int

    @property
    def display_time(self) -> str:
        return format_duration(self.total_working_time_s)

    @property
    def hours(self) -> float:
        return self.total_working_time_s / SECONDS_PER_HOUR

    def to_json(self) -> str:
        record = {"type": "scenario_report", **asdict(self), "display_time": self.display_time}
        return json.dumps(record, separators=(",", ":"))


def evaluate_policy(
    policy: Policy, profiles: Mapping[int, ModeProfile], capacity_wh: float
) -> ScenarioReport:
    """Working time and time-weighted F1 of ``policy`` from a full battery.

    Each band drains its share of the capacity at its mode's device power;
    mode switches cost nothing here.
    """
    validate_policy(policy, profiles.keys())
    if capacity_wh <= 0:
        raise DomainError(f"capacity must be > 0 Wh, got {capacity_wh}")
    segments = []
    for band in policy.bands:
        profile = profiles[band.mode]
        energy = capacity_wh * band.width_pct / 100.0
        segments.append(Segment(band.mode, energy * SECONDS_PER_HOUR / profile.device_power_w, energy))
    total = sum(s.duration_s for s in segments)
    f1 = time_weighted_f1(TimedSegment(s.duration_s, profiles[s.mode].f1_pct) for s in segments)
    switches = sum(a.mode != b.mode for a, b in zip(policy.bands, policy.bands[1:]))
    return ScenarioReport(policy.name, total, tuple(segments), f1, switches)


def extension_ratio(report: ScenarioReport, baseline: ScenarioReport) -> float:
    """Working-time gain over ``baseline`` in percent."""
    if baseline.total_working_time_s <= 0:
        raise DomainError("baseline working time must be > 0")
    return 100.0 * (report.total_working_time_s - baseline.total_working_time_s) / baseline.total_working_time_s


REPORT_COLUMNS = ["scenario", "total_seconds", "display_time", "weighted_f1", "reconfig_count"]


def reports_csv(reports: Sequence[ScenarioReport], baseline: ScenarioReport | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = list(REPORT_COLUMNS)
    if baseline is not None:
        header += ["baseline", "extension_pct", "f1_delta"]
    writer.writerow(header)
    for r in reports:
        row = [r.policy, f"{r.total_working_time_s:.3f}", r.display_time,
               f"{r.weighted_f1_pct:.4f}", r.reconfiguration_count]
        if baseline is not None:
            row += [baseline.policy, f"{extension_ratio(r, baseline):.4f}",
                    f"{r.weighted_f1_pct - baseline.weighted_f1_pct:.4f}"]
        writer.writerow(row)
    return buf.getvalue()
