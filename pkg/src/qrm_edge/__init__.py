"""Energy-aware reconfiguration of battery-powered edge nodes.

Simulated nodes stream telemetry to a collector whose decision engine
switches each node's operating mode as its battery crosses policy bands.
"""

from .domain import (
    Band, BatteryState, ClassCounts, ConfusionMatrix, ModeProfile, Policy, PredictionRecord,
    ReconfigCommand, TelemetrySample, band_for, validate_policy,
)
from .energy import ScenarioReport, evaluate_policy, extension_ratio
from .metrics import macro_metrics, macro_pr, pr_curve, time_weighted_f1

__version__ = "0.1.0"
