import numpy as np
import pytest
from hypothesis import given, strategies as st

from qrm_edge.domain import (
    Band, BatteryState, ConfusionMatrix, DomainError, ModeProfile, Policy, PolicyError,
    PredictionRecord, ReconfigCommand, TelemetrySample, band_for, band_index, normalize_distribution,
    validate_policy,
)

S7 = Policy.from_rows("s7", [[50, 100, 0], [25, 50, 1], [0, 25, 2]])
S2 = Policy.from_rows("s2", [[50, 100, 1], [25, 50, 1], [0, 25, 1]])


def test_three_band_policy_is_valid():
    assert validate_policy(S7, {0, 1, 2}) is S7


def test_single_band_policy_is_valid():
    p = Policy.constant("whole", 0)
    assert validate_policy(p).bands == (Band(0.0, 100.0, 0),)


@pytest.mark.parametrize("rows, fragment", [
    ([[50, 100, 0], [0, 40, 1]], "gap"),
    ([[40, 100, 0], [0, 50, 1]], "overlap"),
    ([[50, 90, 0], [0, 50, 1]], "start at 100"),
    ([[50, 100, 0], [10, 50, 1]], "end at 0"),
    ([], "no bands"),
])
def test_bad_tilings_rejected(rows, fragment):
    with pytest.raises(PolicyError, match=fragment):
        validate_policy(Policy.from_rows("bad", rows))


def test_unknown_mode_rejected():
    with pytest.raises(PolicyError, match="unknown mode 2"):
        validate_policy(S7, {0, 1})


@pytest.mark.parametrize("policy, pct, mode", [
    (S7, 60.0, 0), (S7, 50.0, 1), (S7, 25.0, 2), (S7, 100.0, 0), (S7, 50.000001, 0),
    (S7, 1e-9, 2), (S2, 10.0, 1),
])
def test_band_for(policy, pct, mode):
    assert band_for(policy, pct) == mode


@pytest.mark.parametrize("pct", [0.0, -1.0, 100.0001, float("nan")])
def test_band_for_outside_range(pct):
    with pytest.raises(DomainError):
        band_for(S7, pct)


@st.composite
def policies(draw):
    cuts = draw(st.lists(st.floats(0.5, 99.5, allow_nan=False), max_size=5, unique=True))
    edges = [100.0] + sorted(cuts, reverse=True) + [0.0]
    modes = draw(st.lists(st.integers(0, 3), min_size=len(edges) - 1, max_size=len(edges) - 1))
    return Policy("p", tuple(Band(lo, hi, m) for hi, lo, m in zip(edges, edges[1:], modes)))


@given(policies(), st.floats(0.0, 100.0, exclude_min=True))
def test_band_for_is_total_and_unique(policy, pct):
    validate_policy(policy)
    hits = [b for b in policy.bands if b.contains(pct)]
    assert len(hits) == 1
    assert band_for(policy, pct) == hits[0].mode
    assert policy.bands[band_index(policy, pct)] is hits[0]


@given(policies())
def test_validate_policy_idempotent(policy):
    assert validate_policy(validate_policy(policy)) == validate_policy(policy)


def test_battery_state_bounds():
    assert BatteryState.full(47.7).percentage == 100.0
    assert BatteryState(10.0, 2.5).percentage == 25.0
    with pytest.raises(DomainError):
        BatteryState(10.0, 10.5)
    with pytest.raises(DomainError):
        BatteryState(0.0, 0.0)


def test_mode_profile_validation():
    ok = dict(mode_id=0, model_name="m", model_size_mb=1.0, gpu_power_w=1.0, device_power_w=2.0,
              throughput_fps=30.0, accuracy_pct=80.0, f1_pct=70.0)
    ModeProfile(**ok)
    for bad in ({"gpu_power_w": 3.0}, {"throughput_fps": 20.0}, {"f1_pct": 101.0}, {"device_power_w": 0.0}):
        with pytest.raises(DomainError):
            ModeProfile(**{**ok, **bad})


@given(st.lists(st.tuples(st.integers(0, 4), st.lists(st.floats(0, 1), min_size=5, max_size=5)),
                min_size=1, max_size=60))
def test_confusion_total_equals_record_count(rows):
    records = [PredictionRecord(t, tuple(c)) for t, c in rows]
    cm = ConfusionMatrix.from_records(records)
    assert cm.total == len(records)
    assert cm.n_classes == 5


def test_confusion_matrix_rejects_negative_counts():
    with pytest.raises(DomainError):
        ConfusionMatrix(np.array([[1, -1], [0, 2]]))


def test_prediction_record_argmax_and_bounds():
    assert PredictionRecord(1, (0.1, 0.7, 0.2)).predicted_class == 1
    with pytest.raises(DomainError):
        PredictionRecord(3, (0.5, 0.5))
    with pytest.raises(DomainError):
        PredictionRecord(0, (1.5, 0.0))


def test_telemetry_sample_bounds():
    args = ["n", 100.0, 0, 1.58, 4.77, 42.9, 30.0, 99.0, "walking", 0.9]
    assert TelemetrySample(*args).battery_pct == 99.0
    for idx, value in ((7, 100.5), (9, 1.1), (2, -1)):
        bad = list(args)
        bad[idx] = value
        with pytest.raises(DomainError):
            TelemetrySample(*bad)


def test_reconfig_command_rejects_negative_ids():
    with pytest.raises(DomainError):
        ReconfigCommand(-1, "n", 0, 0.0)


def test_normalize_distribution():
    assert normalize_distribution([1, 3]) == (0.25, 0.75)
    assert normalize_distribution({"a": 2, "b": 2}) == (0.5, 0.5)
    with pytest.raises(DomainError):
        normalize_distribution([0, 0])
