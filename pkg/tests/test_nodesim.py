import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qrm_edge.domain import BatteryState, DomainError, ReconfigCommand
from qrm_edge.nodesim import (
    MS_PER_WH_AT_1W, BatchCompleted, BatteryExhausted, ModeSwitched, NodeConfig, NodeSim,
    SyntheticClassifier, TelemetryDue, sample_predictions, to_prediction_record, uniform_error_profile,
)

COOKING, NO_ACTION = 3, 17


def node(cfg, capacity=None, mode=0, **over):
    base = cfg.node_configs()[0]
    kwargs = dict(
        node_id="n1", initial_mode=mode, battery=BatteryState.full(capacity or cfg.capacity_wh),
        profiles=cfg.profiles, class_labels=cfg.class_labels, class_distribution=cfg.class_distribution,
        rng_seed=base.rng_seed,
    )
    kwargs.update(over)
    return NodeSim(NodeConfig(**kwargs))


def test_ten_second_window(cfg):
    events = node(cfg).step(10_000)
    batches = [e.timestamp_ms for e in events if isinstance(e, BatchCompleted)]
    ticks = [e for e in events if isinstance(e, TelemetryDue)]
    assert batches == [2560.0, 5120.0, 7680.0]
    assert len(ticks) == 100 and ticks[-1].timestamp_ms == 10_000.0


def test_zero_window_changes_nothing(cfg):
    sim = node(cfg)
    assert sim.step(0) == []
    assert sim.clock_ms == 0.0 and sim.battery_pct == 100.0


def test_constant_mode_exhausts_at_ten_hours(cfg):
    sim = node(cfg)
    events = list(sim.iter_events())
    assert isinstance(events[-1], BatteryExhausted)
    assert events[-1].timestamp_ms == pytest.approx(36_000_000, abs=100)
    assert sim.exhausted and sim.step(1e12) == []


def test_tie_order_batch_before_telemetry(cfg):
    # 2560 ms is not a telemetry instant but 12800 ms is both
    events = node(cfg).step(12_800)
    at = [type(e) for e in events if e.timestamp_ms == 12_800.0]
    assert at == [BatchCompleted, TelemetryDue]


def test_identity_profile_is_always_right():
    clf = SyntheticClassifier({0: np.eye(4)}, [0.25] * 4, np.random.default_rng(1))
    for _ in range(500):
        t = clf.draw_true_class()
        pred, conf = clf.classify(0, t)
        assert pred == t and 0.5 <= conf <= 1.0


def test_zero_diagonal_profile_is_always_wrong():
    m = (np.ones((4, 4)) - np.eye(4)) / 3
    clf = SyntheticClassifier({0: m}, [0.25] * 4, np.random.default_rng(2))
    for _ in range(500):
        t = clf.draw_true_class()
        assert clf.classify(0, t)[0] != t


@pytest.mark.parametrize("mode, target", [(0, 84.24), (1, 81.00), (2, 76.27)])
def test_default_profiles_are_calibrated(cfg, mode, target):
    profile = uniform_error_profile(cfg.profiles[mode].accuracy_pct, len(cfg.class_labels))
    records = sample_predictions(profile, cfg.class_distribution, 10_000, seed=mode)
    acc = 100.0 * np.mean([r.predicted_class == r.true_class for r in records])
    assert abs(acc - target) <= 1.5


def test_uniform_error_profile_shape():
    m = uniform_error_profile(84.24, 18)
    assert np.allclose(m.sum(axis=1), 1.0)
    assert np.allclose(np.diag(m), 0.8424)


def test_prediction_record_keeps_argmax():
    r = to_prediction_record(2, 1, 0.3, 5)
    assert r.predicted_class == 1 and sum(r.confidences) == pytest.approx(1.0)


def test_default_class_distribution(cfg):
    d = cfg.class_distribution
    assert d[COOKING] == pytest.approx(332 / 2495)
    assert d[NO_ACTION] == pytest.approx(200 / 2495)
    assert sum(d) == pytest.approx(1.0)


def test_immediate_switch(cfg):
    sim = node(cfg)
    sim.step(1000)
    event = sim.apply_reconfig(ReconfigCommand(1, "n1", 1, 1000.0))
    assert event == ModeSwitched(1000.0, 0, 1)
    assert sim.mode == 1 and sim.power_w == cfg.profiles[1].device_power_w
    assert sim.apply_reconfig(ReconfigCommand(2, "n1", 1, 1000.0)) is None


def test_command_for_current_mode_is_noop(cfg):
    sim = node(cfg)
    sim.step(500)
    before = (sim.mode, sim.remaining_wh(), len(sim.segments))
    assert sim.apply_reconfig(ReconfigCommand(1, "n1", 0, 500.0)) is None
    assert (sim.mode, sim.remaining_wh(), len(sim.segments)) == before


def test_unknown_target_mode(cfg):
    with pytest.raises(DomainError):
        node(cfg).apply_reconfig(ReconfigCommand(1, "n1", 7, 0.0))


def test_switch_latency_drains_old_mode(cfg):
    sim = node(cfg, switch_latency_s=5.0)
    sim.step(1000)
    assert sim.apply_reconfig(ReconfigCommand(1, "n1", 2, 1000.0)) is None
    events = sim.step(7000)
    switched = [e for e in events if isinstance(e, ModeSwitched)]
    assert switched == [ModeSwitched(6000.0, 0, 2)]
    # no inference while switching, fps reported as 0
    assert not [e for e in events if isinstance(e, BatchCompleted) and 1000 < e.timestamp_ms <= 6000]
    assert sim.segments[0].end_ms == 6000.0
    extra = sim.segments[0].energy_wh - 4.77 * 1.0 / 3600
    assert extra == pytest.approx(5 * 4.77 / 3600, rel=1e-12)
    # batch schedule restarts from the switch
    assert [e.timestamp_ms for e in events if isinstance(e, BatchCompleted)] == []
    assert [e.timestamp_ms for e in sim.step(9000) if isinstance(e, BatchCompleted)] == [8560.0]


def test_fps_zero_while_switching(cfg):
    sim = node(cfg, switch_latency_s=1.0)
    sim.step(100)
    sim.apply_reconfig(ReconfigCommand(1, "n1", 1, 100.0))
    assert sim.telemetry().fps == 0.0
    sim.step(1200)
    assert sim.telemetry().fps == cfg.profiles[1].throughput_fps


def test_telemetry_fields(cfg):
    sim = node(cfg)
    sim.step(100)
    s = sim.telemetry()
    assert s.label == "" and s.confidence == 0.0
    assert s.temperature_c == pytest.approx(35 + 5 * 1.58)
    sim.step(2600)
    s = sim.telemetry()
    assert s.label in cfg.class_labels and 0.2 <= s.confidence <= 1.0
    assert s.battery_pct == pytest.approx(100 * (1 - 4.77 * 2600 / MS_PER_WH_AT_1W / 47.7), abs=1e-6)


def run_with_commands(cfg, seed, capacity, switches):
    sim = node(cfg, capacity=capacity, rng_seed=seed)
    out = []
    for i, (t, target) in enumerate(switches):
        out += sim.step(t)
        sim.apply_reconfig(ReconfigCommand(i + 1, "n1", target, t))
    out += list(sim.iter_events())
    return sim, out


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.05),
       st.lists(st.tuples(st.floats(1, 30_000), st.integers(0, 2)), max_size=4))
def test_determinism_conservation_and_order(cfg, seed, capacity, switches):
    switches = sorted(switches)
    sim_a, events_a = run_with_commands(cfg, seed, capacity, switches)
    _, events_b = run_with_commands(cfg, seed, capacity, switches)
    assert events_a == events_b
    times = [e.timestamp_ms for e in events_a]
    assert times == sorted(times)
    assert isinstance(events_a[-1], BatteryExhausted)
    assert sum(isinstance(e, BatteryExhausted) for e in events_a) == 1
    assert sim_a.energy_drained_wh() == pytest.approx(capacity, abs=1e-6)


@given(st.floats(0, 20_000), st.floats(0, 20_000), st.floats(0, 1))
def test_battery_is_affine_without_commands(cfg, a, b, lam):
    sim = node(cfg, capacity=1.0)
    c = lam * a + (1 - lam) * b
    assert sim.remaining_wh(c) == pytest.approx(lam * sim.remaining_wh(a) + (1 - lam) * sim.remaining_wh(b),
                                                abs=1e-12)


def test_config_validation(cfg):
    with pytest.raises(DomainError):
        node(cfg, mode=5)
    with pytest.raises(DomainError):
        node(cfg, confusion_profiles={0: np.eye(3)})
    with pytest.raises(DomainError):
        node(cfg, switch_latency_s=-1)
