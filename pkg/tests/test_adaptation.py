import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kiera.adaptation import (
    Action,
    DriftDetector,
    DriftState,
    SpcMonitor,
    WidthAction,
    confidence_factor,
    hoeffding_bound,
)


def test_hoeffding_bound_value():
    assert hoeffding_bound(200, 0.001) == pytest.approx(math.sqrt(math.log(1000) / 400))
    with pytest.raises(ValueError):
        hoeffding_bound(0, 0.1)
    with pytest.raises(ValueError):
        hoeffding_bound(10, 0.0)


@given(st.floats(0, 50))
def test_confidence_factor_range(x):
    k = confidence_factor(x)
    assert 0.7 <= k <= 2.0


def test_confidence_factor_endpoints():
    assert confidence_factor(0.0) == pytest.approx(2.0)
    assert confidence_factor(1e9) == pytest.approx(0.7)


def test_width_action_truthiness():
    assert not WidthAction(Action.NONE)
    assert WidthAction(Action.GROW)
    assert WidthAction(Action.PRUNE, 3).node == 3


def test_thresholds_follow_depth_factor():
    mon = SpcMonitor(layer=3, in_width=2, width=2)
    mon.min_bias, mon.min_var = (0.1, 0.02), (0.1, 0.02)
    f = math.log(3) + 1
    assert mon.bias_threshold(0.0) == pytest.approx(0.1 + f * 2.0 * 0.02)
    assert mon.var_threshold(0.0) == pytest.approx(0.1 + 2 * f * 2.0 * 0.02)


def test_stable_reconstruction_triggers_nothing():
    mon = SpcMonitor(1, in_width=4, width=3, grace=10)
    rng = np.random.default_rng(0)
    h = rng.uniform(0, 1, (300, 4))
    acts = mon.update(h, h, rng.uniform(0, 1, (300, 3)))
    assert not any(acts)


def test_bias_jump_requests_a_node():
    mon = SpcMonitor(1, in_width=4, width=3, grace=10)
    rng = np.random.default_rng(1)
    h = rng.uniform(0, 1, (200, 4))
    mon.update(h, h + rng.normal(0, 0.01, h.shape), np.ones((200, 3)))
    acts = mon.update(h[:50], h[:50] + 3.0, np.ones((50, 3)))
    assert any(a.kind is Action.GROW for a in acts)


def test_variance_jump_prunes_least_active_node():
    mon = SpcMonitor(1, in_width=4, width=3, grace=10)
    mon.update(np.zeros((1, 4)), np.zeros((1, 4)), np.tile([0.5, 0.01, 0.9], (1, 1)))
    rng = np.random.default_rng(2)
    for b, v in zip(rng.uniform(0.1, 0.2, 300), rng.uniform(0.1, 0.2, 300)):
        assert not mon._step(b, v)
    # bias stays in its usual band while the variance explodes
    acts = [mon._step(b, 50.0) for b in rng.uniform(0.1, 0.2, 100)]
    prunes = [a for a in acts if a.kind is Action.PRUNE]
    assert prunes and all(a.node == 1 for a in prunes)
    assert not any(a.kind is Action.GROW for a in acts)


def test_grace_period_blocks_early_actions():
    mon = SpcMonitor(1, in_width=2, width=2, grace=50)
    h = np.zeros((40, 2))
    acts = mon.update(h, h + np.linspace(0, 10, 40)[:, None])
    assert not any(acts)


def test_moments_are_cumulative_means():
    mon = SpcMonitor(1, in_width=3, width=2)
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(7, 3))
    mon.update(a, a)
    mon.update(b, b)
    both = np.vstack([a, b])
    assert np.allclose(mon.recon_mean, both.mean(0))
    assert np.allclose(mon.recon_sq_mean, (both**2).mean(0))


def test_bias_statistic_by_hand():
    mon = SpcMonitor(1, in_width=2, width=1, grace=1000)
    x = np.array([[1.0, 2.0], [3.0, 0.0]])
    r = np.array([[0.0, 0.0], [2.0, 2.0]])
    mon.update(x, r)
    # after the second sample E[r] = [1, 1]; bias^2 = mean(([1,1] - [3,0])^2)
    assert mon.last_bias2 == pytest.approx((4 + 1) / 2)
    # variance = mean(E[r^2] - E[r]^2) = mean([2, 2] - [1, 1])
    assert mon.last_var == pytest.approx(1.0)


def test_reset_and_resize_hooks():
    mon = SpcMonitor(1, in_width=3, width=2)
    mon.update(np.ones((5, 3)), np.ones((5, 3)), np.ones((5, 2)))
    mon.reset("bias")
    assert mon.bias_stat.count == 0 and mon.var_stat.count == 5
    with pytest.raises(ValueError):
        mon.reset("nope")
    mon.hidden_added()
    mon.input_added()
    assert len(mon.hidden_mean) == 3 and len(mon.recon_mean) == 4
    mon.hidden_removed(0)
    mon.input_removed(3)
    assert len(mon.hidden_mean) == 2 and len(mon.recon_mean) == 3


def test_detector_requires_ordered_levels():
    with pytest.raises(ValueError):
        DriftDetector(alpha_d=0.01, alpha_w=0.005)


def test_constant_series_is_stable():
    assert DriftDetector().raw_state(np.full(200, 0.3)) is DriftState.STABLE


def test_large_shift_is_drift_in_both_directions():
    rng = np.random.default_rng(0)
    base = rng.normal(0, 1, 200)
    up = np.concatenate([base[:100], base[100:] + 5])
    down = np.concatenate([base[:100], base[100:] - 5])
    det = DriftDetector()
    assert det.raw_state(up) is DriftState.DRIFT
    assert det.raw_state(down) is DriftState.DRIFT


def test_iid_batches_rarely_alarm():
    rng = np.random.default_rng(5)
    det = DriftDetector()
    alarms = sum(det.raw_state(rng.normal(size=1000)) is DriftState.DRIFT for _ in range(200))
    assert alarms <= 10


def test_warning_then_warning_escalates():
    det = DriftDetector()
    det.raw_state = lambda s: DriftState.WARNING
    z = np.zeros((3, 2))
    assert det.check(z, z) is DriftState.WARNING
    assert det.check(z, z) is DriftState.DRIFT
    det.raw_state = lambda s: DriftState.STABLE
    assert det.check(z, z) is DriftState.STABLE
    assert not det.pending_warning


def test_check_reduces_rows_to_means():
    det = DriftDetector()
    seen = {}

    def record(series):
        seen["s"] = series
        return DriftState.STABLE

    det.raw_state = record
    det.check(np.array([[1.0, 3.0]]), np.array([[5.0, 7.0], [0.0, 2.0]]))
    assert np.array_equal(seen["s"], [2.0, 6.0, 1.0])
    # a 1-D batch is one scalar per sample
    seen.clear()
    det.check(np.array([1.0, 2.0]), np.array([3.0]))
    assert np.array_equal(seen["s"], [1.0, 2.0, 3.0])


def test_check_rejects_empty_batches():
    with pytest.raises(ValueError):
        DriftDetector().check(np.zeros((0, 3)), np.zeros((2, 3)))
