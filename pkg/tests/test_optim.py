import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spherefm.optim import AdamState, ParamGroup, Schedule, adam_step, check_gradients, scheduled_lr


def adam_oracle(theta, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam written out step by step."""
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        theta = theta - lr * mh / (math.sqrt(vh) + eps)
        out.append(theta)
    return out


def test_zero_gradient_leaves_params():
    p = np.array([1.0, -2.0])
    st_ = AdamState.zeros_like(p)
    np.testing.assert_array_equal(adam_step(st_, p, np.zeros(2), 0.1), p)
    assert st_.t == 1


def test_first_step_closed_form():
    p = np.array([0.0])
    out = adam_step(AdamState.zeros_like(p), p, np.array([1.0]), 0.02)
    assert out[0] == pytest.approx(-0.02 / (1 + 1e-8), abs=1e-15)


def test_trajectory_matches_oracle():
    p = np.array([1.0])
    st_ = AdamState.zeros_like(p)
    got = []
    for _ in range(5):
        p = adam_step(st_, p, 2 * p, 0.1)
        got.append(p[0])
    np.testing.assert_allclose(got, adam_oracle(1.0, lambda th: 2 * th, 0.1, 5), atol=1e-12, rtol=0)


def test_translation_equivariance():
    c = 3.25
    a = np.array([0.7])
    b = a + c
    sa, sb = AdamState.zeros_like(a), AdamState.zeros_like(b)
    for _ in range(20):
        a = adam_step(sa, a, 2 * a, 0.05)
        b = adam_step(sb, b, 2 * (b - c), 0.05)
        assert b[0] - c == pytest.approx(a[0], abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.floats(1e-4, 1.0))
def test_bounded_update_for_constant_gradient(g, lr):
    p = np.array([0.0])
    st_ = AdamState.zeros_like(p)
    for _ in range(10):
        new = adam_step(st_, p, np.array([g]), lr)
        assert abs(new[0] - p[0]) <= lr * (1 + 1e-6)
        p = new


def test_sparse_rows_only_touch_selected():
    p = np.arange(12, dtype=float).reshape(4, 3)
    st_ = AdamState.zeros_like(p, per_row=True)
    new = adam_step(st_, p, np.ones((2, 3)), 0.1, rows=[1, 3])
    np.testing.assert_array_equal(new[[0, 2]], p[[0, 2]])
    assert st_.t.tolist() == [0, 1, 0, 1]
    # a row first updated later still gets first-step bias correction
    new2 = adam_step(st_, new, np.ones((1, 3)), 0.1, rows=[0])
    np.testing.assert_allclose(new2[0], p[0] - 0.1 / (1 + 1e-8), atol=1e-14)


def test_adam_errors():
    p = np.zeros(3)
    st_ = AdamState.zeros_like(p)
    with pytest.raises(ValueError):
        adam_step(st_, p, np.zeros(2), 0.1)
    with pytest.raises(ValueError, match="non-finite"):
        adam_step(st_, p, np.array([0, np.nan, 0]), 0.1)
    with pytest.raises(ValueError):
        adam_step(st_, p, np.zeros(3), 0.0)
    p2 = np.zeros((3, 2))
    with pytest.raises(ValueError, match="per-row"):
        adam_step(AdamState.zeros_like(p2), p2, np.zeros((1, 2)), 0.1, rows=[0])


def test_second_moment_nonnegative(rng):
    p = rng.standard_normal(5)
    st_ = AdamState.zeros_like(p)
    for _ in range(10):
        p = adam_step(st_, p, rng.standard_normal(5), 0.01)
        assert np.all(st_.v >= 0)


def test_fit_schedule():
    g = ParamGroup("x", np.zeros(1), 0.02, Schedule(0.5, 128, "iteration"))
    assert scheduled_lr(g, 127) == 0.02
    assert scheduled_lr(g, 128) == 0.01
    assert scheduled_lr(g, 256) == 0.005


def test_train_schedule():
    g = ParamGroup("x", np.zeros(1), 0.02, Schedule(0.1, 20, "epoch"))
    assert scheduled_lr(g, 19) == 0.02
    assert scheduled_lr(g, 20) == pytest.approx(0.002, rel=1e-15)


def test_constant_and_monotone_schedule():
    g = ParamGroup("x", np.zeros(1), 0.3, Schedule(1.0, 5))
    assert {scheduled_lr(g, s) for s in range(100)} == {0.3}
    g = ParamGroup("x", np.zeros(1), 0.3, Schedule(0.7, 3))
    lrs = [scheduled_lr(g, s) for s in range(50)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(ValueError):
        scheduled_lr(g, -1)


def test_schedule_validation():
    for kw in ({"decay_factor": 0.0}, {"decay_factor": 1.5}, {"decay_every": 0}, {"unit": "week"}):
        with pytest.raises(ValueError):
            Schedule(**kw)
    with pytest.raises(ValueError):
        ParamGroup("x", np.zeros(1), -0.1)


def test_param_group_step_uses_schedule():
    g = ParamGroup("x", np.zeros(1), 0.02, Schedule(0.5, 128, "iteration"))
    g.step(np.array([1.0]), 128)
    assert g.params[0] == pytest.approx(-0.01 / (1 + 1e-8), abs=1e-15)


def test_checker_exact_quadratic(rng):
    Q = rng.standard_normal((4, 4))
    Q = Q @ Q.T
    rep = check_gradients(lambda p: (float(p @ Q @ p), 2 * Q @ p), rng.standard_normal(4))
    assert rep.max_rel_error < 1e-9 and rep.passed


def test_checker_detects_wrong_gradient(rng):
    rep = check_gradients(lambda p: (float(p @ p), 4 * p), rng.standard_normal(3))
    assert rep.max_rel_error == pytest.approx(0.5, abs=1e-6)
    assert not rep.passed


def test_checker_errors():
    with pytest.raises(ValueError):
        check_gradients(lambda p: (0.0, p), np.zeros(2), h=0)
    with pytest.raises(ValueError, match="non-finite"):
        check_gradients(lambda p: (float("nan") if p[0] < 0 else float(p[0]), np.ones(1)), np.array([1e-7]))
