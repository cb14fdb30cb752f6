import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmreg.config import StageSchedule
from mmreg.errors import InvalidArgumentError, NumericalError
from mmreg.optim import AdamState, EarlyStopping, adam_step, gradient_check, run_adam


def scalar_adam(x, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam on a scalar, in plain floats."""
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(x)
    return out


def test_first_step_moves_by_lr():
    x, state = adam_step(AdamState.zeros(1, 0.1), np.array([1.0]), np.array([2.0]))
    assert x[0] == pytest.approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8), abs=1e-15)
    assert state.step == 1


def test_ten_steps_on_square_match_reference():
    expected = scalar_adam(1.0, lambda x: 2 * x, 0.1, 10)
    x, state = np.array([1.0]), AdamState.zeros(1, 0.1)
    for want in expected:
        x, state = adam_step(state, x, 2 * x)
        assert x[0] == pytest.approx(want, abs=1e-12)


def test_adam_rejects_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        adam_step(AdamState.zeros(2, 0.1), np.zeros(3), np.zeros(3))


def test_zero_gradient_leaves_params():
    x, _ = adam_step(AdamState.zeros(3, 0.1), np.array([1.0, -2.0, 3.0]), np.zeros(3))
    assert x.tolist() == [1.0, -2.0, 3.0]


def test_run_adam_minimizes_quadratic():
    target = np.array([0.3, -0.2, 0.5])
    x, loss, iters = run_adam(
        lambda x: (float(((x - target) ** 2).sum()), 2 * (x - target)),
        np.zeros(3),
        StageSchedule(lr=0.05, max_iters=500, patience=25),
    )
    np.testing.assert_allclose(x, target, atol=1e-2)
    assert loss < 1e-4


def test_run_adam_stops_on_plateau_and_traces():
    trace = []
    _, _, iters = run_adam(lambda x: (1.0, np.ones_like(x)), np.zeros(2), StageSchedule(0.1, 100, 5), "flat", trace)
    assert iters == 6
    assert [row[:2] for row in trace] == [("flat", i) for i in range(1, 7)]


def test_run_adam_returns_best_not_last():
    # loss rises after the first evaluation: the starting point is the best
    calls = []

    def f(x):
        calls.append(x.copy())
        return float(len(calls)), np.ones_like(x)

    x, loss, _ = run_adam(f, np.array([0.5]), StageSchedule(0.1, 10, 3))
    assert loss == 1.0 and x.tolist() == [0.5]


def test_run_adam_nan():
    with pytest.raises(NumericalError, match="iteration 1"):
        run_adam(lambda x: (float("nan"), x), np.zeros(1), StageSchedule(0.1, 5, 2), "coarse-A")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=40), st.integers(1, 6),
       st.floats(0, 0.5, allow_nan=False))
def test_early_stopping_invariants(losses, patience, min_delta):
    stopper = EarlyStopping(patience, min_delta)
    best = math.inf
    for i, loss in enumerate(losses):
        stop = stopper.update(loss)
        if loss < best - min_delta:
            best = loss
        assert stopper.best == best
        assert 0 <= stopper.wait <= patience
        if stop:
            # the last `patience` losses failed to beat the best by min_delta
            assert stopper.wait == patience
            break


def test_gradient_check_quadratic():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    f = lambda x: float(x @ A @ x)
    x = np.array([0.3, -1.2])
    good = gradient_check(f, x, 2 * A @ x)
    assert good["max"] < 1e-8
    bad = gradient_check(f, x, 2 * A @ x + np.array([0.0, 0.1]), components=[1])
    assert bad["index"].tolist() == [1] and bad["max"] > 1e-2
    with pytest.raises(InvalidArgumentError):
        gradient_check(f, x, x, h=0)


def test_gradient_check_scale_floor():
    # second component is tiny: a 1e-6 absolute mismatch is a 100% ratio
    f = lambda x: float(x[0] ** 2 + 1e-6 * x[1])
    x = np.array([1.0, 0.0])
    g = np.array([2.0, 2e-6])
    assert gradient_check(f, x, g)["max"] > 0.4
    assert gradient_check(f, x, g, scale_floor=0.05)["max"] < 1e-4
