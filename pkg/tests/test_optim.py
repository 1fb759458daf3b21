"""Tests of AdamW and the learning rate schedule."""
import math

import numpy as np
import pytest

from agcd.debias.const import DType
from agcd.debias.errors import NumericalError
from agcd.debias.optim import (
    AdamState,
    AdamW,
    adamw_step,
    clip_grad_norm,
    cosine_warm_restart_lr,
    cycle_position,
)
from agcd.debias.tensor import parameter

# pylint: disable=missing-function-docstring


def test_three_cycles():
    rates = [cosine_warm_restart_lr(t, 4, 2, 1.0, 0.1) for t in range(28)]
    # restarts after 4 and 4 + 8 steps
    for start in (0, 4, 12):
        assert rates[start] == pytest.approx(1.0)
    assert rates[2] == pytest.approx(0.55)
    assert rates[8] == pytest.approx(0.55)
    assert rates[20] == pytest.approx(0.55)
    for start, length in ((0, 4), (4, 8), (12, 16)):
        cycle = rates[start:start + length]
        assert all(a > b for a, b in zip(cycle, cycle[1:]))
        assert min(cycle) > 0.1


def test_every_step_follows_the_closed_form():
    lr_base, lr_min = 1e-3, 1e-6
    step = 0
    for length in (4, 8, 16):
        for offset in range(length):
            expected = lr_min + 0.5 * (lr_base - lr_min) * (
                1 + math.cos(math.pi * offset / length))
            rate = cosine_warm_restart_lr(step, 4, 2, lr_base, lr_min)
            assert abs(rate - expected) <= 1e-12, step
            step += 1
    assert step == 28
    assert abs(cosine_warm_restart_lr(28, 4, 2, lr_base, lr_min) -
               lr_base) <= 1e-12


def test_constant_cycle_length():
    assert cycle_position(10, 4, 1) == (2, 2, 4)
    assert cosine_warm_restart_lr(8, 4, 1, 2.0, 0.0) == pytest.approx(2.0)


def test_first_step_moves_by_lr():
    state = AdamState()
    params = {"w": np.array([1.0, -1.0])}
    grads = {"w": np.array([0.5, -3.0])}
    new = adamw_step(params, grads, state, lr=0.1, eps=0.0)
    # bias corrected first step is lr * sign(g)
    assert np.allclose(new["w"], [0.9, -0.9])
    assert state.step == 1


def test_decay_only_with_zero_gradients():
    state = AdamState()
    params = {"w": np.array([2.0, -3.0])}
    lr, decay = 0.01, 0.1
    for _ in range(100):
        params = adamw_step(params, {"w": np.zeros(2)},
                            state,
                            lr=lr,
                            weight_decay=decay)
    assert np.allclose(params["w"],
                       np.array([2.0, -3.0]) * (1 - lr * decay)**100,
                       rtol=1e-12)


def test_missing_gradient_counts_as_zero():
    state = AdamState()
    params = {"w": np.ones(2)}
    new = adamw_step(params, {}, state, lr=0.1, weight_decay=0.5)
    assert np.allclose(new["w"], 0.95)


def test_state_roundtrip():
    state = AdamState()
    adamw_step({"a": np.ones(3)}, {"a": np.ones(3)}, state, lr=0.1)
    restored = AdamState.from_tensors(state.to_tensors(), state.step)
    assert restored.step == 1
    assert np.array_equal(restored.m["a"], state.m["a"])
    assert np.array_equal(restored.v["a"], state.v["a"])


def test_clip_grad_norm():
    a = parameter([3.0], DType.F64)
    b = parameter([4.0], DType.F64)
    a.grad = np.array([3.0])
    b.grad = np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    assert math.hypot(a.grad[0], b.grad[0]) == pytest.approx(1.0)
    assert clip_grad_norm([a, b], 0) == pytest.approx(1.0)
    b.grad = np.array([np.nan])
    with pytest.raises(NumericalError):
        clip_grad_norm([a, b], 1.0)


def test_optimizer_updates_tensors():
    w = parameter([1.0, 2.0], DType.F64)
    optimizer = AdamW([("w", w)], weight_decay=0.0)
    (w * w).sum().backward()
    optimizer.step(0.5)
    assert np.allclose(w.data, [0.5, 1.5])
    optimizer.zero_grad()
    assert w.grad is None
    assert optimizer.state.step == 1
