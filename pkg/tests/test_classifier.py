"""Tests of fusion, classification and the training objective."""
import math

import numpy as np
import pytest

from agcd.debias.classifier import (
    ClassifierHead,
    attention_loss,
    cross_entropy_smoothed,
    final_loss,
    fuse,
    fuse_classify,
    smoothing_targets,
)
from agcd.debias.const import DType
from agcd.debias.errors import ConfigError, DataError, NumericalError
from agcd.debias.tensor import Tensor, parameter

# pylint: disable=missing-function-docstring

F64 = DType.F64


def test_smoothing_targets_rows_sum_to_one():
    targets = smoothing_targets(np.array([0, 2, 1]), 3, 0.2)
    assert np.allclose(targets.sum(axis=1), 1)
    assert targets[1, 2] == pytest.approx(0.8 + 0.2 / 3)
    assert targets[1, 0] == pytest.approx(0.2 / 3)


def test_smoothing_targets_validation():
    with pytest.raises(ConfigError):
        smoothing_targets(np.array([0]), 3, 1.0)
    with pytest.raises(DataError):
        smoothing_targets(np.array([3]), 3, 0.1)


def test_uniform_logits_give_log_k():
    logits = Tensor(np.zeros((4, 7)))
    loss = cross_entropy_smoothed(logits, np.array([0, 1, 2, 3]), 0.2)
    assert loss.item() == pytest.approx(math.log(7))


def test_cross_entropy_gradient():
    logits = parameter(np.array([[2.0, 0.0, -1.0]]), F64)
    labels = np.array([0])
    cross_entropy_smoothed(logits, labels, 0.3).backward()
    probs = np.exp(logits.data) / np.exp(logits.data).sum()
    expected = probs - smoothing_targets(labels, 3, 0.3)
    assert np.allclose(logits.grad, expected)


def test_attention_loss_is_mean_abs():
    h_face = Tensor(np.array([1.0, -2.0]))
    h_context = Tensor(np.array([-0.5, 0.5]))
    assert attention_loss(h_face, h_context).item() == pytest.approx(2.0)


def test_final_loss_sums_parts():
    parts = final_loss(Tensor(np.array(1.5)), Tensor(np.array(0.25)))
    assert parts.total.item() == 1.75


def test_final_loss_rejects_nan():
    nan = Tensor(np.array(1.0))
    nan.data = np.array(np.nan)
    with pytest.raises(NumericalError):
        final_loss(nan, Tensor(np.array(0.0)))


def test_fuse_gates_both_streams():
    phi_f = Tensor(np.array([[1.0, 2.0]]))
    phi_c = Tensor(np.array([[4.0, -2.0]]))
    h_face = Tensor(np.array([0.0]))
    h_context = Tensor(np.array([np.log(3.0)]))
    fused = fuse(phi_f, phi_c, h_face, h_context).data
    assert np.allclose(fused, 0.5 * phi_f.data + 0.75 * phi_c.data)


def test_head_starts_uniform():
    rng = np.random.default_rng(0)
    head = ClassifierHead(4, 3, rng, F64)
    phi = Tensor(rng.normal(size=(2, 4)))
    h = Tensor(np.zeros(2))
    logits, probs = fuse_classify(phi, phi, h, h, head)
    assert logits.shape == (2, 3)
    assert np.allclose(probs.data, 1 / 3)
