"""Stream fusion, classification and the training objective"""
from logging import getLogger
from typing import NamedTuple, Tuple

import numpy as np

from . import functional as F
from .const import LOGGER_NAME, DType
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .nn import Linear, Module, zeros
from .tensor import Tensor

log = getLogger(LOGGER_NAME)


class LossParts(NamedTuple):
    """Cross entropy, attention penalty and their sum"""
    ce: Tensor
    att: Tensor
    total: Tensor


class ClassifierHead(Module):
    """W_f with a bias, both zero at initialization so the first
    predictions are uniform"""

    def __init__(self, dim: int, num_classes: int, rng: np.random.Generator,
                 dtype: DType):
        self.linear = Linear(dim, num_classes, rng, dtype)
        self.linear.weight = zeros((num_classes, dim), dtype)

    def forward(self, fused: Tensor) -> Tensor:  # pylint: disable=arguments-differ
        return self.linear(fused)


def _gated(phi: Tensor, h: Tensor) -> Tensor:
    gate = F.sigmoid(h)
    if phi.ndim == 1:
        if h.size != 1:
            raise ShapeError(f"one vector needs a scalar gate, got {h.shape}")
        return phi * gate.reshape(())
    if phi.ndim != 2 or h.shape != (phi.shape[0], ):
        raise ShapeError(f"gates {h.shape} do not fit features {phi.shape}")
    return phi * gate.reshape(phi.shape[0], 1).expand(phi.shape)


def fuse(phi_f_att: Tensor, phi_c_corr: Tensor, h_face: Tensor,
         h_context: Tensor) -> Tensor:
    """sigmoid(h_face) phi_f + sigmoid(h_context) phi_c"""
    if phi_f_att.shape != phi_c_corr.shape:
        raise ShapeError(f"face {phi_f_att.shape} and context "
                         f"{phi_c_corr.shape} features differ")
    return _gated(phi_f_att, h_face) + _gated(phi_c_corr, h_context)


def fuse_classify(phi_f_att: Tensor, phi_c_corr: Tensor, h_face: Tensor,
                  h_context: Tensor,
                  head: ClassifierHead) -> Tuple[Tensor, Tensor]:
    """Returns logits and class probabilities of the fused features"""
    logits = head(fuse(phi_f_att, phi_c_corr, h_face, h_context))
    return logits, F.softmax(logits)


def smoothing_targets(labels: np.ndarray, num_classes: int,
                      epsilon: float) -> np.ndarray:
    """One-hot rows mixed with the uniform distribution

    >>> smoothing_targets(np.array([0]), 2, 0.5).tolist()
    [[0.75, 0.25]]
    """
    if not 0 <= epsilon < 1:
        raise ConfigError(f"label smoothing {epsilon} is outside of [0, 1)")
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeError(f"labels must be a vector, got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"labels outside of [0, {num_classes})")
    targets = np.full((labels.size, num_classes), epsilon / num_classes)
    targets[np.arange(labels.size), labels] += 1.0 - epsilon
    return targets


def cross_entropy_smoothed(logits: Tensor, labels: np.ndarray,
                           epsilon: float) -> Tensor:
    """Mean over the batch of -sum_k q_k log p_k, q the smoothed target,
    log p taken from the logits with a log-softmax"""
    if logits.ndim != 2 or logits.shape[0] != len(labels):
        raise ShapeError(f"logits {logits.shape} for {len(labels)} labels")
    targets = smoothing_targets(labels, logits.shape[1], epsilon)
    log_probs = F.log_softmax(logits)
    weighted = log_probs * Tensor(targets.astype(logits.data.dtype))
    return -weighted.sum(axis=1).mean()


def attention_loss(h_face: Tensor, h_context: Tensor) -> Tensor:
    """Mean over the batch of |h_face| + |h_context|"""
    if h_face.shape != h_context.shape or h_face.ndim != 1:
        raise ShapeError(f"gate vectors {h_face.shape} and "
                         f"{h_context.shape} differ")
    return (h_face.abs() + h_context.abs()).mean()


def final_loss(ce: Tensor, att: Tensor) -> LossParts:
    """ce + att with both parts kept for logging"""
    for name, part in (("cross entropy", ce), ("attention loss", att)):
        if not np.isfinite(part.data).all():
            raise NumericalError(f"{name} is not finite")
    return LossParts(ce, att, ce + att)
