"""Attention guided causal intervention on context features.

The attended context vector is mapped to a counterfactual by a learned
perturbation, their difference is taken as the context bias, and the
context vector is corrected by a learned map of that bias gated by the
sigmoid of the scaled face vector:

    pert = W_p phi_c
    delta = phi_c - pert
    corr = phi_c - (W_c delta) * sigmoid(alpha phi_f)

Vectors are [d] or batches [N, d]; matrices act on the feature axis.
"""
from logging import getLogger
from typing import NamedTuple, Tuple

import numpy as np

from . import functional as F
from .const import LOGGER_NAME, PERTURBATION_NOISE_STD, DType
from .errors import ShapeError
from .nn import Module
from .tensor import Tensor, parameter

log = getLogger(LOGGER_NAME)


class CimTrace(NamedTuple):
    """Intermediate vectors of one intervention"""
    phi_c_pert: Tensor
    delta_phi_c: Tensor
    gate: Tensor
    phi_c_corr: Tensor


def _apply(matrix: Tensor, vectors: Tensor) -> Tensor:
    """matrix @ v for every vector on the last axis"""
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] \
            or vectors.shape[-1] != matrix.shape[1] \
            or vectors.ndim not in (1, 2):
        raise ShapeError(f"can not apply a {matrix.shape} matrix to "
                         f"{vectors.shape}")
    if vectors.ndim == 1:
        return (vectors.reshape(1, -1) @ matrix.T).reshape(matrix.shape[0])
    return vectors @ matrix.T


def perturb(phi_c_att: Tensor, w_p: Tensor) -> Tensor:
    """Counterfactual context features W_p phi_c

    >>> w = Tensor([[0, 1], [1, 0]], dtype=DType.F64)
    >>> perturb(Tensor([1, 2], dtype=DType.F64), w).data.tolist()
    [2.0, 1.0]
    """
    return _apply(w_p, phi_c_att)


def context_bias(phi_c_att: Tensor, phi_c_pert: Tensor) -> Tensor:
    """The part of the context removed by the perturbation"""
    if phi_c_att.shape != phi_c_pert.shape:
        raise ShapeError(f"context bias of {phi_c_att.shape} and "
                         f"{phi_c_pert.shape}")
    return phi_c_att - phi_c_pert


def correct(phi_c_att: Tensor, delta_phi_c: Tensor, phi_f_att: Tensor,
            w_c: Tensor, alpha: Tensor) -> Tuple[Tensor, Tensor]:
    """Returns the corrected context features and the face gate"""
    if not phi_c_att.shape == delta_phi_c.shape == phi_f_att.shape:
        raise ShapeError(f"correction of {phi_c_att.shape} by "
                         f"{delta_phi_c.shape} gated with "
                         f"{phi_f_att.shape}")
    if alpha.size != 1:
        raise ShapeError(f"alpha must be a scalar, got {alpha.shape}")
    gate = F.sigmoid(alpha.reshape(()) * phi_f_att)
    return phi_c_att - _apply(w_c, delta_phi_c) * gate, gate


def ag_cim_forward(phi_c_att: Tensor, phi_f_att: Tensor, w_p: Tensor,
                   w_c: Tensor, alpha: Tensor) -> Tuple[Tensor, CimTrace]:
    """perturb, context_bias and correct in sequence"""
    phi_c_pert = perturb(phi_c_att, w_p)
    delta_phi_c = context_bias(phi_c_att, phi_c_pert)
    phi_c_corr, gate = correct(phi_c_att, delta_phi_c, phi_f_att, w_c,
                               alpha)
    return phi_c_corr, CimTrace(phi_c_pert, delta_phi_c, gate, phi_c_corr)


class AgCim(Module):
    """Learned intervention parameters. W_p starts near the identity,
    W_c at zero so the correction starts as an exact no-op and alpha at 1.
    A disabled module passes context features through."""

    def __init__(self,
                 dim: int,
                 rng: np.random.Generator,
                 dtype: DType,
                 enabled: bool = True):
        self.enabled = enabled
        if enabled:
            self.w_p = parameter(
                np.eye(dim) +
                rng.normal(0.0, PERTURBATION_NOISE_STD, size=(dim, dim)),
                dtype)
            self.w_c = parameter(np.zeros((dim, dim)), dtype)
            self.alpha = parameter(1.0, dtype)

    def forward(self, phi_c_att: Tensor, phi_f_att: Tensor) \
            -> Tuple[Tensor, CimTrace]:  # pylint: disable=arguments-differ
        if not self.enabled:
            if phi_c_att.shape != phi_f_att.shape:
                raise ShapeError(f"context {phi_c_att.shape} and face "
                                 f"{phi_f_att.shape} features differ")
            zero = Tensor(np.zeros_like(phi_c_att.data))
            return phi_c_att, CimTrace(phi_c_att, zero, zero, phi_c_att)
        return ag_cim_forward(phi_c_att, phi_f_att, self.w_p, self.w_c,
                              self.alpha)
