"""AdamW with decoupled weight decay and cosine annealing with warm
restarts"""
import math
from dataclasses import dataclass, field
from logging import getLogger
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .const import LOGGER_NAME
from .errors import DataError, NumericalError, ShapeError
from .tensor import Tensor

log = getLogger(LOGGER_NAME)

MOMENT_PREFIXES = ("adam.m.", "adam.v.")


def cosine_annealing(t: float, t_i: float, lr_base: float,
                     lr_min: float) -> float:
    """Rate `t` steps into a cycle of length `t_i`

    >>> cosine_annealing(0, 8, 1.0, 0.0)
    1.0
    >>> cosine_annealing(8, 8, 1.0, 0.0)
    0.0
    """
    return lr_min + (lr_base - lr_min) * (1 + math.cos(math.pi * t / t_i)) / 2


def cycle_position(step: int, t_0: int, t_mult: int) -> Tuple[int, int, int]:
    """(cycle index, offset in the cycle, cycle length) of `step`

    >>> cycle_position(5, 2, 2)
    (1, 3, 4)
    """
    if step < 0:
        raise ValueError(f"step must not be negative, got {step}")
    if t_mult == 1:
        return step // t_0, step % t_0, t_0
    cycle, length = 0, t_0
    while step >= length:
        step -= length
        length *= t_mult
        cycle += 1
    return cycle, step, length


def cosine_warm_restart_lr(step: int, t_0: int, t_mult: int, lr_base: float,
                           lr_min: float) -> float:
    """Rate of optimizer step `step`, cycle i lasts t_0 * t_mult**i steps
    and starts again from `lr_base`"""
    _, offset, length = cycle_position(step, t_0, t_mult)
    return cosine_annealing(offset, length, lr_base, lr_min)


@dataclass
class AdamState:
    """Moments of every parameter and the number of steps taken"""
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def to_tensors(self) -> Dict[str, np.ndarray]:
        """Moments keyed for the checkpoint archive"""
        tensors = {MOMENT_PREFIXES[0] + k: a for k, a in self.m.items()}
        tensors.update(
            {MOMENT_PREFIXES[1] + k: a
             for k, a in self.v.items()})
        return tensors

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray],
                     step: int) -> "AdamState":
        """Inverse of `to_tensors`, other entries are ignored"""
        state = cls(step=step)
        for name, array in tensors.items():
            if name.startswith(MOMENT_PREFIXES[0]):
                state.m[name[len(MOMENT_PREFIXES[0]):]] = array.copy()
            elif name.startswith(MOMENT_PREFIXES[1]):
                state.v[name[len(MOMENT_PREFIXES[1]):]] = array.copy()
        if set(state.m) != set(state.v):
            raise DataError("First and second moments do not match")
        return state


# pylint: disable=too-many-arguments
def adamw_step(params: Mapping[str, np.ndarray],
               grads: Mapping[str, Optional[np.ndarray]],
               state: AdamState,
               lr: float,
               betas: Tuple[float, float] = (0.9, 0.999),
               eps: float = 1e-8,
               weight_decay: float = 0.0) -> Dict[str, np.ndarray]:
    """One AdamW update. Returns the new parameter values and advances
    `state`. A missing gradient counts as zero.

    p <- p - lr (m_hat / (sqrt(v_hat) + eps) + weight_decay p)
    """
    beta1, beta2 = betas
    state.step += 1
    correction1 = 1 - beta1**state.step
    correction2 = 1 - beta2**state.step
    updated = {}
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param)
        elif grad.shape != param.shape:
            raise ShapeError(f"{name}: gradient {grad.shape} for parameter "
                             f"{param.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            m = np.zeros_like(param)
            v = np.zeros_like(param)
        elif m.shape != param.shape or v.shape != param.shape:
            raise ShapeError(f"{name}: moments do not fit {param.shape}")
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        state.m[name], state.v[name] = m, v
        updated[name] = (param - lr *
                         (m_hat /
                          (np.sqrt(v_hat) + eps) + weight_decay * param)
                         ).astype(param.dtype)
    return updated


def clip_grad_norm(tensors: Sequence[Tensor], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most `max_norm`,
    returns the norm before clipping. max_norm 0 only measures."""
    grads = [t.grad for t in tensors if t.grad is not None]
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64)**2))
                         for g in grads))
    if not math.isfinite(norm):
        raise NumericalError("Gradient norm is not finite")
    if 0 < max_norm < norm:
        factor = max_norm / norm
        for tensor in tensors:
            if tensor.grad is not None:
                tensor.grad = (tensor.grad * factor).astype(tensor.grad.dtype)
    return norm


class AdamW:
    """AdamW over named tensors, usually `Module.named_parameters()`"""

    def __init__(self,
                 named_params: Sequence[Tuple[str, Tensor]],
                 betas: Tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8,
                 weight_decay: float = 0.0,
                 state: Optional[AdamState] = None):
        self.params: List[Tuple[str, Tensor]] = list(named_params)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = state or AdamState()

    def step(self, lr: float):
        """Apply the accumulated gradients"""
        updated = adamw_step({n: t.data for n, t in self.params},
                             {n: t.grad for n, t in self.params},
                             self.state,
                             lr,
                             betas=self.betas,
                             eps=self.eps,
                             weight_decay=self.weight_decay)
        for name, tensor in self.params:
            tensor.data = updated[name]

    def zero_grad(self):
        """Forget the gradients of every parameter"""
        for _, tensor in self.params:
            tensor.zero_grad()
