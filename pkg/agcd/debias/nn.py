"""Parameter containers"""
from logging import getLogger
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from . import functional as F
from .const import INIT_STD, LAYER_NORM_EPS, LOGGER_NAME, DType
from .errors import DataError, ShapeError
from .tensor import Tensor, parameter

log = getLogger(LOGGER_NAME)


class Module:
    """Base of every block holding parameters.

    Parameters are the `Tensor` attributes requiring a gradient, submodules
    are `Module` attributes or lists of them. Names are dotted attribute
    paths in assignment order. A submodule reachable twice (shared weights)
    is reported once, under the first path.
    """

    def forward(self, *args, **kwargs):
        """The computation of this block"""
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _walk(self, prefix: str, seen: set) \
            -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad and id(value) not in seen:
                    seen.add(id(value))
                    yield prefix + name, value
            elif isinstance(value, Module):
                if id(value) not in seen:
                    seen.add(id(value))
                    yield from value._walk(f"{prefix}{name}.", seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module) and id(item) not in seen:
                        seen.add(id(item))
                        yield from item._walk(f"{prefix}{name}.{i}.", seen)

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        """(name, tensor) for every trainable tensor, in a stable order"""
        return list(self._walk("", set()))

    def parameters(self) -> List[Tensor]:
        """Every trainable tensor"""
        return [tensor for _, tensor in self.named_parameters()]

    def zero_grad(self):
        """Forget all accumulated gradients"""
        for tensor in self.parameters():
            tensor.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copies of the parameter values"""
        return {
            name: tensor.data.copy()
            for name, tensor in self.named_parameters()
        }

    def load_state_dict(self, state: Mapping[str, np.ndarray]):
        """Overwrite parameter values, names and shapes must match"""
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise DataError(f"State does not fit the model, missing "
                            f"{missing[:5]}, unexpected {unexpected[:5]}")
        for name, tensor in params.items():
            value = state[name]
            if value.shape != tensor.shape:
                raise ShapeError(f"{name}: stored {value.shape}, model "
                                 f"expects {tensor.shape}")
            tensor.data = np.array(value, dtype=tensor.data.dtype)

    def parameter_count(self) -> int:
        """Number of trainable scalars"""
        return sum(tensor.size for tensor in self.parameters())


def normal(rng: np.random.Generator, shape, dtype: DType,
           std: float = INIT_STD) -> Tensor:
    """Trainable tensor drawn from N(0, std^2)"""
    return parameter(rng.normal(0.0, std, size=shape), dtype)


def zeros(shape, dtype: DType) -> Tensor:
    """Trainable tensor of zeros"""
    return parameter(np.zeros(shape), dtype)


def ones(shape, dtype: DType) -> Tensor:
    """Trainable tensor of ones"""
    return parameter(np.ones(shape), dtype)


class Linear(Module):
    """y = x W^T + b over the last axis"""

    def __init__(self,
                 in_features: int,
                 out_features: int,
                 rng: np.random.Generator,
                 dtype: DType,
                 bias: bool = True):
        self.weight = normal(rng, (out_features, in_features), dtype)
        self.bias: Optional[Tensor] = zeros((out_features, ), dtype) \
            if bias else None

    def forward(self, x: Tensor) -> Tensor:  # pylint: disable=arguments-differ
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    """Wraps `functional.conv2d`"""

    # pylint: disable=too-many-arguments
    def __init__(self,
                 in_channels: int,
                 out_channels: int,
                 kernel: int,
                 rng: np.random.Generator,
                 dtype: DType,
                 stride: int = 1,
                 padding: int = 0,
                 groups: int = 1,
                 bias: bool = True):
        self.stride = stride
        self.padding = padding
        self.groups = groups
        self.weight = normal(
            rng, (out_channels, in_channels // groups, kernel, kernel),
            dtype)
        self.bias: Optional[Tensor] = zeros((out_channels, ), dtype) \
            if bias else None

    def forward(self, x: Tensor) -> Tensor:  # pylint: disable=arguments-differ
        return F.conv2d(x,
                        self.weight,
                        self.bias,
                        stride=self.stride,
                        padding=self.padding,
                        groups=self.groups)


class LayerNorm(Module):
    """Normalization over the last axis"""

    def __init__(self, size: int, dtype: DType, eps: float = LAYER_NORM_EPS):
        self.eps = eps
        self.gamma = ones((size, ), dtype)
        self.beta = zeros((size, ), dtype)

    def forward(self, x: Tensor) -> Tensor:  # pylint: disable=arguments-differ
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class ChannelLayerNorm(LayerNorm):
    """Normalization over the channel axis of an [N, C, H, W] map"""

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise ShapeError(f"expected [N,C,H,W], got {x.shape}")
        out = super().forward(x.permute(0, 2, 3, 1))
        return out.permute(0, 3, 1, 2)
