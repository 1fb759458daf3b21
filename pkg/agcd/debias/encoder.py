"""Hybrid ConvNeXt feature encoder.

Spatial transformer on the raw image, patchify stem, ConvNeXt stages each
closed by a squeeze-and-excitation block, downsampling between stages and
a final channel LayerNorm.
"""
from dataclasses import dataclass
from logging import getLogger
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from . import functional as F
from .const import (
    CONVNEXT_EXPANSION,
    CONVNEXT_KERNEL,
    IDENTITY_THETA,
    LOGGER_NAME,
    DType,
)
from .errors import ConfigError, ShapeError
from .nn import ChannelLayerNorm, Conv2d, LayerNorm, Linear, Module
from .tensor import Tensor, parameter

log = getLogger(LOGGER_NAME)


# pylint: disable=too-many-instance-attributes
@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of one encoder stream"""
    in_channels: int = 3
    patch_size: int = 4
    dims: Tuple[int, ...] = (32, 64)
    depths: Tuple[int, ...] = (2, 2)
    se_reduction: int = 4
    stn_enabled: bool = True
    se_enabled: bool = True

    def __post_init__(self):
        if not self.dims or len(self.dims) != len(self.depths):
            raise ConfigError(f"dims {self.dims} and depths {self.depths} "
                              f"must be non-empty and of equal length")
        if min(self.dims) < 1 or min(self.depths) < 0:
            raise ConfigError("dims must be positive, depths not negative")
        if self.se_reduction < 1:
            raise ConfigError("se_reduction must be at least 1")
        if self.in_channels < 1 or self.patch_size < 1:
            raise ConfigError("in_channels and patch_size must be positive")

    @property
    def feature_dim(self) -> int:
        """Channels of the final map, the dimension of phi"""
        return self.dims[-1]

    @property
    def reduction(self) -> int:
        """Total spatial downscaling of the encoder"""
        return self.patch_size * 2**(len(self.dims) - 1)

    def output_size(self, height: int, width: int) -> Tuple[int, int]:
        """Spatial size of the final map

        >>> EncoderConfig().output_size(64, 64)
        (8, 8)
        """
        if height % self.reduction or width % self.reduction:
            raise ShapeError(f"{height}x{width} is not divisible by "
                             f"{self.reduction}")
        return height // self.reduction, width // self.reduction


class LocalizationNet(Module):
    """Predicts six affine parameters per image. The last layer starts at
    zero weights with the identity as bias."""

    def __init__(self, in_channels: int, rng: np.random.Generator,
                 dtype: DType):
        self.conv1 = Conv2d(in_channels, 8, 5, rng, dtype, stride=2,
                            padding=2)
        self.conv2 = Conv2d(8, 16, 5, rng, dtype, stride=2, padding=2)
        self.fc1 = Linear(16, 32, rng, dtype)
        self.fc2 = Linear(32, 6, rng, dtype)
        self.fc2.weight = parameter(np.zeros((6, 32)), dtype)
        self.fc2.bias = parameter(IDENTITY_THETA, dtype)

    def forward(self, x: Tensor) -> Tensor:  # pylint: disable=arguments-differ
        x = F.relu(self.conv1(x))
        x = F.relu(self.conv2(x))
        x = F.relu(self.fc1(F.global_avg_pool(x)))
        return self.fc2(x)


class SpatialTransformer(Module):
    """Resample the input through a predicted affine transform"""

    def __init__(self, in_channels: int, rng: np.random.Generator,
                 dtype: DType, enabled: bool = True):
        self.enabled = enabled
        self.localization: Optional[LocalizationNet] = LocalizationNet(
            in_channels, rng, dtype) if enabled else None

    def theta(self, x: Tensor) -> Tensor:
        """[N, 6] affine parameters for `x`"""
        if self.localization is None:
            return Tensor(np.tile(np.asarray(IDENTITY_THETA,
                                             dtype=x.data.dtype),
                                  (x.shape[0], 1)))
        return self.localization(x)

    def forward(self, x: Tensor) -> Tensor:  # pylint: disable=arguments-differ
        if self.localization is None:
            return x
        grid = F.affine_grid(self.theta(x), x.shape[2], x.shape[3])
        return F.bilinear_sample(x, grid)


class ConvNeXtBlock(Module):
    """Depthwise 7x7, LayerNorm, 4x pointwise expansion, GELU,
    projection and a residual connection"""

    def __init__(self, dim: int, rng: np.random.Generator, dtype: DType):
        self.dwconv = Conv2d(dim,
                             dim,
                             CONVNEXT_KERNEL,
                             rng,
                             dtype,
                             padding=CONVNEXT_KERNEL // 2,
                             groups=dim)
        self.norm = LayerNorm(dim, dtype)
        self.pwconv1 = Linear(dim, CONVNEXT_EXPANSION * dim, rng, dtype)
        self.pwconv2 = Linear(CONVNEXT_EXPANSION * dim, dim, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:  # pylint: disable=arguments-differ
        if x.ndim != 4 or x.shape[1] != self.norm.gamma.shape[0]:
            raise ShapeError(f"block of width {self.norm.gamma.shape[0]} "
                             f"got {x.shape}")
        out = self.dwconv(x).permute(0, 2, 3, 1)
        out = self.pwconv2(F.gelu(self.pwconv1(self.norm(out))))
        return x + out.permute(0, 3, 1, 2)


class SEBlock(Module):
    """Squeeze and excitation: per channel scales s = sigmoid(W2 relu(W1 z))
    of the pooled channels z"""

    def __init__(self, channels: int, reduction: int,
                 rng: np.random.Generator, dtype: DType):
        hidden = max(channels // reduction, 1)
        self.fc1 = Linear(channels, hidden, rng, dtype, bias=False)
        self.fc2 = Linear(hidden, channels, rng, dtype, bias=False)

    def scales(self, x: Tensor) -> Tensor:
        """[N, C] excitation in (0, 1)"""
        return F.sigmoid(self.fc2(F.relu(self.fc1(F.global_avg_pool(x)))))

    def forward(self, x: Tensor) -> Tensor:  # pylint: disable=arguments-differ
        n, channels = x.shape[:2]
        scale = self.scales(x).reshape(n, channels, 1, 1)
        return x * scale.expand(x.shape)


class Downsample(Module):
    """Channel LayerNorm and a 2x2 stride 2 convolution"""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype: DType):
        self.norm = ChannelLayerNorm(in_dim, dtype)
        self.conv = Conv2d(in_dim, out_dim, 2, rng, dtype, stride=2)

    def forward(self, x: Tensor) -> Tensor:  # pylint: disable=arguments-differ
        return self.conv(self.norm(x))


class Stage(Module):
    """ConvNeXt blocks closed by an optional SE block"""

    def __init__(self, dim: int, depth: int, config: EncoderConfig,
                 rng: np.random.Generator, dtype: DType):
        self.blocks: List[ConvNeXtBlock] = [
            ConvNeXtBlock(dim, rng, dtype) for _ in range(depth)
        ]
        self.se: Optional[SEBlock] = SEBlock(
            dim, config.se_reduction, rng,
            dtype) if config.se_enabled else None

    def forward(self, x: Tensor) -> Tensor:  # pylint: disable=arguments-differ
        for block in self.blocks:
            x = block(x)
        if self.se is not None:
            x = self.se(x)
        return x


class Encoded(NamedTuple):
    """Final feature map and its pooled vector"""
    feature_map: Tensor
    phi: Tensor


class HybridConvNeXt(Module):
    """The encoder of one stream"""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator,
                 dtype: DType):
        self.config = config
        self.stn = SpatialTransformer(config.in_channels,
                                      rng,
                                      dtype,
                                      enabled=config.stn_enabled)
        self.stem = Conv2d(config.in_channels,
                           config.dims[0],
                           config.patch_size,
                           rng,
                           dtype,
                           stride=config.patch_size)
        self.stem_norm = ChannelLayerNorm(config.dims[0], dtype)
        self.stages: List[Stage] = []
        self.downsamples: List[Downsample] = []
        for i, (dim, depth) in enumerate(zip(config.dims, config.depths)):
            if i:
                self.downsamples.append(
                    Downsample(config.dims[i - 1], dim, rng, dtype))
            self.stages.append(Stage(dim, depth, config, rng, dtype))
        self.norm = ChannelLayerNorm(config.feature_dim, dtype)

    def forward(self, x: Tensor) -> Encoded:  # pylint: disable=arguments-differ
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected [N,{self.config.in_channels},H,W] "
                             f"images, got {x.shape}")
        self.config.output_size(x.shape[2], x.shape[3])
        x = self.stn(x)
        x = self.stem_norm(self.stem(x))
        for i, stage in enumerate(self.stages):
            if i:
                x = self.downsamples[i - 1](x)
            x = stage(x)
        feature_map = self.norm(x)
        return Encoded(feature_map, F.global_avg_pool(feature_map))
