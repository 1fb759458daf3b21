"""Self-attention over the spatial positions of a feature map"""
from logging import getLogger
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np

from . import functional as F
from .const import LOGGER_NAME, DType
from .errors import ShapeError
from .nn import Linear, Module, zeros
from .tensor import Tensor

log = getLogger(LOGGER_NAME)


class MultiHeadSelfAttention(Module):
    """Scaled dot-product attention with learned query, key, value and
    output projections, wrapped in a residual connection. There is no
    positional encoding, so permuting tokens permutes the output."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 dtype: DType):
        if heads < 1 or dim % heads:
            raise ShapeError(f"{dim} features can not be split into "
                             f"{heads} heads")
        self.heads = heads
        self.query = Linear(dim, dim, rng, dtype)
        self.key = Linear(dim, dim, rng, dtype)
        self.value = Linear(dim, dim, rng, dtype)
        self.output = Linear(dim, dim, rng, dtype)

    def _split(self, x: Tensor) -> Tensor:
        """[N, T, d] -> [N, heads, T, d / heads]"""
        n, tokens, dim = x.shape
        return x.reshape(n, tokens, self.heads,
                         dim // self.heads).permute(0, 2, 1, 3)

    # pylint: disable=arguments-differ
    def forward(self, tokens: Tensor, return_attention: bool = False) \
            -> Union[Tensor, Tuple[Tensor, Tensor]]:
        if tokens.ndim != 3 or tokens.shape[2] != self.query.weight.shape[1]:
            raise ShapeError(f"expected [N, T, {self.query.weight.shape[1]}] "
                             f"tokens, got {tokens.shape}")
        n, count, dim = tokens.shape
        query = self._split(self.query(tokens))
        key = self._split(self.key(tokens))
        value = self._split(self.value(tokens))
        scores = (query @ key.T).scale(1.0 / np.sqrt(dim // self.heads))
        weights = F.softmax(scores)
        mixed = (weights @ value).permute(0, 2, 1, 3).reshape(n, count, dim)
        out = tokens + self.output(mixed)
        if return_attention:
            return out, weights
        return out


class AttendedFeatures(NamedTuple):
    """Output of one attention stream"""
    phi_att: Tensor
    h: Tensor


class AttentionStream(Module):
    """Attention over the H*W tokens of a map, mean pooled, plus the
    scalar gate head. With attention disabled the map is average pooled."""

    def __init__(self,
                 dim: int,
                 heads: int,
                 rng: np.random.Generator,
                 dtype: DType,
                 enabled: bool = True):
        self.mhsa: Optional[MultiHeadSelfAttention] = MultiHeadSelfAttention(
            dim, heads, rng, dtype) if enabled else None
        self.gate = Linear(dim, 1, rng, dtype)
        self.gate.weight = zeros((1, dim), dtype)

    @staticmethod
    def tokens(feature_map: Tensor) -> Tensor:
        """[N, C, H, W] -> [N, H*W, C] in row-major position order"""
        if feature_map.ndim != 4:
            raise ShapeError(f"expected [N,C,H,W], got {feature_map.shape}")
        n, channels, height, width = feature_map.shape
        return feature_map.reshape(n, channels,
                                   height * width).permute(0, 2, 1)

    def forward(self, feature_map: Tensor) -> AttendedFeatures:  # pylint: disable=arguments-differ
        if self.mhsa is None:
            phi_att = F.global_avg_pool(feature_map)
        else:
            attended = self.mhsa(self.tokens(feature_map))
            phi_att = attended.mean(axis=1)
        h = self.gate(phi_att).reshape(phi_att.shape[0])
        return AttendedFeatures(phi_att, h)
