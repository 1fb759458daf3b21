"""Differentiable neural network primitives on top of `Tensor`"""
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit, ndtr  # type: ignore

from .const import LAYER_NORM_EPS
from .errors import ConfigError, ShapeError
from .tensor import Tensor

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _check_dtypes(*tensors: Optional[Tensor]):
    dtypes = {t.data.dtype for t in tensors if t is not None}
    if len(dtypes) > 1:
        raise ShapeError(f"mixed dtypes {sorted(str(d) for d in dtypes)}")


# --- activations ---


def relu(x: Tensor) -> Tensor:
    """max(x, 0)"""
    mask = x.data > 0
    return Tensor.from_op(np.where(mask, x.data, 0).astype(x.data.dtype),
                          (x, ), lambda grad: (grad * mask, ), "relu")


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function"""
    out = expit(x.data)
    return Tensor.from_op(out, (x, ),
                          lambda grad: (grad * out * (1 - out), ), "sigmoid")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with the standard normal CDF Phi"""
    cdf = ndtr(x.data)
    pdf = (_INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)).astype(
        x.data.dtype)

    def backward(grad):
        return (grad * (cdf + x.data * pdf), )

    return Tensor.from_op(x.data * cdf, (x, ), backward, "gelu")


# --- normalization ---


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by subtracting the maximum"""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=-1, keepdims=True)

    def backward(grad):
        return (out * (grad - (grad * out).sum(axis=-1, keepdims=True)), )

    return Tensor.from_op(out, (x, ), backward, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    """Logarithm of the softmax over the last axis"""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)

    def backward(grad):
        return (grad - probs * grad.sum(axis=-1, keepdims=True), )

    return Tensor.from_op(out, (x, ), backward, "log_softmax")


def layer_norm(x: Tensor,
               gamma: Tensor,
               beta: Tensor,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis with population variance, then
    scale by `gamma` and shift by `beta`"""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    size = x.shape[-1]
    if gamma.shape != (size, ) or beta.shape != (size, ):
        raise ShapeError(f"layer_norm over {size} features got gamma "
                         f"{gamma.shape} and beta {beta.shape}")
    _check_dtypes(x, gamma, beta)
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normed = centered * inv_std
    lead = tuple(range(x.ndim - 1))

    def backward(grad):
        grad_normed = grad * gamma.data
        grad_x = inv_std / size * (
            size * grad_normed - grad_normed.sum(axis=-1, keepdims=True) -
            normed * (grad_normed * normed).sum(axis=-1, keepdims=True))
        return (grad_x, (grad * normed).sum(axis=lead),
                grad.sum(axis=lead))

    out = normed * gamma.data + beta.data
    return Tensor.from_op(out.astype(x.data.dtype), (x, gamma, beta),
                          backward, "layer_norm")


# --- pooling ---


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes of an [N, C, H, W] map"""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects [N,C,H,W], got {x.shape}")
    shape = x.shape
    area = shape[2] * shape[3]

    def backward(grad):
        return (np.broadcast_to(grad[:, :, None, None] / area,
                                shape).copy(), )

    return Tensor.from_op(x.data.sum(axis=(2, 3)) / area, (x, ), backward,
                          "global_avg_pool")


# --- convolution ---


def _tap_slice(offset: int, stride: int, count: int) -> slice:
    return slice(offset, offset + stride * (count - 1) + 1, stride)


def conv2d(x: Tensor,
           weight: Tensor,
           bias: Optional[Tensor] = None,
           stride: int = 1,
           padding: int = 0,
           groups: int = 1) -> Tensor:
    """2D cross-correlation with zero padding

    :param x: input [N, C_in, H, W]
    :param weight: kernel [C_out, C_in / groups, kh, kw]
    :param bias: optional [C_out]
    :param groups: C_in for a depthwise convolution
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d of {x.shape} with kernel {weight.shape}")
    n, channels, height, width = x.shape
    out_channels, group_channels, kh, kw = weight.shape
    if groups < 1 or channels % groups or out_channels % groups:
        raise ShapeError(f"{channels} input and {out_channels} output "
                         f"channels do not split into {groups} groups")
    if group_channels != channels // groups:
        raise ShapeError(f"kernel expects {group_channels} channels per "
                         f"group, input has {channels // groups}")
    if bias is not None and bias.shape != (out_channels, ):
        raise ShapeError(f"conv2d bias {bias.shape}, expected "
                         f"({out_channels},)")
    _check_dtypes(x, weight, bias)
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"kernel {kh}x{kw} does not fit {height}x{width} "
                         f"with padding {padding}")

    per_group = out_channels // groups
    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding),
                             (padding, padding)))
    grouped = padded.reshape(n, groups, group_channels, *padded.shape[2:])
    kernel = weight.data.reshape(groups, per_group, group_channels, kh, kw)
    depthwise = group_channels == 1 and per_group == 1

    def taps():
        for i in range(kh):
            for j in range(kw):
                yield i, j, _tap_slice(i, stride, out_h), \
                    _tap_slice(j, stride, out_w)

    out = np.zeros((n, groups, per_group, out_h, out_w), dtype=x.data.dtype)
    for i, j, rows, cols in taps():
        window = grouped[:, :, :, rows, cols]
        tap = kernel[:, :, :, i, j]
        if depthwise:
            out += window * tap[None, :, :, None, None]
        elif groups == 1:
            out[:, 0] += np.einsum("nchw,oc->nohw", window[:, 0], tap[0],
                                   optimize=True)
        else:
            out += np.einsum("ngchw,goc->ngohw", window, tap, optimize=True)
    out = out.reshape(n, out_channels, out_h, out_w)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(grad):
        grad_out = grad.reshape(n, groups, per_group, out_h, out_w)
        grad_kernel = np.zeros_like(kernel)
        grad_padded = np.zeros_like(grouped)
        for i, j, rows, cols in taps():
            window = grouped[:, :, :, rows, cols]
            tap = kernel[:, :, :, i, j]
            if depthwise:
                grad_kernel[:, 0, 0, i, j] = (
                    window[:, :, 0] * grad_out[:, :, 0]).sum(axis=(0, 2, 3))
                grad_padded[:, :, :, rows, cols] += \
                    grad_out * tap[None, :, :, None, None]
            elif groups == 1:
                grad_kernel[0, :, :, i, j] = np.einsum(
                    "nchw,nohw->oc", window[:, 0], grad_out[:, 0],
                    optimize=True)
                grad_padded[:, 0, :, rows, cols] += np.einsum(
                    "oc,nohw->nchw", tap[0], grad_out[:, 0], optimize=True)
            else:
                grad_kernel[:, :, :, i, j] = np.einsum(
                    "ngchw,ngohw->goc", window, grad_out, optimize=True)
                grad_padded[:, :, :, rows, cols] += np.einsum(
                    "goc,ngohw->ngchw", tap, grad_out, optimize=True)
        grad_x = grad_padded.reshape(padded.shape)[:, :, padding:padding +
                                                   height,
                                                   padding:padding + width]
        grad_bias = grad.sum(axis=(0, 2, 3)) if bias is not None else None
        return (np.ascontiguousarray(grad_x),
                grad_kernel.reshape(weight.shape), grad_bias)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, backward, "conv2d")


# --- resampling ---


def _pixel_coords(normalized: np.ndarray, extent: int) -> np.ndarray:
    """Map [-1, 1] onto pixel centers 0 .. extent - 1, snapping values
    within rounding noise of a pixel center onto it. A single pixel
    covers [-1, 1], anything outside lands two pixels off the image."""
    if extent == 1:
        return np.where(np.abs(normalized) <= 1, 0.0,
                        -2.0).astype(normalized.dtype)
    coords = (normalized + 1) * ((extent - 1) / 2)
    nearest = np.round(coords)
    tolerance = 16 * np.finfo(coords.dtype).eps * max(extent, 1)
    return np.where(np.abs(coords - nearest) <= tolerance, nearest, coords)


def bilinear_sample(x: Tensor, grid: Tensor) -> Tensor:
    """Sample [N, C, H, W] at normalized (x, y) locations of an
    [N, H', W', 2] grid. (-1, -1) is the center of the top-left pixel,
    (1, 1) the center of the bottom-right one. Corners outside of the
    image contribute zeros."""
    if x.ndim != 4 or grid.ndim != 4 or grid.shape[-1] != 2 \
            or grid.shape[0] != x.shape[0]:
        raise ShapeError(f"bilinear_sample of {x.shape} on grid "
                         f"{grid.shape}")
    _check_dtypes(x, grid)
    n, _, height, width = x.shape
    px = _pixel_coords(grid.data[..., 0], width)
    py = _pixel_coords(grid.data[..., 1], height)
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    wx = (px - x0).astype(x.data.dtype)
    wy = (py - y0).astype(x.data.dtype)
    batch = np.arange(n)[:, None, None]

    corners = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yi, xi = y0 + dy, x0 + dx
        valid = (yi >= 0) & (yi < height) & (xi >= 0) & (xi < width)
        yc = np.clip(yi, 0, height - 1)
        xc = np.clip(xi, 0, width - 1)
        # [N, H', W', C]
        values = x.data[batch, :, yc, xc] * valid[..., None]
        weight_y = wy if dy else 1 - wy
        weight_x = wx if dx else 1 - wx
        corners.append((yc, xc, valid, values, weight_y, weight_x, dy, dx))

    out = np.zeros(corners[0][3].shape, dtype=x.data.dtype)
    for _, _, _, values, weight_y, weight_x, _, _ in corners:
        out += values * (weight_y * weight_x)[..., None]

    def backward(grad):
        # [N, H', W', C]
        grad_hw = np.moveaxis(grad, 1, -1)
        grad_x = np.zeros_like(x.data)
        grad_px = np.zeros(px.shape, dtype=x.data.dtype)
        grad_py = np.zeros(py.shape, dtype=x.data.dtype)
        for yc, xc, valid, values, weight_y, weight_x, dy, dx in corners:
            weight = (weight_y * weight_x * valid)[..., None]
            np.add.at(grad_x, (batch, slice(None), yc, xc), grad_hw * weight)
            along = (grad_hw * values).sum(axis=-1)
            grad_px += along * weight_y * (1 if dx else -1)
            grad_py += along * weight_x * (1 if dy else -1)
        grad_grid = np.stack([grad_px * ((width - 1) / 2),
                              grad_py * ((height - 1) / 2)], axis=-1)
        return grad_x, grad_grid.astype(x.data.dtype)

    return Tensor.from_op(np.ascontiguousarray(np.moveaxis(out, -1, 1)),
                          (x, grid), backward, "bilinear_sample")


def normalized_coords(extent: int, dtype) -> np.ndarray:
    """Normalized pixel-center coordinates along one axis"""
    return np.linspace(-1.0, 1.0, extent).astype(dtype)


def affine_grid(theta: Tensor, height: int, width: int) -> Tensor:
    """Source sampling coordinates A_theta @ (x_t, y_t, 1) for every
    normalized target pixel, theta is [N, 6] holding
    (a11, a12, t_x, a21, a22, t_y)"""
    if theta.ndim != 2 or theta.shape[1] != 6:
        raise ShapeError(f"theta must be [N, 6], got {theta.shape}")
    if height < 1 or width < 1:
        raise ShapeError(f"grid size {height}x{width}")
    n = theta.shape[0]
    dtype = theta.data.dtype
    ys, xs = np.meshgrid(normalized_coords(height, dtype),
                         normalized_coords(width, dtype),
                         indexing="ij")
    target = np.stack([xs.ravel(), ys.ravel(), np.ones(height * width,
                                                       dtype=dtype)],
                      axis=-1)
    target_t = Tensor(target[None]).expand(n, height * width, 3)
    matrix = theta.reshape(n, 2, 3).permute(0, 2, 1)
    return (target_t @ matrix).reshape(n, height, width, 2)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) \
        -> Tensor:
    """x @ weight.T + bias over the last axis of x"""
    lead: Tuple[int, ...] = x.shape[:-1]
    if weight.ndim != 2 or weight.shape[1] != x.shape[-1]:
        raise ShapeError(f"linear of {x.shape} with weight {weight.shape}")
    flat = x.reshape(-1, x.shape[-1]) if x.ndim != 2 else x
    out = flat @ weight.T
    if bias is not None:
        out = out + bias.expand(out.shape)
    if x.ndim != 2:
        out = out.reshape(*lead, weight.shape[0])
    return out
