"""Slow scalar reference implementations the vectorized code is tested
against."""
import math

import numpy as np
from func_timeout import FunctionTimedOut, func_timeout  # type: ignore


def run_bounded(fct, timeout):
    """Run `fct`, fail the test when it takes longer than `timeout`."""
    try:
        return func_timeout(timeout, fct)
    except FunctionTimedOut:
        raise AssertionError(f"did not finish in {timeout} s") from None


def conv2d_loops(x, weight, bias=None, stride=1, padding=0, groups=1):
    n, channels, height, width = x.shape
    out_channels, group_channels, kh, kw = weight.shape
    per_group = out_channels // groups
    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding),
                        (padding, padding)))
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    out = np.zeros((n, out_channels, out_h, out_w))
    for b in range(n):
        for o in range(out_channels):
            group = o // per_group
            for i in range(out_h):
                for j in range(out_w):
                    total = 0.0 if bias is None else bias[o]
                    for c in range(group_channels):
                        for u in range(kh):
                            for v in range(kw):
                                total += weight[o, c, u, v] * padded[
                                    b, group * group_channels + c,
                                    i * stride + u, j * stride + v]
                    out[b, o, i, j] = total
    return out


def bilinear_point(image, gx, gy):
    """Sample one [C, H, W] image at normalized (gx, gy)."""
    _, height, width = image.shape
    px = (gx + 1) * (width - 1) / 2
    py = (gy + 1) * (height - 1) / 2
    x0, y0 = math.floor(px), math.floor(py)
    result = np.zeros(image.shape[0])
    for yi, wy in ((y0, 1 - (py - y0)), (y0 + 1, py - y0)):
        for xi, wx in ((x0, 1 - (px - x0)), (x0 + 1, px - x0)):
            if 0 <= yi < height and 0 <= xi < width:
                result += wy * wx * image[:, yi, xi]
    return result


def attention_loops(tokens, wq, bq, wk, bk, wv, bv, wo, bo, heads):
    """Residual multi-head self-attention of one [T, d] sequence."""
    count, dim = tokens.shape
    head_dim = dim // heads
    query = tokens @ wq.T + bq
    key = tokens @ wk.T + bk
    value = tokens @ wv.T + bv
    mixed = np.zeros((count, dim))
    for h in range(heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        for t in range(count):
            scores = [
                float(query[t, cols] @ key[s, cols]) / math.sqrt(head_dim)
                for s in range(count)
            ]
            top = max(scores)
            exp = [math.exp(score - top) for score in scores]
            weights = [e / sum(exp) for e in exp]
            for s in range(count):
                mixed[t, cols] += weights[s] * value[s, cols]
    return tokens + mixed @ wo.T + bo


def cim_loops(phi_c, phi_f, w_p, w_c, alpha):
    """Causal intervention on one vector, element by element."""
    dim = len(phi_c)
    pert = [sum(w_p[i, j] * phi_c[j] for j in range(dim)) for i in range(dim)]
    delta = [phi_c[i] - pert[i] for i in range(dim)]
    corr = []
    for i in range(dim):
        gate = 1 / (1 + math.exp(-alpha * phi_f[i]))
        shift = sum(w_c[i, j] * delta[j] for j in range(dim))
        corr.append(phi_c[i] - shift * gate)
    return np.array(corr)


def gelu_point(value):
    return value * 0.5 * (1 + math.erf(value / math.sqrt(2)))


def convnext_block_loops(x, block):
    """ConvNeXt block of `block`'s weights on an [N, C, H, W] array, one
    spatial position at a time after the depthwise convolution."""
    dw = block.dwconv
    mixed = conv2d_loops(x, dw.weight.data, dw.bias.data,
                         padding=dw.padding, groups=dw.groups)
    w1, b1 = block.pwconv1.weight.data, block.pwconv1.bias.data
    w2, b2 = block.pwconv2.weight.data, block.pwconv2.bias.data
    gamma, beta = block.norm.gamma.data, block.norm.beta.data
    out = np.array(x, dtype=float)
    n, channels, height, width = x.shape
    for b in range(n):
        for i in range(height):
            for j in range(width):
                pixel = mixed[b, :, i, j]
                mean = sum(pixel) / channels
                var = sum((p - mean)**2 for p in pixel) / channels
                normed = [(p - mean) / math.sqrt(var + block.norm.eps) *
                          gamma[c] + beta[c] for c, p in enumerate(pixel)]
                hidden = [
                    gelu_point(sum(w1[k, c] * normed[c]
                                   for c in range(channels)) + b1[k])
                    for k in range(len(b1))
                ]
                for c in range(channels):
                    out[b, c, i, j] += sum(
                        w2[c, k] * hidden[k] for k in range(len(hidden))) \
                        + b2[c]
    return out
