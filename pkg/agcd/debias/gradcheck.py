"""Finite difference verification of the autodiff gradients.

`grad_check` compares the gradients of a scalar function of some tensors
against central differences. The named checks below run it over every
differentiable operation and model block in f64.
"""
from logging import getLogger
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from . import functional as F
from .attention import AttentionStream, MultiHeadSelfAttention
from .cim import AgCim
from .const import (
    END_TO_END_ENTRIES,
    GRAD_CHECK_EPS,
    GRAD_CHECK_FLOOR,
    LOGGER_NAME,
    MODULE_GRAD_TOLERANCE,
    OP_GRAD_TOLERANCE,
    DType,
)
from .encoder import EncoderConfig, HybridConvNeXt
from .model import AgcdNet, ModelConfig
from .nn import Module
from .tensor import Tensor, matmul, no_grad, parameter

log = getLogger(LOGGER_NAME)

F64 = DType.F64


def grad_check(f: Callable[[], Tensor],
               params: Sequence[Tensor],
               eps: float = GRAD_CHECK_EPS,
               max_entries: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> float:
    """Largest relative error between autodiff and central differences.

    The error of one entry is |a - n| / max(|a|, |n|, 1e-8). A parameter
    without a gradient counts as all zeros. With `max_entries`, at most that
    many randomly chosen entries of each parameter are perturbed.
    """
    for tensor in params:
        tensor.zero_grad()
    f().backward()
    analytic = [
        tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        for tensor in params
    ]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    with no_grad():
        for tensor, grad in zip(params, analytic):
            flat = tensor.data.reshape(-1)
            indices = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                indices = rng.choice(flat.size, size=max_entries,
                                     replace=False)
            for index in indices:
                original = flat[index]
                flat[index] = original + eps
                plus = f().item()
                flat[index] = original - eps
                minus = f().item()
                flat[index] = original
                numeric = (plus - minus) / (2 * eps)
                exact = float(grad.reshape(-1)[index])
                error = abs(exact - numeric) / max(abs(exact), abs(numeric),
                                                   GRAD_CHECK_FLOOR)
                worst = max(worst, error)
    return worst


def jitter_parameters(module: Module, rng: np.random.Generator,
                      scale: float = 0.1):
    """Add noise to every parameter, moving zero initialized layers and
    exact identities away from the kinks of relu, abs and the sampler"""
    for tensor in module.parameters():
        tensor.data = tensor.data + rng.normal(0.0, scale, tensor.shape)


def _leaf(rng: np.random.Generator, *shape) -> Tensor:
    return parameter(rng.normal(size=shape), F64)


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    """Random linear functional of `out`, an O(1) scalar"""
    return (out * Tensor(weights)).sum()


def _check_all(cases: Sequence, rng: np.random.Generator,
               max_entries: Optional[int] = None) -> float:
    """cases are (function of the inputs, input tensors)"""
    worst = 0.0
    for op, inputs in cases:
        probe = op(*inputs)
        weights = rng.normal(size=probe.shape)
        worst = max(
            worst,
            grad_check(lambda op=op, inputs=inputs, weights=weights:
                       _weighted(op(*inputs), weights),
                       inputs,
                       max_entries=max_entries,
                       rng=rng))
    return worst


def check_matmul(rng: np.random.Generator) -> float:
    """Matrix products of three shapes"""
    return _check_all([(matmul, (_leaf(rng, m, k), _leaf(rng, k, n)))
                       for m, k, n in ((1, 1, 1), (3, 4, 2), (5, 2, 6))] +
                      [(matmul, (_leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 3)))],
                      rng)


def check_conv2d(rng: np.random.Generator) -> float:
    """Dense, strided, grouped and depthwise convolutions"""
    cases = []
    for (n, c_in, c_out, size, kernel, stride, padding,
         groups) in ((1, 1, 1, 4, 3, 1, 1, 1), (2, 3, 2, 5, 3, 2, 0, 1),
                     (1, 4, 4, 6, 3, 1, 1, 4), (2, 4, 6, 5, 2, 1, 1, 2)):
        cases.append((lambda x, w, b, s=stride, p=padding, g=groups:
                      F.conv2d(x, w, b, stride=s, padding=p, groups=g),
                      (_leaf(rng, n, c_in, size, size),
                       _leaf(rng, c_out, c_in // groups, kernel, kernel),
                       _leaf(rng, c_out))))
    return _check_all(cases, rng)


def check_layer_norm(rng: np.random.Generator) -> float:
    """LayerNorm over the last axis of three shapes"""
    return _check_all([(F.layer_norm, (_leaf(rng, *shape),
                                       _leaf(rng, shape[-1]),
                                       _leaf(rng, shape[-1])))
                       for shape in ((4, ), (3, 5), (2, 3, 6))], rng)


def check_activations(rng: np.random.Generator) -> float:
    """gelu, relu and sigmoid"""
    return _check_all([(op, (_leaf(rng, *shape), ))
                       for op in (F.gelu, F.relu, F.sigmoid)
                       for shape in ((5, ), (3, 4), (2, 2, 3))], rng)


def check_softmax(rng: np.random.Generator) -> float:
    """softmax and log_softmax over the last axis"""
    return _check_all([(op, (_leaf(rng, *shape), ))
                       for op in (F.softmax, F.log_softmax)
                       for shape in ((4, ), (3, 5), (2, 3, 2))], rng)


def check_pool(rng: np.random.Generator) -> float:
    """Global average pooling"""
    return _check_all([(F.global_avg_pool, (_leaf(rng, *shape), ))
                       for shape in ((1, 1, 1, 1), (2, 3, 4, 4),
                                     (1, 2, 3, 5))], rng)


def check_bilinear(rng: np.random.Generator) -> float:
    """Bilinear sampling with respect to image and grid, some points fall
    outside of the image"""
    cases = []
    for n, c, h, w, h_out, w_out in ((1, 1, 2, 2, 3, 3), (2, 3, 4, 5, 3, 4),
                                     (1, 2, 6, 4, 5, 5)):
        grid = parameter(rng.uniform(-1.3, 1.3, size=(n, h_out, w_out, 2)),
                         F64)
        cases.append((F.bilinear_sample, (_leaf(rng, n, c, h, w), grid)))
    return _check_all(cases, rng)


def check_elementwise(rng: np.random.Generator) -> float:
    """Arithmetic, reductions and shape operations"""
    shape = (3, 4)
    cases = [
        (lambda a, b: a + b, (_leaf(rng, *shape), _leaf(rng, *shape))),
        (lambda a, b: a - b, (_leaf(rng, *shape), _leaf(rng, *shape))),
        (lambda a, b: a * b, (_leaf(rng, *shape), _leaf(rng, *shape))),
        (lambda a, s: a * s, (_leaf(rng, *shape), _leaf(rng))),
        (lambda a: a.scale(-2.5), (_leaf(rng, 2, 3, 2), )),
        (lambda a: a.abs(), (_leaf(rng, 5), )),
        (lambda a: a.mean(axis=1), (_leaf(rng, *shape), )),
        (lambda a: a.sum(axis=(0, 2), keepdims=True), (_leaf(rng, 2, 3,
                                                             2), )),
        (lambda a: a.reshape(6, 2).permute(1, 0), (_leaf(rng, *shape), )),
        (lambda a: a.expand(2, 3, 4), (_leaf(rng, 3, 1), )),
    ]
    return _check_all(cases, rng)


def _module_check(module: Module, forward: Callable[[], Tensor],
                  rng: np.random.Generator, max_entries: int) -> float:
    probe = forward()
    weights = rng.normal(size=probe.shape)
    return grad_check(lambda: _weighted(forward(), weights),
                      module.parameters(),
                      max_entries=max_entries,
                      rng=rng)


def check_encoder(rng: np.random.Generator) -> float:
    """Hybrid ConvNeXt with every block enabled on a 1x3x16x16 image"""
    config = EncoderConfig(patch_size=4,
                           dims=(4, 8),
                           depths=(1, 1),
                           se_reduction=2)
    encoder = HybridConvNeXt(config, rng, F64)
    jitter_parameters(encoder, rng)
    image = Tensor(rng.normal(size=(1, 3, 16, 16)), F64)
    phi_weights = rng.normal(size=(1, config.feature_dim))

    def forward():
        feature_map, phi = encoder(image)
        return feature_map + (phi * Tensor(phi_weights)).sum() \
            .reshape(1, 1, 1, 1).expand(feature_map.shape)

    return _module_check(encoder, forward, rng, max_entries=8)


def check_attention(rng: np.random.Generator) -> float:
    """Self-attention on two tokens and an attention stream"""
    mhsa = MultiHeadSelfAttention(4, 2, rng, F64)
    jitter_parameters(mhsa, rng, scale=0.5)
    tokens = _leaf(rng, 1, 2, 4)
    worst = _module_check(mhsa, lambda: mhsa(tokens), rng, max_entries=16)
    worst = max(worst,
                grad_check(lambda: (mhsa(tokens) * mhsa(tokens)).sum(),
                           [tokens]))

    stream = AttentionStream(4, 2, rng, F64)
    jitter_parameters(stream, rng, scale=0.5)
    feature_map = Tensor(rng.normal(size=(2, 4, 2, 3)), F64)

    def forward():
        phi_att, h = stream(feature_map)
        return phi_att + h.reshape(2, 1).expand(phi_att.shape)

    return max(worst, _module_check(stream, forward, rng, max_entries=16))


def check_ag_cim(rng: np.random.Generator) -> float:
    """Causal intervention with d=4, parameters and both inputs"""
    cim = AgCim(4, rng, F64)
    jitter_parameters(cim, rng, scale=0.5)
    phi_c = _leaf(rng, 3, 4)
    phi_f = _leaf(rng, 3, 4)
    weights = rng.normal(size=(3, 4))
    return grad_check(lambda: _weighted(cim(phi_c, phi_f)[0], weights),
                      cim.parameters() + [phi_c, phi_f])


def tiny_model_config() -> ModelConfig:
    """Smallest full model: one stage of width 8, three classes"""
    return ModelConfig(encoder=EncoderConfig(patch_size=4,
                                             dims=(8, ),
                                             depths=(1, ),
                                             se_reduction=4),
                       heads=2,
                       num_classes=3)


def check_end_to_end(rng: np.random.Generator) -> float:
    """Final loss of the tiny model with respect to every parameter
    tensor, `END_TO_END_ENTRIES` random entries of each"""
    model = AgcdNet(tiny_model_config(), seed=int(rng.integers(1 << 16)),
                    dtype=F64)
    jitter_parameters(model, rng)
    faces = Tensor(rng.normal(size=(4, 3, 8, 8)), F64)
    contexts = Tensor(rng.normal(size=(4, 3, 16, 16)), F64)
    labels = np.array([0, 1, 2, 1])

    def loss():
        return model.loss(model(faces, contexts), labels, 0.2).total

    return grad_check(loss, model.parameters(), max_entries=END_TO_END_ENTRIES,
                      rng=rng)


class GradCheck(NamedTuple):
    """A named check and the error it has to stay below"""
    run: Callable[[np.random.Generator], float]
    tolerance: float


CHECKS: Dict[str, GradCheck] = {
    "matmul": GradCheck(check_matmul, OP_GRAD_TOLERANCE),
    "conv2d": GradCheck(check_conv2d, OP_GRAD_TOLERANCE),
    "layer_norm": GradCheck(check_layer_norm, OP_GRAD_TOLERANCE),
    "activations": GradCheck(check_activations, OP_GRAD_TOLERANCE),
    "softmax": GradCheck(check_softmax, OP_GRAD_TOLERANCE),
    "pool": GradCheck(check_pool, OP_GRAD_TOLERANCE),
    "bilinear": GradCheck(check_bilinear, OP_GRAD_TOLERANCE),
    "elementwise": GradCheck(check_elementwise, OP_GRAD_TOLERANCE),
    "encoder": GradCheck(check_encoder, MODULE_GRAD_TOLERANCE),
    "attention": GradCheck(check_attention, MODULE_GRAD_TOLERANCE),
    "ag-cim": GradCheck(check_ag_cim, OP_GRAD_TOLERANCE),
    "end-to-end": GradCheck(check_end_to_end, MODULE_GRAD_TOLERANCE),
}


class CheckResult(NamedTuple):
    """Outcome of one named check"""
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        """The error is within tolerance"""
        return self.error <= self.tolerance


def run_checks(names: Optional[Sequence[str]] = None,
               seed: int = 0) -> List[CheckResult]:
    """Run the named checks (all by default), each from its own seed"""
    names = list(names or CHECKS)
    unknown = [name for name in names if name not in CHECKS]
    if unknown:
        raise KeyError(f"Unknown checks {', '.join(unknown)}")
    results = []
    for i, name in enumerate(names):
        check = CHECKS[name]
        error = check.run(np.random.default_rng([seed, i]))
        result = CheckResult(name, error, check.tolerance)
        log.info("gradcheck %s: max relative error %.3g (%s)", name, error,
                 "ok" if result.passed else "FAILED")
        results.append(result)
    return results
