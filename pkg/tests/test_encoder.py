"""Tests of the hybrid ConvNeXt encoder."""
import numpy as np
import pytest

from agcd.debias.const import DType
from agcd.debias.encoder import (
    ConvNeXtBlock,
    EncoderConfig,
    HybridConvNeXt,
    SEBlock,
    SpatialTransformer,
)
from agcd.debias.errors import ConfigError, ShapeError
from agcd.debias.tensor import Tensor, parameter
from tests.util import convnext_block_loops

# pylint: disable=missing-function-docstring

F64 = DType.F64


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def test_output_shapes(rng):
    config = EncoderConfig(dims=(8, 16), depths=(1, 1))
    encoder = HybridConvNeXt(config, rng, F64)
    encoded = encoder(Tensor(rng.normal(size=(2, 3, 32, 32))))
    assert encoded.feature_map.shape == (2, 16, 4, 4)
    assert encoded.phi.shape == (2, 16)
    assert np.allclose(encoded.phi.data,
                       encoded.feature_map.data.mean(axis=(2, 3)))


def test_indivisible_input(rng):
    encoder = HybridConvNeXt(EncoderConfig(dims=(8, ), depths=(1, )), rng,
                             F64)
    with pytest.raises(ShapeError):
        encoder(Tensor(np.zeros((1, 3, 10, 12))))
    with pytest.raises(ShapeError):
        encoder(Tensor(np.zeros((1, 1, 8, 8))))


@pytest.mark.parametrize("kwargs", [
    {
        "dims": (8, 16),
        "depths": (1, )
    },
    {
        "dims": ()
    },
    {
        "se_reduction": 0
    },
    {
        "patch_size": 0
    },
])
def test_invalid_config(kwargs):
    with pytest.raises(ConfigError):
        EncoderConfig(**kwargs)


def test_stn_starts_at_identity(rng):
    stn = SpatialTransformer(3, rng, F64)
    image = Tensor(rng.normal(size=(2, 3, 8, 8)))
    theta = stn.theta(image).data
    assert np.array_equal(theta, np.tile([1, 0, 0, 0, 1, 0], (2, 1)))
    assert np.allclose(stn(image).data, image.data, atol=1e-12)


def test_stn_gradient_reaches_localization(rng):
    stn = SpatialTransformer(3, rng, F64)
    image = Tensor(rng.normal(size=(1, 3, 8, 8)))
    weights = Tensor(rng.normal(size=(1, 3, 8, 8)))
    # off the pixel grid the sampler is differentiable in theta
    stn.localization.fc2.bias.data = np.array([0.9, 0.05, 0.03, -0.02,
                                               0.95, 0.01])
    stn.localization.fc2.weight.data = rng.normal(0, 0.1, size=(6, 32))
    (stn(image) * weights).sum().backward()
    assert np.abs(stn.localization.fc2.weight.grad).sum() > 0
    assert np.abs(stn.localization.conv1.weight.grad).sum() > 0


def test_disabled_stn_passes_through(rng):
    stn = SpatialTransformer(3, rng, F64, enabled=False)
    image = Tensor(rng.normal(size=(1, 3, 4, 4)))
    assert stn(image) is image
    assert stn.parameters() == []


def test_convnext_block_keeps_shape(rng):
    block = ConvNeXtBlock(8, rng, F64)
    x = Tensor(rng.normal(size=(2, 8, 5, 5)))
    assert block(x).shape == (2, 8, 5, 5)
    with pytest.raises(ShapeError):
        block(Tensor(rng.normal(size=(2, 4, 5, 5))))


def test_convnext_block_without_projection_is_identity(rng):
    block = ConvNeXtBlock(8, rng, F64)
    block.pwconv2.weight = parameter(np.zeros((8, 32)), F64)
    block.pwconv2.bias = parameter(np.zeros(8), F64)
    x = Tensor(rng.normal(size=(2, 8, 5, 5)))
    assert np.array_equal(block(x).data, x.data)


@pytest.mark.parametrize("seed", range(3))
def test_convnext_block_matches_loops(seed):
    rng = np.random.default_rng(seed)
    block = ConvNeXtBlock(4, rng, F64)
    for tensor in block.parameters():
        tensor.data = rng.normal(0, 0.5, size=tensor.shape)
    x = rng.normal(size=(2, 4, 5, 6))
    assert np.allclose(block(Tensor(x)).data,
                       convnext_block_loops(x, block),
                       atol=1e-10)


def test_se_scales_channels(rng):
    se = SEBlock(8, 4, rng, F64)
    x = Tensor(rng.normal(size=(2, 8, 3, 3)))
    scales = se.scales(x).data
    assert scales.shape == (2, 8)
    assert np.all((scales > 0) & (scales < 1))
    assert np.allclose(se(x).data, x.data * scales[:, :, None, None])


def test_se_without_weights_halves_the_map(rng):
    se = SEBlock(8, 4, rng, F64)
    se.fc1.weight = parameter(np.zeros((2, 8)), F64)
    se.fc2.weight = parameter(np.zeros((8, 2)), F64)
    x = Tensor(rng.normal(size=(2, 8, 3, 3)))
    assert np.array_equal(se.scales(x).data, np.full((2, 8), 0.5))
    assert np.array_equal(se(x).data, 0.5 * x.data)


def test_switches_remove_parameters(rng):
    full = HybridConvNeXt(EncoderConfig(dims=(8, ), depths=(1, )), rng, F64)
    bare = HybridConvNeXt(
        EncoderConfig(dims=(8, ),
                      depths=(1, ),
                      stn_enabled=False,
                      se_enabled=False), rng, F64)
    names = {name for name, _ in full.named_parameters()}
    bare_names = {name for name, _ in bare.named_parameters()}
    assert bare_names < names
    assert not any(name.startswith("stn.") for name in bare_names)
    assert not any(".se." in name for name in bare_names)
