"""Tests of the attention streams."""
import numpy as np
import pytest

from agcd.debias.attention import AttentionStream, MultiHeadSelfAttention
from agcd.debias.const import DType
from agcd.debias.errors import ShapeError
from agcd.debias.tensor import Tensor
from tests.util import attention_loops

# pylint: disable=missing-function-docstring

F64 = DType.F64


@pytest.fixture
def rng():
    return np.random.default_rng(5)


def randomized(module, rng):
    for tensor in module.parameters():
        tensor.data = rng.normal(0, 0.5, size=tensor.shape)
    return module


@pytest.mark.parametrize("seed", range(20))
def test_matches_scalar_reference(seed):
    rng = np.random.default_rng(seed)
    heads = int(rng.choice([1, 2, 4]))
    dim = heads * int(rng.integers(1, 4))
    batch, count = int(rng.integers(1, 3)), int(rng.integers(1, 7))
    mhsa = randomized(MultiHeadSelfAttention(dim, heads, rng, F64), rng)
    tokens = rng.normal(size=(batch, count, dim))
    out = mhsa(Tensor(tokens)).data
    for n in range(batch):
        expected = attention_loops(tokens[n], mhsa.query.weight.data,
                                   mhsa.query.bias.data, mhsa.key.weight.data,
                                   mhsa.key.bias.data, mhsa.value.weight.data,
                                   mhsa.value.bias.data,
                                   mhsa.output.weight.data,
                                   mhsa.output.bias.data, heads)
        assert np.allclose(out[n], expected, atol=1e-12)


def test_single_token_attends_to_itself(rng):
    mhsa = randomized(MultiHeadSelfAttention(4, 2, rng, F64), rng)
    tokens = rng.normal(size=(3, 1, 4))
    out, weights = mhsa(Tensor(tokens), return_attention=True)
    assert np.array_equal(weights.data, np.ones((3, 2, 1, 1)))
    value = tokens @ mhsa.value.weight.data.T + mhsa.value.bias.data
    expected = tokens + value @ mhsa.output.weight.data.T \
        + mhsa.output.bias.data
    assert np.allclose(out.data, expected, atol=1e-12)


def test_permutation_equivariance(rng):
    mhsa = randomized(MultiHeadSelfAttention(4, 2, rng, F64), rng)
    tokens = rng.normal(size=(1, 5, 4))
    order = rng.permutation(5)
    out = mhsa(Tensor(tokens)).data
    permuted = mhsa(Tensor(tokens[:, order])).data
    assert np.allclose(permuted, out[:, order], atol=1e-12)


def test_attention_rows_sum_to_one(rng):
    mhsa = randomized(MultiHeadSelfAttention(4, 2, rng, F64), rng)
    _, weights = mhsa(Tensor(rng.normal(size=(2, 3, 4))),
                      return_attention=True)
    assert weights.shape == (2, 2, 3, 3)
    assert np.allclose(weights.data.sum(axis=-1), 1)


def test_heads_must_divide_dim(rng):
    with pytest.raises(ShapeError):
        MultiHeadSelfAttention(6, 4, rng, F64)


def test_stream_tokens_row_major(rng):
    feature_map = Tensor(np.arange(12.0).reshape(1, 2, 2, 3))
    tokens = AttentionStream.tokens(feature_map).data
    assert tokens.shape == (1, 6, 2)
    assert tokens[0, 1].tolist() == [1.0, 7.0]


def test_stream_gate_starts_at_zero(rng):
    stream = AttentionStream(4, 2, rng, F64)
    phi_att, h = stream(Tensor(rng.normal(size=(3, 4, 2, 2))))
    assert phi_att.shape == (3, 4)
    assert h.shape == (3, )
    assert np.all(h.data == 0)


def test_disabled_stream_pools(rng):
    stream = AttentionStream(4, 2, rng, F64, enabled=False)
    feature_map = rng.normal(size=(2, 4, 3, 3))
    phi_att, _ = stream(Tensor(feature_map))
    assert np.allclose(phi_att.data, feature_map.mean(axis=(2, 3)))
    assert all(name.startswith("gate.")
               for name, _ in stream.named_parameters())
