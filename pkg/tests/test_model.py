"""Tests of the assembled two-stream network."""
from dataclasses import replace

import numpy as np
import pytest

from agcd.debias import ABLATIONS, AgcdNet, DType, Tensor, no_grad
from agcd.debias.errors import ShapeError
from agcd.debias.gradcheck import tiny_model_config

# pylint: disable=missing-function-docstring


@pytest.fixture
def batch():
    rng = np.random.default_rng(17)
    return (Tensor(rng.normal(size=(4, 3, 8, 8)), DType.F32),
            Tensor(rng.normal(size=(4, 3, 16, 16)), DType.F32))


def test_forward_shapes(batch):
    model = AgcdNet(tiny_model_config())
    output = model(*batch)
    assert output.logits.shape == (4, 3)
    assert output.probs.shape == (4, 3)
    assert output.h_face.shape == (4, )
    assert output.trace.phi_c_corr.shape == (4, 8)
    assert np.allclose(output.probs.data.sum(axis=1), 1, atol=1e-6)
    assert output.logits.dtype is DType.F32


def test_initial_predictions_are_uniform(batch):
    output = AgcdNet(tiny_model_config())(*batch)
    assert np.allclose(output.probs.data, 1 / 3, atol=1e-6)


def test_same_seed_same_model():
    one = AgcdNet(tiny_model_config(), seed=4).state_dict()
    two = AgcdNet(tiny_model_config(), seed=4).state_dict()
    other = AgcdNet(tiny_model_config(), seed=5).state_dict()
    assert list(one) == list(two)
    assert all(np.array_equal(one[k], two[k]) for k in one)
    assert not all(np.array_equal(one[k], other[k]) for k in one)


@pytest.mark.parametrize("letter", list(ABLATIONS))
def test_ablations_run(batch, letter):
    config = tiny_model_config().with_ablation(letter)
    model = AgcdNet(config)
    output = model(*batch)
    loss = model.loss(output, np.array([0, 1, 2, 0]), 0.2)
    loss.total.backward()
    names = [name for name, _ in model.named_parameters()]
    assert any(n.startswith("cim.") for n in names) == config.ag_cim
    assert any(n.startswith("face_stream.mhsa.")
               for n in names) == config.face_mhsa
    assert any(n.startswith("context_stream.mhsa.")
               for n in names) == config.context_mhsa


def test_shared_encoders_halve_encoder_parameters():
    config = tiny_model_config()
    separate = AgcdNet(config)
    shared = AgcdNet(replace(config, share_encoders=True))
    encoder = separate.face_encoder.parameter_count()
    assert separate.parameter_count() - shared.parameter_count() == encoder
    assert not any(n.startswith("context_encoder.")
                   for n, _ in shared.named_parameters())


def test_batch_mismatch(batch):
    with pytest.raises(ShapeError):
        AgcdNet(tiny_model_config())(batch[0], Tensor(
            np.zeros((2, 3, 16, 16), dtype=np.float32)))


def test_no_grad_inference(batch):
    model = AgcdNet(tiny_model_config())
    with no_grad():
        output = model(*batch)
    assert not output.logits.requires_grad
