import pytest

from agcd.debias.config import TrainConfig
from agcd.debias.const import DType
from agcd.debias.data import BiasSpec, gen_dataset
from agcd.debias.gradcheck import tiny_model_config


@pytest.fixture(scope="session")
def tiny_spec():
    """Three classes, 16x16 contexts with 8x8 faces."""
    return BiasSpec(num_classes=3,
                    rho_train=0.9,
                    n_train=48,
                    n_val=12,
                    n_test=24,
                    image_size=16,
                    face_size=8,
                    seed=3)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory, tiny_spec):
    """Generated once per session, tests must not write into it."""
    return gen_dataset(tiny_spec, str(tmp_path_factory.mktemp("tiny_data")))


@pytest.fixture()
def model_cfg():
    return tiny_model_config()


@pytest.fixture()
def train_cfg():
    """A few fast f64 epochs."""
    return TrainConfig(lr_base=1e-3,
                       batch_size=16,
                       epochs=2,
                       t_0=2,
                       dtype=DType.F64,
                       prefetch=1)
