"""Constants and enums for the debiasing network."""
from enum import Enum
from typing import Dict, NamedTuple, Tuple

import numpy as np

LOGGER_NAME = "agcd-debias"

# Tensor binary format
TENSOR_MAGIC = b"AGT1"
TENSOR_SUFFIX = ".agt"

LAYER_NORM_EPS = 1e-6
GRAD_CHECK_EPS = 1e-5
# denominator floor of the relative gradient error
GRAD_CHECK_FLOOR = 1e-8
OP_GRAD_TOLERANCE = 1e-6
MODULE_GRAD_TOLERANCE = 1e-5
# entries sampled per parameter tensor by the end-to-end check
END_TO_END_ENTRIES = 8

# (a11, a12, t_x, a21, a22, t_y)
IDENTITY_THETA = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

CONVNEXT_KERNEL = 7
CONVNEXT_EXPANSION = 4
INIT_STD = 0.02
PERTURBATION_NOISE_STD = 0.01

EMOTIONS = ("angry", "disgust", "fear", "happy", "neutral", "sad",
            "surprise")

SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.tsv"
SPEC_NAME = "spec.txt"
FACES_DIR = "faces"
CONTEXTS_DIR = "contexts"

METRICS_NAME = "metrics.csv"
METRICS_HEADER = ("epoch", "step", "lr", "train_loss", "train_acc",
                  "val_acc")
LAST_CHECKPOINT = "last.ckpt"
BEST_CHECKPOINT = "best.ckpt"

CIM_DUMP_FIELDS = ("phi_c_pert", "delta_phi_c", "gate", "phi_c_corr")


class DType(Enum):
    """Tensor element types, the value is the AGT1 dtype code."""
    F32 = 0
    F64 = 1

    @property
    def numpy(self):
        """Returns the matching numpy scalar type"""
        return np.float32 if self is DType.F32 else np.float64

    @classmethod
    def of(cls, array: np.ndarray) -> "DType":
        """Deduce the DType of a numpy array

        >>> DType.of(np.zeros(2))
        <DType.F64: 1>
        """
        if array.dtype == np.float64:
            return cls.F64
        if array.dtype == np.float32:
            return cls.F32
        raise ValueError(f"Unsupported array dtype {array.dtype}")

    @classmethod
    def parse(cls, name: str) -> "DType":
        """Parse `f32` / `f64` (case insensitive)

        >>> DType.parse("F64")
        <DType.F64: 1>
        """
        return cls[name.strip().upper()]

    def __str__(self):
        return self.name.lower()


class ExitCode(Enum):
    """Command line exit codes"""
    SUCCESS = 0
    USAGE = 1
    DATA = 2
    NUMERICAL = 3


class Switches(NamedTuple):
    """Which optional blocks of the network are active"""
    face_mhsa: bool
    context_mhsa: bool
    ag_cim: bool


# Face MHSA, context MHSA, causal intervention
ABLATIONS: Dict[str, Switches] = {
    "A": Switches(True, True, True),
    "B": Switches(False, False, True),
    "C": Switches(True, True, False),
    "D": Switches(False, True, True),
    "E": Switches(False, False, False),
}


def class_names(num_classes: int) -> Tuple[str, ...]:
    """Returns emotion names for the canonical seven classes, generic
    names otherwise

    >>> class_names(3)
    ('class_0', 'class_1', 'class_2')
    """
    if num_classes == len(EMOTIONS):
        return EMOTIONS
    return tuple(f"class_{i}" for i in range(num_classes))
