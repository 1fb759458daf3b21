"""Attention guided context debiasing for emotion recognition, at desk scale.

    Copyright (C) 2026 AGCD Debias Developers
"""
from .const import ABLATIONS, DType
from .model import AgcdNet, ModelConfig, ModelOutput
from .tensor import Tensor, no_grad

__version__ = "0.3.1"
__date__ = "19 Oct 2026"  # version date
__copyright__ = "(c) 2026 AGCD Debias Developers"
__author_name__ = "AGCD Debias Developers"
__author_email__ = "agcd-debias@users.noreply.github.com"
__author__ = f"{__author_name__} <{__author_email__}>"
__description__ = "Context debiasing network with a numpy autodiff engine"

__url__ = "https://github.com/agcd-debias/agcd-debias"

__all__ = [
    "ABLATIONS",
    "AgcdNet",
    "DType",
    "ModelConfig",
    "ModelOutput",
    "Tensor",
    "no_grad",
]
