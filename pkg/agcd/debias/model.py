"""The two-stream context debiasing network"""
from dataclasses import dataclass, field, fields, replace
from logging import getLogger
from typing import Any, Dict, Mapping, NamedTuple

import numpy as np

from .attention import AttentionStream
from .cim import AgCim, CimTrace
from .classifier import (
    ClassifierHead,
    LossParts,
    attention_loss,
    cross_entropy_smoothed,
    final_loss,
    fuse_classify,
)
from .config import KeyValues, dataclass_from, dataclass_to_dict
from .const import ABLATIONS, LOGGER_NAME, DType
from .encoder import EncoderConfig, HybridConvNeXt
from .errors import ConfigError, ShapeError
from .nn import Module
from .tensor import Tensor

log = getLogger(LOGGER_NAME)

# file keys of EncoderConfig fields named differently
ENCODER_KEYS = {"stn_enabled": "stn", "se_enabled": "se"}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and ablation switches"""
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    heads: int = 4
    num_classes: int = 7
    face_mhsa: bool = True
    context_mhsa: bool = True
    ag_cim: bool = True
    share_encoders: bool = False

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("At least two classes are needed")
        if self.heads < 1:
            raise ConfigError("heads must be positive")
        if (self.face_mhsa or self.context_mhsa) \
                and self.encoder.feature_dim % self.heads:
            raise ConfigError(f"feature dimension "
                              f"{self.encoder.feature_dim} is not divisible "
                              f"by {self.heads} heads")

    def with_ablation(self, letter: str) -> "ModelConfig":
        """Copy with the switches of ablation config `letter`"""
        try:
            switches = ABLATIONS[letter]
        except KeyError:
            raise ConfigError(f"Unknown ablation {letter!r}") from None
        return replace(self, **switches._asdict())

    @classmethod
    def from_key_values(cls, values: KeyValues) -> "ModelConfig":
        """Parse a flat key=value file, unknown keys are an error"""
        known = [
            ENCODER_KEYS.get(item.name, item.name)
            for item in fields(EncoderConfig)
        ]
        known += [item.name for item in fields(cls) if item.name != "encoder"]
        values.check_known(known)
        encoder = dataclass_from(EncoderConfig, values, keys=ENCODER_KEYS)
        return dataclass_from(cls, values, encoder=encoder)

    @classmethod
    def from_file(cls, path: str) -> "ModelConfig":
        """Read a key=value file"""
        return cls.from_key_values(KeyValues.from_file(path))

    @classmethod
    def from_dict(cls, mapping: Mapping[str, Any]) -> "ModelConfig":
        """Parse flat values as produced by `to_dict`"""
        return cls.from_key_values(KeyValues.from_dict(mapping))

    def to_dict(self) -> Dict[str, Any]:
        """Flat values in key=value file order"""
        values = dataclass_to_dict(self.encoder, keys=ENCODER_KEYS)
        values.update(dataclass_to_dict(self))
        del values["encoder"]
        return values


class ModelOutput(NamedTuple):
    """Everything one forward pass produces"""
    logits: Tensor
    probs: Tensor
    h_face: Tensor
    h_context: Tensor
    trace: CimTrace


class AgcdNet(Module):
    """Face and context encoders, attention streams, the causal
    intervention on the context vector and the gated fusion classifier"""

    def __init__(self,
                 config: ModelConfig,
                 seed: int = 0,
                 dtype: DType = DType.F32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        dim = config.encoder.feature_dim
        self.face_encoder = HybridConvNeXt(config.encoder, rng, dtype)
        self.context_encoder = self.face_encoder if config.share_encoders \
            else HybridConvNeXt(config.encoder, rng, dtype)
        self.face_stream = AttentionStream(dim,
                                           config.heads,
                                           rng,
                                           dtype,
                                           enabled=config.face_mhsa)
        self.context_stream = AttentionStream(dim,
                                              config.heads,
                                              rng,
                                              dtype,
                                              enabled=config.context_mhsa)
        self.cim = AgCim(dim, rng, dtype, enabled=config.ag_cim)
        self.head = ClassifierHead(dim, config.num_classes, rng, dtype)
        log.debug("Built a model with %d parameters",
                  self.parameter_count())

    def forward(self, face: Tensor, context: Tensor) -> ModelOutput:  # pylint: disable=arguments-differ
        if face.shape[0] != context.shape[0]:
            raise ShapeError(f"{face.shape[0]} faces for "
                             f"{context.shape[0]} contexts")
        face_map = self.face_encoder(face).feature_map
        context_map = self.context_encoder(context).feature_map
        phi_f_att, h_face = self.face_stream(face_map)
        phi_c_att, h_context = self.context_stream(context_map)
        phi_c_corr, trace = self.cim(phi_c_att, phi_f_att)
        logits, probs = fuse_classify(phi_f_att, phi_c_corr, h_face,
                                      h_context, self.head)
        return ModelOutput(logits, probs, h_face, h_context, trace)

    @staticmethod
    def loss(output: ModelOutput, labels: np.ndarray,
             label_smoothing: float) -> LossParts:
        """Smoothed cross entropy plus the gate penalty"""
        ce = cross_entropy_smoothed(output.logits, labels, label_smoothing)
        att = attention_loss(output.h_face, output.h_context)
        return final_loss(ce, att)
