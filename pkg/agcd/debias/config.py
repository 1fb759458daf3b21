"""key=value configuration files and the training configuration"""
from configparser import ConfigParser, Error as ParserError
from dataclasses import dataclass, fields, replace
from logging import getLogger
from typing import Any, Dict, Iterable, Mapping, Optional, get_args

from .const import ABLATIONS, LOGGER_NAME, DType
from .errors import ConfigError

log = getLogger(LOGGER_NAME)

SECTION = "config"
NONE_VALUES = ("", "none", "null")


def format_value(value: Any) -> str:
    """Text form of a configuration value

    >>> format_value((32, 64))
    '32,64'
    >>> format_value(True)
    'true'
    """
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(item) for item in value)
    if value is None:
        return "none"
    return str(value)


class KeyValues:
    """Typed access to a flat key=value file.

    The text is read by `configparser` under an implicit section, so the
    usual `ConfigParser` rules for booleans, comments and whitespace hold.
    """

    def __init__(self, text: str, source: str = "<text>"):
        self.source = source
        parser = ConfigParser(interpolation=None)
        try:
            parser.read_string(f"[{SECTION}]\n{text}", source=source)
        except ParserError as err:
            raise ConfigError(f"{source}: {err}") from None
        self.section = parser[SECTION]

    @classmethod
    def from_file(cls, path: str) -> "KeyValues":
        """Read a key=value file"""
        try:
            with open(path, "r", encoding="utf-8") as file:
                return cls(file.read(), source=path)
        except OSError as err:
            raise ConfigError(f"{path}: {err.strerror or err}") from None

    @classmethod
    def from_dict(cls, mapping: Mapping[str, Any],
                  source: str = "<dict>") -> "KeyValues":
        """Wrap already split values"""
        return cls(to_text(mapping), source=source)

    def __contains__(self, key: str) -> bool:
        return key in self.section

    def keys(self) -> Iterable[str]:
        """Keys present in the file"""
        return list(self.section.keys())

    def check_known(self, known: Iterable[str]):
        """Every key must be one of `known`"""
        unknown = sorted(set(self.keys()) - set(known))
        if unknown:
            raise ConfigError(f"{self.source}: unknown keys "
                              f"{', '.join(unknown)}")

    def _fail(self, key: str, kind: str):
        raise ConfigError(f"{self.source}: {key}={self.section[key]!r} "
                          f"is not {kind}")

    def get_as(self, key: str, example: Any, optional: bool = False) -> Any:
        """Value of `key` converted to the type of `example`, `none` is
        None for optional values"""
        # pylint: disable=too-many-return-statements
        try:
            raw = self.section[key].strip()
            if optional and raw.lower() in NONE_VALUES:
                return None
            if isinstance(example, bool):
                return self.section.getboolean(key)
            if isinstance(example, DType):
                return DType.parse(raw)
            if isinstance(example, int):
                return self.section.getint(key)
            if isinstance(example, float):
                return self.section.getfloat(key)
            if isinstance(example, tuple):
                item_type = type(example[0]) if example else int
                return tuple(
                    item_type(item) for item in raw.split(",") if item)
            if example is None:
                return None if raw.lower() in NONE_VALUES else raw
            return raw
        except (ValueError, KeyError):
            return self._fail(key, f"a valid {type(example).__name__}")


def to_text(mapping: Mapping[str, Any]) -> str:
    """key=value lines

    >>> to_text({"dims": (8, 16), "stn": False})
    'dims=8,16\\nstn=false\\n'
    """
    return "".join(f"{key}={format_value(value)}\n"
                   for key, value in mapping.items())


def _optional_example(annotation) -> Any:
    """A value of the type wrapped by Optional[...], None for strings"""
    for arg in get_args(annotation):
        if arg in (int, float, bool):
            return arg()
    return None


def dataclass_from(cls, values: KeyValues,
                   keys: Optional[Mapping[str, str]] = None,
                   **overrides):
    """Build a dataclass from `values`, missing keys keep their defaults.

    :param keys: file key for fields whose key differs from the name
    """
    keys = keys or {}
    kwargs: Dict[str, Any] = {}
    for field in fields(cls):
        key = keys.get(field.name, field.name)
        if field.name in overrides or key not in values:
            continue
        example = field.default
        if example is None:
            example = _optional_example(field.type)
        kwargs[field.name] = values.get_as(key,
                                           example,
                                           optional=field.default is None)
    kwargs.update(overrides)
    return cls(**kwargs)


def dataclass_to_dict(obj, keys: Optional[Mapping[str, str]] = None) \
        -> Dict[str, Any]:
    """Field values keyed the way `dataclass_from` reads them"""
    keys = keys or {}
    return {
        keys.get(field.name, field.name): getattr(obj, field.name)
        for field in fields(obj)
        if field.init
    }


# pylint: disable=too-many-instance-attributes
@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, schedule and loop settings"""
    lr_base: float = 1e-5
    lr_min: float = 0.0
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128
    epochs: int = 30
    label_smoothing: float = 0.2
    t_0: int = 128
    t_mult: int = 2
    seed: int = 0
    dtype: DType = DType.F32
    ablation: Optional[str] = None
    clip_grad_norm: float = 1.0
    augment: bool = True
    augment_noise: float = 0.02
    prefetch: int = 2

    def __post_init__(self):
        # pylint: disable=too-many-boolean-expressions
        if not 0 <= self.lr_min < self.lr_base:
            raise ConfigError(f"Need lr_base > lr_min >= 0, got "
                              f"{self.lr_base} and {self.lr_min}")
        if self.t_0 < 1 or self.t_mult < 1:
            raise ConfigError("t_0 and t_mult must be at least 1")
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError(f"label_smoothing {self.label_smoothing} is "
                              f"outside of [0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.eps <= 0 or self.weight_decay < 0 \
                or self.clip_grad_norm < 0 or self.augment_noise < 0:
            raise ConfigError("eps must be positive, weight_decay, "
                              "clip_grad_norm and augment_noise must not "
                              "be negative")
        if self.batch_size < 1 or self.epochs < 1 or self.prefetch < 0:
            raise ConfigError("batch_size and epochs must be positive")
        if self.ablation is not None and self.ablation not in ABLATIONS:
            raise ConfigError(f"Unknown ablation {self.ablation!r}, "
                              f"choose one of {', '.join(ABLATIONS)}")

    @property
    def betas(self):
        """(beta1, beta2)"""
        return self.beta1, self.beta2

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Settings which separate the ablation configs in minutes on
        a CPU"""
        values: Dict[str, Any] = {
            "lr_base": 1e-3,
            "batch_size": 64,
            "epochs": 8
        }
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_key_values(cls, values: KeyValues) -> "TrainConfig":
        """Parse, unknown keys are an error"""
        values.check_known(field.name for field in fields(cls))
        return dataclass_from(cls, values)

    @classmethod
    def from_file(cls, path: str) -> "TrainConfig":
        """Read a key=value file"""
        return cls.from_key_values(KeyValues.from_file(path))

    @classmethod
    def from_dict(cls, mapping: Mapping[str, Any]) -> "TrainConfig":
        """Parse already split values"""
        return cls.from_key_values(KeyValues.from_dict(mapping))

    def to_dict(self) -> Dict[str, Any]:
        """Values in key=value file order"""
        return dataclass_to_dict(self)

    def with_changes(self, **changes) -> "TrainConfig":
        """Copy with some fields replaced"""
        return replace(self, **changes)
