"""Synthetic face/context pairs with a planted context bias.

Every sample draws a label, a background class equal to the label with
probability rho (otherwise one of the other classes) and a face class
equal to the label with probability 1 - face_noise. Faces are colored
oriented bars, backgrounds are class keyed gratings. The context image
has the face box zeroed, so it carries no face signal.

Each sample has its own random stream derived from (seed, split, index),
so generation order does not change a single byte.
"""
import colorsys
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from logging import getLogger
from queue import Empty, Queue
from typing import (
    Any,
    Dict,
    Iterable,
    Iterator,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Tuple,
)

import numpy as np

from .config import KeyValues, dataclass_from, dataclass_to_dict, to_text
from .const import (
    CONTEXTS_DIR,
    FACES_DIR,
    LOGGER_NAME,
    MANIFEST_NAME,
    SPEC_NAME,
    SPLITS,
    TENSOR_SUFFIX,
)
from .errors import ConfigError, DataError
from .serial import load_tensor, save_tensor
from .util import rng_for

log = getLogger(LOGGER_NAME)

CHANNELS = 3
# slack for rho = 1/K written with limited precision
RHO_TOLERANCE = 1e-9


# pylint: disable=too-many-instance-attributes
@dataclass(frozen=True)
class BiasSpec:
    """What to generate. rho_val defaults to rho_train, rho_test to 1/K
    (background independent of the label)."""
    num_classes: int = 7
    rho_train: float = 0.9
    rho_val: Optional[float] = None
    rho_test: Optional[float] = None
    face_noise: float = 0.1
    n_train: int = 7000
    n_val: int = 1000
    n_test: int = 2000
    image_size: int = 64
    face_size: int = 32
    pixel_noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        k = self.num_classes
        if k < 2:
            raise ConfigError("At least two classes are needed")
        for split in SPLITS:
            rho = self.rho(split)
            if not 1 / k - RHO_TOLERANCE <= rho <= 1:
                raise ConfigError(f"rho of {split} is {rho}, it has to lie "
                                  f"in [1/{k}, 1]")
            if self.count(split) < k:
                raise ConfigError(f"{split} needs at least {k} samples")
        if not 0 <= self.face_noise < 0.5:
            raise ConfigError(f"face_noise {self.face_noise} is outside of "
                              f"[0, 0.5)")
        if self.pixel_noise < 0:
            raise ConfigError("pixel_noise must not be negative")
        if not 4 <= self.face_size < self.image_size:
            raise ConfigError(f"face_size {self.face_size} has to be at "
                              f"least 4 and below image_size "
                              f"{self.image_size}")

    def rho(self, split: str) -> float:
        """How often the background class equals the label"""
        if split == "train":
            return self.rho_train
        if split == "val":
            return self.rho_train if self.rho_val is None else self.rho_val
        if split == "test":
            return 1 / self.num_classes if self.rho_test is None \
                else self.rho_test
        raise ConfigError(f"Unknown split {split!r}")

    def count(self, split: str) -> int:
        """Number of samples of `split`"""
        return {
            "train": self.n_train,
            "val": self.n_val,
            "test": self.n_test
        }[split]

    @classmethod
    def from_key_values(cls, values: KeyValues) -> "BiasSpec":
        """Parse, unknown keys are an error"""
        values.check_known(item.name for item in fields(cls))
        return dataclass_from(cls, values)

    @classmethod
    def from_file(cls, path: str) -> "BiasSpec":
        """Read a key=value file"""
        return cls.from_key_values(KeyValues.from_file(path))

    @classmethod
    def from_dict(cls, mapping: Mapping[str, Any]) -> "BiasSpec":
        """Parse already split values"""
        return cls.from_key_values(KeyValues.from_dict(mapping))

    def to_dict(self) -> Dict[str, Any]:
        """Values in key=value file order"""
        return dataclass_to_dict(self)


class Sample(NamedTuple):
    """One generated pair"""
    face: np.ndarray
    context: np.ndarray
    label: int
    context_class: int


# --- rendering ---


def face_color(cls: int, num_classes: int) -> np.ndarray:
    """RGB of the glyph of class `cls`, hues spread over the circle"""
    return np.array(colorsys.hsv_to_rgb(cls / num_classes, 0.9, 1.0))


def face_glyph(cls: int,
               num_classes: int,
               size: int,
               shift: Tuple[int, int] = (0, 0)) -> np.ndarray:
    """Noise free [3, size, size] glyph: a bar at angle pi * cls / K in
    the class color, moved by `shift` (rows, columns)"""
    angle = np.pi * cls / num_classes
    center = (size - 1) / 2
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    y = rows - center - shift[0]
    x = cols - center - shift[1]
    along = x * np.cos(angle) + y * np.sin(angle)
    across = -x * np.sin(angle) + y * np.cos(angle)
    mask = (np.abs(across) <= size / 10) & (np.abs(along) <= size * 0.4)
    return face_color(cls, num_classes)[:, None, None] * mask[None]


def background(cls: int, num_classes: int, size: int,
               phase: float) -> np.ndarray:
    """Noise free [3, size, size] grating, frequency and orientation are
    keyed by the class"""
    angle = np.pi * (cls + 0.5) / num_classes
    cycles = 2 + cls % 4
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64) / size
    wave = np.sin(2 * np.pi * cycles *
                  (cols * np.cos(angle) + rows * np.sin(angle)) + phase)
    tint = np.array([0.5, 0.4, 0.3])[:, None, None]
    return 0.5 + tint * wave[None]


def _other_class(label: int, num_classes: int,
                 rng: np.random.Generator) -> int:
    return int((label + 1 + rng.integers(num_classes - 1)) % num_classes)


def make_sample(spec: BiasSpec, split: str, index: int) -> Sample:
    """Sample `index` of `split`, a pure function of its arguments"""
    rng = rng_for(spec.seed, SPLITS.index(split), index)
    k = spec.num_classes
    label = int(rng.integers(k))
    context_class = label if rng.random() < spec.rho(split) \
        else _other_class(label, k, rng)
    face_class = _other_class(label, k, rng) \
        if rng.random() < spec.face_noise else label

    shift = tuple(int(s) for s in rng.integers(-1, 2, size=2))
    face = face_glyph(face_class, k, spec.face_size, shift)  # type: ignore
    face = face + rng.normal(0.0, spec.pixel_noise, size=face.shape)

    context = background(context_class, k, spec.image_size,
                         rng.uniform(0, 2 * np.pi))
    context = context + rng.normal(0.0, spec.pixel_noise,
                                   size=context.shape)
    top, left = rng.integers(0, spec.image_size - spec.face_size + 1, size=2)
    context[:, top:top + spec.face_size, left:left + spec.face_size] = 0
    return Sample(face.astype(np.float32), context.astype(np.float32), label,
                  context_class)


# --- persistence ---


def _file_name(index: int) -> str:
    return f"{index:06d}{TENSOR_SUFFIX}"


def _write_split(spec: BiasSpec, split: str, out_dir: str, workers: int):
    split_dir = os.path.join(out_dir, split)
    for sub in (FACES_DIR, CONTEXTS_DIR):
        os.makedirs(os.path.join(split_dir, sub), exist_ok=True)

    def write(index: int) -> str:
        sample = make_sample(spec, split, index)
        name = _file_name(index)
        face_file = f"{FACES_DIR}/{name}"
        context_file = f"{CONTEXTS_DIR}/{name}"
        save_tensor(os.path.join(split_dir, face_file), sample.face)
        save_tensor(os.path.join(split_dir, context_file), sample.context)
        return (f"{index:06d}\t{face_file}\t{context_file}\t"
                f"{sample.label}\t{sample.context_class}\n")

    indices = range(spec.count(split))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            lines = list(pool.map(write, indices))
    else:
        lines = [write(index) for index in indices]
    with open(os.path.join(split_dir, MANIFEST_NAME), "w",
              encoding="utf-8") as manifest:
        manifest.writelines(lines)
    log.info("Generated %d %s samples with rho %.4f in %s", len(lines),
             split, spec.rho(split), split_dir)


def gen_dataset(spec: BiasSpec, out_dir: str, workers: int = 1) -> str:
    """Write every split of `spec` below `out_dir`, returns `out_dir`"""
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, SPEC_NAME), "w",
                  encoding="utf-8") as file:
            file.write(to_text(spec.to_dict()))
        for split in SPLITS:
            _write_split(spec, split, out_dir, workers)
    except OSError as err:
        raise DataError(err.strerror or str(err),
                        path=err.filename or out_dir) from None
    return out_dir


class Batch(NamedTuple):
    """Stacked samples"""
    faces: np.ndarray
    contexts: np.ndarray
    labels: np.ndarray
    context_classes: np.ndarray
    indices: np.ndarray


class Dataset:
    """One split held in memory, in manifest order"""

    # pylint: disable=too-many-arguments
    def __init__(self, faces: np.ndarray, contexts: np.ndarray,
                 labels: np.ndarray, context_classes: np.ndarray,
                 num_classes: int, sample_ids: Optional[List[str]] = None):
        self.faces = faces
        self.contexts = contexts
        self.labels = labels
        self.context_classes = context_classes
        self.num_classes = num_classes
        self.sample_ids = sample_ids or [f"{i:06d}" for i in range(len(labels))]

    def __len__(self):
        return len(self.labels)

    def batch(self, indices: np.ndarray) -> Batch:
        """Samples at `indices`"""
        return Batch(self.faces[indices], self.contexts[indices],
                     self.labels[indices], self.context_classes[indices],
                     indices)

    def order(self, shuffle: bool = False, seed: int = 0,
              epoch: int = 0) -> np.ndarray:
        """Manifest order or a permutation drawn from (seed, epoch)"""
        if not shuffle:
            return np.arange(len(self))
        return rng_for(seed, epoch).permutation(len(self))

    def batches(self,
                batch_size: int,
                shuffle: bool = False,
                seed: int = 0,
                epoch: int = 0) -> Iterator[Batch]:
        """Consecutive batches, the last one may be smaller"""
        if batch_size < 1:
            raise ConfigError("batch_size must be positive")
        order = self.order(shuffle, seed, epoch)
        for start in range(0, len(order), batch_size):
            yield self.batch(order[start:start + batch_size])


def read_spec(path: str) -> BiasSpec:
    """The BiasSpec stored at a dataset root"""
    spec_path = os.path.join(path, SPEC_NAME)
    if not os.path.exists(spec_path):
        raise DataError("Dataset description is missing", path=spec_path)
    return BiasSpec.from_file(spec_path)


def _parse_manifest(manifest: str, num_classes: int) \
        -> List[Tuple[str, str, str, int, int]]:
    rows = []
    with open(manifest, "r", encoding="utf-8") as file:
        for number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise DataError(f"line {number} has {len(parts)} fields "
                                f"instead of 5", path=manifest)
            try:
                label, context_class = int(parts[3]), int(parts[4])
            except ValueError:
                raise DataError(f"line {number} has a non integer label",
                                path=manifest) from None
            for value in (label, context_class):
                if not 0 <= value < num_classes:
                    raise DataError(f"line {number}: class {value} is "
                                    f"outside of [0, {num_classes})",
                                    path=manifest)
            rows.append((parts[0], parts[1], parts[2], label, context_class))
    return rows


def _stack(arrays: List[np.ndarray], files: List[str]) -> np.ndarray:
    shape = arrays[0].shape
    for array, file in zip(arrays, files):
        if array.shape != shape or array.ndim != 3 \
                or array.shape[0] != CHANNELS:
            raise DataError(f"tensor of shape {array.shape}, expected "
                            f"[{CHANNELS}, H, W] like {shape}", path=file)
    return np.stack(arrays)


def load_dataset(path: str, split: str) -> Dataset:
    """Load one split of a generated dataset"""
    if split not in SPLITS:
        raise ConfigError(f"Unknown split {split!r}")
    spec = read_spec(path)
    split_dir = os.path.join(path, split)
    manifest = os.path.join(split_dir, MANIFEST_NAME)
    if not os.path.exists(manifest):
        raise DataError("Manifest is missing", path=manifest)
    rows = _parse_manifest(manifest, spec.num_classes)
    if not rows:
        raise DataError("Manifest is empty", path=manifest)
    face_files = [os.path.join(split_dir, row[1]) for row in rows]
    context_files = [os.path.join(split_dir, row[2]) for row in rows]
    faces = _stack([load_tensor(f) for f in face_files], face_files)
    contexts = _stack([load_tensor(f) for f in context_files],
                      context_files)
    log.debug("Loaded %d %s samples from %s", len(rows), split, path)
    return Dataset(faces, contexts,
                   np.array([row[3] for row in rows], dtype=np.int64),
                   np.array([row[4] for row in rows], dtype=np.int64),
                   spec.num_classes, [row[0] for row in rows])


class BiasReport(NamedTuple):
    """Empirical context bias of a split"""
    rho: float
    # rows are labels, columns background classes
    table: np.ndarray
    counts: np.ndarray


def measure_bias(dataset: Dataset) -> BiasReport:
    """How often the background class equals the label"""
    k = dataset.num_classes
    table = np.zeros((k, k), dtype=np.int64)
    np.add.at(table, (dataset.labels, dataset.context_classes), 1)
    rho = float(np.trace(table)) / max(len(dataset), 1)
    return BiasReport(rho, table, table.sum(axis=1))


class Prefetcher:
    """Iterate `source` on a background thread, at most `depth` items
    ahead. Errors of the source are raised in the consumer."""

    _DONE = object()

    def __init__(self, source: Iterable, depth: int = 2):
        self.source = source
        self.depth = depth

    def __iter__(self) -> Iterator:
        if self.depth < 1:
            yield from self.source
            return
        queue: "Queue[Any]" = Queue(maxsize=self.depth)
        stop = threading.Event()

        def produce():
            try:
                for item in self.source:
                    if stop.is_set():
                        return
                    queue.put((item, None))
            except Exception as err:  # pylint: disable=broad-except
                queue.put((self._DONE, err))
                return
            queue.put((self._DONE, None))

        thread = threading.Thread(target=produce,
                                  name="prefetch",
                                  daemon=True)
        thread.start()
        try:
            while True:
                item, error = queue.get()
                if item is self._DONE:
                    if error is not None:
                        raise error
                    return
                yield item
        finally:
            stop.set()
            while thread.is_alive():
                try:
                    queue.get_nowait()
                except Empty:
                    thread.join(0.01)
