"""Training, evaluation and the ablation harness"""
import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from logging import getLogger
from typing import (
    Any,
    Callable,
    Dict,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
from mypy_extensions import Arg, DefaultArg, KwArg

from .config import TrainConfig, format_value, to_text
from .const import (
    ABLATIONS,
    BEST_CHECKPOINT,
    CIM_DUMP_FIELDS,
    LAST_CHECKPOINT,
    LOGGER_NAME,
    METRICS_HEADER,
    METRICS_NAME,
    TENSOR_SUFFIX,
    DType,
    class_names,
)
from .data import Batch, Dataset, Prefetcher, load_dataset
from .errors import ConfigError, DataError, ShapeError
from .model import AgcdNet, ModelConfig
from .optim import AdamState, AdamW, clip_grad_norm, cosine_warm_restart_lr
from .serial import load_archive, save_archive, save_tensor
from .tensor import Tensor, no_grad
from .util import make_fingerprint, rng_for

# NOTE: Temporary for pylint with python3.9
# pylint: disable=unsubscriptable-object

log = getLogger(LOGGER_NAME)

PARAM_PREFIX = "param."
# random stream ids next to the (seed, epoch) shuffles
AUGMENT_STREAM = 1
EVAL_BATCH_SIZE = 256


class EpochMetrics(NamedTuple):
    """One row of metrics.csv"""
    epoch: int
    step: int
    lr: float
    train_loss: float
    train_acc: float
    val_acc: float

    def row(self) -> List[str]:
        """CSV cells, floats in their shortest exact form"""
        return [str(self.epoch), str(self.step)] + [
            repr(float(value)) for value in self[2:]
        ]


# Returning True stops the training after the epoch
EpochCallback = Callable[[
    Arg(EpochMetrics, 'metrics'),  # noqa
    DefaultArg(Optional[str], 'checkpoint'),  # noqa
    KwArg(Any),
], Optional[bool]]


def check_image_sizes(model_cfg: ModelConfig, dataset: Dataset,
                      path: Optional[str] = None):
    """Faces and contexts of `dataset` have to fit the encoder downscaling"""
    for what, images in (("face", dataset.faces),
                         ("context", dataset.contexts)):
        try:
            model_cfg.encoder.output_size(*images.shape[2:])
        except ShapeError as err:
            raise ConfigError(f"{what} images do not fit the model: "
                              f"{err}") from None
    log.debug("Image sizes of %s fit the encoder", path or "the dataset")


def config_hash(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    """sha256 of the canonical key=value text of both configs"""
    return make_fingerprint(
        to_text(model_cfg.to_dict()) + to_text(train_cfg.to_dict()))


def effective_model_config(model_cfg: ModelConfig,
                           train_cfg: TrainConfig) -> ModelConfig:
    """`model_cfg` with the ablation of `train_cfg` applied"""
    if train_cfg.ablation is None:
        return model_cfg
    return model_cfg.with_ablation(train_cfg.ablation)


@dataclass
class TrainState:
    """Everything needed to continue a run at an epoch boundary"""
    model: AgcdNet
    optimizer: AdamW
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    step: int = 0
    epoch: int = 0
    best_val: float = -1.0

    @classmethod
    def create(cls, model_cfg: ModelConfig,
               train_cfg: TrainConfig) -> "TrainState":
        """Freshly initialized model and optimizer"""
        model_cfg = effective_model_config(model_cfg, train_cfg)
        model = AgcdNet(model_cfg, seed=train_cfg.seed, dtype=train_cfg.dtype)
        optimizer = AdamW(model.named_parameters(),
                          betas=train_cfg.betas,
                          eps=train_cfg.eps,
                          weight_decay=train_cfg.weight_decay)
        return cls(model, optimizer, model_cfg, train_cfg)

    def metadata(self) -> Dict[str, Any]:
        """key=value metadata stored next to the tensors"""
        metadata: Dict[str, Any] = {
            "step": self.step,
            "epoch": self.epoch,
            "seed": self.train_cfg.seed,
            "dtype": str(self.train_cfg.dtype),
            "config_hash": config_hash(self.model_cfg, self.train_cfg),
            "best_val": repr(self.best_val),
        }
        for key, value in self.model_cfg.to_dict().items():
            metadata[f"model.{key}"] = format_value(value)
        for key, value in self.train_cfg.to_dict().items():
            metadata[f"train.{key}"] = format_value(value)
        return metadata

    def save(self, path: str):
        """Write a checkpoint archive"""
        tensors = {
            PARAM_PREFIX + name: array
            for name, array in self.model.state_dict().items()
        }
        tensors.update(self.optimizer.state.to_tensors())
        save_archive(path, tensors, self.metadata())
        log.info("Saved checkpoint %s at step %d", path, self.step)

    @classmethod
    def load(cls, path: str) -> "TrainState":
        """Restore a checkpoint written by `save`"""
        tensors, metadata = load_archive(path)
        try:
            model_cfg = ModelConfig.from_dict({
                key[len("model."):]: value
                for key, value in metadata.items() if key.startswith("model.")
            })
            train_cfg = TrainConfig.from_dict({
                key[len("train."):]: value
                for key, value in metadata.items() if key.startswith("train.")
            })
            step = int(metadata["step"])
            epoch = int(metadata["epoch"])
            best_val = float(metadata["best_val"])
        except (KeyError, ValueError) as err:
            raise DataError(f"Checkpoint metadata is incomplete: {err}",
                            path=path) from None
        if metadata.get("config_hash") != config_hash(model_cfg, train_cfg):
            raise DataError("Checkpoint configuration does not match its "
                            "hash", path=path)
        model = AgcdNet(model_cfg, seed=train_cfg.seed, dtype=train_cfg.dtype)
        model.load_state_dict({
            name[len(PARAM_PREFIX):]: array
            for name, array in tensors.items() if name.startswith(PARAM_PREFIX)
        })
        optimizer = AdamW(model.named_parameters(),
                          betas=train_cfg.betas,
                          eps=train_cfg.eps,
                          weight_decay=train_cfg.weight_decay,
                          state=AdamState.from_tensors(tensors, step))
        return cls(model, optimizer, model_cfg, train_cfg, step, epoch,
                   best_val)


def augment(batch: Batch, train_cfg: TrainConfig,
            step: int) -> Tuple[np.ndarray, np.ndarray]:
    """Joint horizontal flip of face and context plus additive noise,
    drawn from the stream of (seed, step)"""
    faces, contexts = batch.faces, batch.contexts
    if not train_cfg.augment:
        return faces, contexts
    rng = rng_for(train_cfg.seed, AUGMENT_STREAM, step)
    flip = rng.random(len(faces)) < 0.5
    faces = np.where(flip[:, None, None, None], faces[..., ::-1], faces)
    contexts = np.where(flip[:, None, None, None], contexts[..., ::-1],
                        contexts)
    if train_cfg.augment_noise > 0:
        faces = faces + rng.normal(0, train_cfg.augment_noise, faces.shape)
        contexts = contexts + rng.normal(0, train_cfg.augment_noise,
                                         contexts.shape)
    return faces, contexts


def _tensor(array: np.ndarray, dtype: DType) -> Tensor:
    return Tensor(np.ascontiguousarray(array), dtype=dtype)


def train_step(state: TrainState, batch: Batch, lr: float) \
        -> Tuple[float, int]:
    """One optimizer step, returns the batch loss and the number of
    correct predictions"""
    cfg = state.train_cfg
    faces, contexts = augment(batch, cfg, state.step)
    output = state.model(_tensor(faces, cfg.dtype),
                         _tensor(contexts, cfg.dtype))
    parts = state.model.loss(output, batch.labels, cfg.label_smoothing)
    state.optimizer.zero_grad()
    parts.total.backward()
    norm = clip_grad_norm(state.model.parameters(), cfg.clip_grad_norm)
    state.optimizer.step(lr)
    state.step += 1
    correct = int((output.probs.data.argmax(axis=1) == batch.labels).sum())
    log.debug("step %d lr %.3g loss %.5f (ce %.5f, att %.5f) grad norm %.3g",
              state.step, lr, parts.total.item(), parts.ce.item(),
              parts.att.item(), norm)
    return parts.total.item(), correct


def predict(model: AgcdNet,
            dataset: Dataset,
            dtype: DType,
            batch_size: int = EVAL_BATCH_SIZE,
            keep_trace: bool = False) \
        -> Tuple[np.ndarray, Optional[Dict[str, np.ndarray]]]:
    """Class probabilities [n, K] in manifest order and optionally the
    stacked CIM traces"""
    probs = []
    traces: Dict[str, List[np.ndarray]] = {n: [] for n in CIM_DUMP_FIELDS}
    with no_grad():
        for batch in dataset.batches(batch_size):
            output = model(_tensor(batch.faces, dtype),
                           _tensor(batch.contexts, dtype))
            probs.append(output.probs.data)
            if keep_trace:
                for name in CIM_DUMP_FIELDS:
                    traces[name].append(getattr(output.trace, name).data)
    stacked = {n: np.concatenate(a) for n, a in traces.items()} \
        if keep_trace else None
    return np.concatenate(probs), stacked


def accuracy(model: AgcdNet, dataset: Dataset, dtype: DType) -> float:
    """Fraction of correct argmax predictions"""
    probs, _ = predict(model, dataset, dtype)
    return float((probs.argmax(axis=1) == dataset.labels).mean())


def _read_metrics(path: str, epoch: int) -> List[List[str]]:
    """Rows of an existing metrics file up to `epoch`"""
    if not os.path.exists(path):
        return []
    with open(path, "r", encoding="utf-8", newline="") as file:
        rows = list(csv.reader(file))
    return [row for row in rows[1:] if row and int(row[0]) <= epoch]


def _write_metrics(path: str, rows: Sequence[Sequence[str]]):
    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        writer.writerows(rows)


class TrainResult(NamedTuple):
    """Where a training run left its artifacts"""
    metrics: List[EpochMetrics]
    best_val: float
    last_checkpoint: str
    best_checkpoint: str


# pylint: disable=too-many-arguments,too-many-locals
def train(model_cfg: Optional[ModelConfig],
          train_cfg: Optional[TrainConfig],
          data_dir: str,
          out_dir: str,
          resume: Optional[str] = None,
          epoch_cb: Optional[EpochCallback] = None) -> TrainResult:
    """Train on the train split, select on the val split.

    Writes metrics.csv, last.ckpt after every epoch and best.ckpt whenever
    the validation accuracy improves. With `resume` the configs stored in
    the checkpoint are used and the run continues after its epoch.
    """
    if resume is not None:
        state = TrainState.load(resume)
        log.info("Resuming %s at epoch %d, step %d", resume, state.epoch,
                 state.step)
    else:
        state = TrainState.create(model_cfg or ModelConfig(),
                                  train_cfg or TrainConfig())
    cfg = state.train_cfg
    train_set = load_dataset(data_dir, "train")
    val_set = load_dataset(data_dir, "val")
    if train_set.num_classes != state.model_cfg.num_classes:
        raise DataError(f"dataset has {train_set.num_classes} classes, the "
                        f"model {state.model_cfg.num_classes}",
                        path=data_dir)
    check_image_sizes(state.model_cfg, train_set, data_dir)

    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, METRICS_NAME)
    last_path = os.path.join(out_dir, LAST_CHECKPOINT)
    best_path = os.path.join(out_dir, BEST_CHECKPOINT)
    rows = _read_metrics(metrics_path, state.epoch) if resume else []
    _write_metrics(metrics_path, rows)
    history: List[EpochMetrics] = []

    for epoch in range(state.epoch + 1, cfg.epochs + 1):
        loss_sum, correct, seen, lr = 0.0, 0, 0, cfg.lr_base
        batches = train_set.batches(cfg.batch_size,
                                    shuffle=True,
                                    seed=cfg.seed,
                                    epoch=epoch)
        for batch in Prefetcher(batches, depth=cfg.prefetch):
            lr = cosine_warm_restart_lr(state.step, cfg.t_0, cfg.t_mult,
                                        cfg.lr_base, cfg.lr_min)
            loss, hits = train_step(state, batch, lr)
            loss_sum += loss * len(batch.labels)
            correct += hits
            seen += len(batch.labels)
        state.epoch = epoch
        val_acc = accuracy(state.model, val_set, cfg.dtype)
        metrics = EpochMetrics(epoch, state.step, lr, loss_sum / seen,
                               correct / seen, val_acc)
        history.append(metrics)
        rows.append(metrics.row())
        _write_metrics(metrics_path, rows)
        log.info("epoch %d step %d lr %.3g loss %.4f train acc %.4f "
                 "val acc %.4f", *metrics)
        if val_acc > state.best_val:
            state.best_val = val_acc
            state.save(best_path)
        state.save(last_path)
        if epoch_cb is not None and epoch_cb(metrics, checkpoint=last_path):
            log.info("Stopped after epoch %d on request", epoch)
            break
    return TrainResult(history, state.best_val, last_path, best_path)


def confusion_matrix(labels: np.ndarray, predictions: np.ndarray,
                     num_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row normalized matrix (rows true classes) and the raw counts. Rows
    without samples stay zero.

    >>> confusion_matrix(np.array([0, 0, 1]), np.array([0, 1, 1]), 3)[0]
    array([[0.5, 0.5, 0. ],
           [0. , 1. , 0. ],
           [0. , 0. , 0. ]])
    """
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    totals = counts.sum(axis=1, keepdims=True)
    normalized = np.divide(counts,
                           totals,
                           out=np.zeros(counts.shape),
                           where=totals > 0)
    return normalized, counts


class EvalResult(NamedTuple):
    """Outcome of `evaluate`"""
    accuracy: float
    confusion: np.ndarray
    counts: np.ndarray
    empty_rows: List[int]


def write_confusion(path: str, confusion: np.ndarray):
    """K x K CSV with a header row of class names"""
    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(class_names(len(confusion)))
        writer.writerows([repr(float(v)) for v in row] for row in confusion)


def evaluate(checkpoint: str,
             data_dir: str,
             split: str = "test",
             out_csv: Optional[str] = None,
             dump_cim: Optional[str] = None) -> EvalResult:
    """Accuracy and normalized confusion matrix of a checkpoint on a
    split, optionally dumping the CIM traces as [n, d] tensor files"""
    state = TrainState.load(checkpoint)
    dataset = load_dataset(data_dir, split)
    num_classes = state.model_cfg.num_classes
    if dataset.num_classes != num_classes:
        raise DataError(f"dataset has {dataset.num_classes} classes, the "
                        f"model {num_classes}", path=data_dir)
    check_image_sizes(state.model_cfg, dataset, data_dir)
    probs, traces = predict(state.model,
                            dataset,
                            state.train_cfg.dtype,
                            keep_trace=dump_cim is not None)
    predictions = probs.argmax(axis=1)
    confusion, counts = confusion_matrix(dataset.labels, predictions,
                                         num_classes)
    empty_rows = [i for i in range(num_classes) if counts[i].sum() == 0]
    if empty_rows:
        names = class_names(num_classes)
        log.warning("No %s samples of class %s, their rows are zero", split,
                    ", ".join(names[i] for i in empty_rows))
    result = EvalResult(float((predictions == dataset.labels).mean()),
                        confusion, counts, empty_rows)
    log.info("%s accuracy of %s: %.4f", split, checkpoint, result.accuracy)
    if out_csv is not None:
        write_confusion(out_csv, confusion)
    if dump_cim is not None and traces is not None:
        os.makedirs(dump_cim, exist_ok=True)
        for name, array in traces.items():
            save_tensor(os.path.join(dump_cim, name + TENSOR_SUFFIX), array)
        log.info("CIM traces written to %s", dump_cim)
    return result


class AblationRow(NamedTuple):
    """Test accuracies of one config over the seeds"""
    config: str
    accuracies: List[float]

    @property
    def mean(self) -> float:
        """Mean accuracy"""
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        """Population standard deviation"""
        return float(np.std(self.accuracies))

    def cells(self) -> List[str]:
        """CSV cells of the row"""
        return [self.config] + [f"{a:.4f}" for a in self.accuracies] + \
            [f"{self.mean:.4f}±{self.std:.4f}"]


def ablate(data_dir: str,
           seeds: Sequence[int],
           out_csv: str,
           model_cfg: Optional[ModelConfig] = None,
           train_cfg: Optional[TrainConfig] = None,
           work_dir: Optional[str] = None,
           configs: Sequence[str] = tuple(ABLATIONS),
           workers: int = 1) -> List[AblationRow]:
    """Train and test every ablation config for every seed.

    Runs go to `work_dir`/<config>/seed_<s>, each with its own state, so
    they may run on a pool of `workers` threads.
    """
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig.desk()
    if not seeds:
        raise DataError("No seeds to run")
    work_dir = work_dir or os.path.splitext(out_csv)[0] + "_runs"

    def run(job: Tuple[str, int]) -> float:
        letter, seed = job
        run_dir = os.path.join(work_dir, letter, f"seed_{seed}")  # type: ignore
        log.info("Ablation %s seed %d in %s", letter, seed, run_dir)
        result = train(model_cfg,
                       train_cfg.with_changes(seed=seed, ablation=letter),
                       data_dir, run_dir)
        checkpoint = result.best_checkpoint \
            if os.path.exists(result.best_checkpoint) \
            else result.last_checkpoint
        return evaluate(checkpoint, data_dir, "test").accuracy

    jobs = [(letter, seed) for letter in configs for seed in seeds]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accuracies = list(pool.map(run, jobs))
    else:
        accuracies = [run(job) for job in jobs]

    rows = [
        AblationRow(letter, accuracies[i * len(seeds):(i + 1) * len(seeds)])
        for i, letter in enumerate(configs)
    ]
    with open(out_csv, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(["config"] + [f"seed_{s}" for s in seeds] +
                        ["mean_std"])
        writer.writerows(row.cells() for row in rows)
    for row in rows:
        log.info("config %s: %.4f ± %.4f", row.config, row.mean, row.std)
    return rows
