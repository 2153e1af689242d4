"""Minibatch SGD training with a held-out validation split and early stopping."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..data.dataset import Dataset, expand_dataset
from ..data.faces import AugmentParams
from ..loss import bce_loss, per_sample_bce
from ..models.networks import InputSizeError, Model
from ..optim import OptimizerState, sgd_step
from ..tensor import derive_rng, make_rng

log = logging.getLogger(__name__)


class TrainingError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 300
    val_fraction: float = 0.1
    patience: int = 10
    threshold: float = 0.25
    learning_rate: float = 0.01
    decay: float = 1e-6
    momentum: float = 0.9
    augment_factor: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise TrainingError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.patience < 1:
            raise TrainingError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 < self.threshold < 1.0:
            raise TrainingError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise TrainingError("batch_size and max_epochs must be positive")
        if self.augment_factor < 1.0:
            raise TrainingError(f"augment_factor must be >= 1, got {self.augment_factor}")

    def optimizer_state(self) -> OptimizerState:
        return OptimizerState(self.learning_rate, self.decay, self.momentum)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float  # nan when training without validation
    train_heads: tuple
    val_heads: tuple


@dataclass
class History:
    head_names: tuple
    records: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    stopped_early: bool = False

    @property
    def val_losses(self) -> list[float]:
        return [r.val_loss for r in self.records]

    @property
    def epochs_run(self) -> int:
        return len(self.records)

    def to_tsv(self) -> str:
        cols = ["epoch", "train_loss", "val_loss"]
        if len(self.head_names) > 1:
            cols += [f"train_{h}" for h in self.head_names] + [f"val_{h}" for h in self.head_names]
        lines = ["\t".join(cols)]
        for r in self.records:
            vals = [str(r.epoch), repr(r.train_loss), repr(r.val_loss)]
            if len(self.head_names) > 1:
                vals += [repr(v) for v in r.train_heads] + [repr(v) for v in r.val_heads]
            lines.append("\t".join(vals))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_tsv())


def batch_loss(model: Model, probs: list[np.ndarray], y: np.ndarray):
    """Summed per-head loss, per-head values, and logit gradients for each head."""
    heads, grads = [], []
    for p in probs:
        v, g = bce_loss(p, y)
        heads.append(v)
        grads.append(g)
    return sum(heads), tuple(heads), grads


def dataset_loss(model: Model, data: Dataset, chunk: int = 64):
    """Mean (over samples) eval-mode loss, total and per head."""
    totals = np.zeros(model.n_heads)
    for start in range(0, len(data), chunk):
        b = data.batch(np.arange(start, min(start + chunk, len(data))))
        for h, p in enumerate(model.forward(b)):
            totals[h] += per_sample_bce(p, b.labels).sum()
    heads = tuple(float(v) for v in totals / len(data))
    return float(sum(heads)), heads


def check_compatible(model: Model, data: Dataset) -> None:
    if data.size != model.size:
        raise InputSizeError(f"model expects {model.size}x{model.size} faces, dataset has "
                             f"{data.size}x{data.size}")
    if data.n_herbs != model.n_herbs:
        raise InputSizeError(f"model has {model.n_herbs} outputs, dataset has "
                             f"{data.n_herbs} herbs")


def fit(model: Model, train_set: Dataset, val_set: Optional[Dataset], config: TrainConfig,
        rng: np.random.Generator,
        stop_when: Optional[Callable[[Model, EpochRecord], bool]] = None) -> History:
    """Train in place.  With ``val_set`` the best-validation parameters are restored."""
    if len(train_set) == 0:
        raise TrainingError("training set is empty")
    if config.batch_size > len(train_set):
        raise TrainingError(f"batch size {config.batch_size} exceeds the "
                            f"{len(train_set)} training samples")
    check_compatible(model, train_set)
    opt = config.optimizer_state()
    params = model.named_parameters()
    history = History(model.head_names)
    best, best_state, wait = math.inf, None, 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_set))
        total, heads_sum = 0.0, np.zeros(model.n_heads)
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            b = train_set.batch(idx)
            probs = model.forward(b, train=True, rng=rng)
            loss, heads, grads = batch_loss(model, probs, b.labels)
            model.backward(grads)
            sgd_step(params, model.named_grads(), opt)
            total += loss * len(idx)
            heads_sum += np.asarray(heads) * len(idx)
        train_loss = total / len(order)
        if val_set is not None:
            val_loss, val_heads = dataset_loss(model, val_set)
        else:
            val_loss, val_heads = math.nan, ()
        rec = EpochRecord(epoch, train_loss, val_loss,
                          tuple(float(h) for h in heads_sum / len(order)), val_heads)
        history.records.append(rec)
        log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        if val_set is not None:
            if val_loss < best:
                best, wait, history.best_epoch = val_loss, 0, epoch
                best_state = model.state_dict()
            else:
                wait += 1
                if wait >= config.patience:
                    history.stopped_early = True
                    break
        if stop_when is not None and stop_when(model, rec):
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        history.best_epoch = history.records[-1].epoch
    return history


def split_train_val(data: Dataset, val_fraction: float, rng: np.random.Generator):
    """Shuffle and hold out ``val_fraction`` of the samples (at least one)."""
    if len(data) < 2:
        raise TrainingError(f"need at least 2 samples to hold out validation, got {len(data)}")
    perm = rng.permutation(len(data))
    n_val = min(max(1, int(round(val_fraction * len(data)))), len(data) - 1)
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


def train(model: Model, dataset: Dataset, config: TrainConfig,
          augment_params: AugmentParams = AugmentParams()) -> tuple[Model, History]:
    """Hold out validation, optionally expand the rest by augmentation, then fit.

    Only the fitting portion is expanded, so validation never sees augmented
    copies of its own faces.
    """
    if len(dataset) == 0:
        raise TrainingError("dataset is empty")
    check_compatible(model, dataset)
    rng = make_rng(config.seed)
    fit_set, val_set = split_train_val(dataset, config.val_fraction, rng)
    if config.augment_factor > 1.0:
        fit_set = expand_dataset(fit_set, config.augment_factor,
                                 derive_rng(config.seed, 1), augment_params)
    history = fit(model, fit_set, val_set, config, rng)
    return model, history
