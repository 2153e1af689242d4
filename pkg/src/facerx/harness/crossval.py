"""Five-fold evaluation protocol with disjoint fixed-size test sets."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..data.dataset import Dataset
from ..data.faces import AugmentParams
from ..models.networks import Model
from ..tensor import derive_rng
from .evaluation import EvalReport, evaluate
from .training import History, TrainConfig, train

log = logging.getLogger(__name__)

DEFAULT_TEST_SIZE = 500


class FoldPlanError(ValueError):
    pass


@dataclass
class FoldPlan:
    test: list  # per fold, sorted sample indices
    train: list

    @property
    def n_folds(self) -> int:
        return len(self.test)


def make_fold_plan(dataset: Dataset, seed: int, n_folds: int = 5,
                   test_size: Optional[int] = None) -> FoldPlan:
    """Disjoint test sets of ``test_size`` source faces each; train = complement.

    Samples are grouped by source id so augmented copies always fall in the
    same fold as the face they came from.  ``test_size`` defaults to
    ``min(500, groups // n_folds)``.
    """
    groups: dict[str, list[int]] = {}
    for i, src in enumerate(dataset.source_ids):
        groups.setdefault(src, []).append(i)
    keys = list(groups)
    if test_size is None:
        test_size = min(DEFAULT_TEST_SIZE, len(keys) // n_folds)
    if test_size < 1 or test_size * n_folds > len(keys):
        raise FoldPlanError(f"{len(keys)} source faces cannot supply {n_folds} disjoint test "
                            f"sets of {test_size}")
    perm = derive_rng(seed, 5).permutation(len(keys))
    all_idx = np.arange(len(dataset))
    tests, trains = [], []
    for k in range(n_folds):
        chosen = perm[k * test_size:(k + 1) * test_size]
        idx = np.sort(np.concatenate([groups[keys[j]] for j in chosen]))
        tests.append(idx)
        trains.append(np.setdiff1d(all_idx, idx))
    return FoldPlan(tests, trains)


@dataclass
class FoldResult:
    fold: int
    report: EvalReport
    history: History


@dataclass
class CrossValResult:
    name: str
    folds: list = field(default_factory=list)

    def _values(self, metric: str) -> np.ndarray:
        return np.array([getattr(f.report, metric) for f in self.folds])

    def mean(self, metric: str) -> float:
        return float(self._values(metric).mean())

    def std(self, metric: str) -> float:
        # population standard deviation over folds
        return float(self._values(metric).std())

    def row(self) -> str:
        cells = [f"{100 * self.mean(m):.2f} ± {100 * self.std(m):.2f}"
                 for m in ("precision", "recall", "f1")]
        return f"{self.name}\t" + "\t".join(cells)


TABLE_HEADER = "model\tprecision(%)\trecall(%)\tf1-score(%)"


def cross_validate(dataset: Dataset, config: TrainConfig,
                   model_builder: Callable[[int, int, np.random.Generator], Model],
                   name: str = "model", n_folds: int = 5, test_size: Optional[int] = None,
                   augment_params: AugmentParams = AugmentParams(),
                   plan: Optional[FoldPlan] = None) -> CrossValResult:
    """Train one fresh model per fold and evaluate it on that fold's test set.

    ``model_builder(n_herbs, size, rng)`` must return an untrained model.
    """
    plan = plan or make_fold_plan(dataset, config.seed, n_folds, test_size)
    result = CrossValResult(name)
    for k in range(plan.n_folds):
        fold_cfg = TrainConfig(**{**config.to_json(), "seed": config.seed * 1000 + k})
        model = model_builder(dataset.n_herbs, dataset.size, derive_rng(config.seed, 100 + k))
        model, history = train(model, dataset.subset(plan.train[k]), fold_cfg, augment_params)
        report = evaluate(model, dataset.subset(plan.test[k]), config.threshold, fold_id=k)
        log.info("%s fold %d: f1 %.4f after %d epochs", name, k, report.f1, history.epochs_run)
        result.folds.append(FoldResult(k, report, history))
    return result
