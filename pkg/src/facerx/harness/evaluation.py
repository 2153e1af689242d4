"""Threshold decoding, test-set evaluation and threshold sweeps."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..data.dataset import Dataset
from ..data.dictionary import HerbDictionary
from ..models.networks import Model
from .metrics import metrics_from_bits


def decode_indices(probabilities, t: float) -> np.ndarray:
    """Indices with probability strictly greater than ``t``."""
    return np.flatnonzero(np.asarray(probabilities) > t)


def decode_prescription(probabilities, t: float, dictionary: HerbDictionary) -> list[str]:
    return [dictionary.names[i] for i in decode_indices(probabilities, t)]


@dataclass
class EvalReport:
    threshold: float
    precision_i: np.ndarray
    recall_i: np.ndarray
    f1_i: np.ndarray
    fold_id: Optional[int] = None

    @property
    def precision(self) -> float:
        return float(np.mean(self.precision_i))

    @property
    def recall(self) -> float:
        return float(np.mean(self.recall_i))

    @property
    def f1(self) -> float:
        return float(np.mean(self.f1_i))

    def summary(self) -> dict:
        return {"threshold": self.threshold, "fold": self.fold_id, "n": int(len(self.f1_i)),
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def predict_probabilities(model: Model, data: Dataset, chunk: int = 64) -> np.ndarray:
    """Decision-head probabilities for every sample, eval mode."""
    out = np.empty((len(data), model.n_herbs), dtype=np.float64)
    for start in range(0, len(data), chunk):
        idx = np.arange(start, min(start + chunk, len(data)))
        out[idx] = model.predict(data.batch(idx))
    return out


def report_from_probabilities(probs: np.ndarray, labels: np.ndarray, t: float,
                              fold_id: Optional[int] = None) -> EvalReport:
    p, r, f = metrics_from_bits(probs > t, labels)
    return EvalReport(float(t), p, r, f, fold_id)


def evaluate(model: Model, test_set: Dataset, t: float = 0.25,
             fold_id: Optional[int] = None) -> EvalReport:
    if len(test_set) == 0:
        raise ValueError("test set is empty")
    return report_from_probabilities(predict_probabilities(model, test_set), test_set.labels,
                                     t, fold_id)


def threshold_sweep(model: Model, test_set: Dataset, ts: Sequence[float],
                    fold_id: Optional[int] = None) -> list[EvalReport]:
    ts = [float(t) for t in ts]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("thresholds must be sorted ascending")
    probs = predict_probabilities(model, test_set)
    return [report_from_probabilities(probs, test_set.labels, t, fold_id) for t in ts]


def sweep_table(reports: Sequence[EvalReport]) -> str:
    """Tab-separated ``threshold precision recall f1`` table."""
    lines = ["threshold\tprecision\trecall\tf1"]
    for r in reports:
        lines.append(f"{r.threshold:.4f}\t{r.precision:.6f}\t{r.recall:.6f}\t{r.f1:.6f}")
    return "\n".join(lines) + "\n"


def per_sample_table(report: EvalReport, ids: Sequence[str]) -> str:
    lines = ["sample_id\tprecision\trecall\tf1"]
    for sid, p, r, f in zip(ids, report.precision_i, report.recall_i, report.f1_i):
        lines.append(f"{sid}\t{p:.6f}\t{r:.6f}\t{f:.6f}")
    return "\n".join(lines) + "\n"


def write_report(path, reports: Sequence[EvalReport]) -> None:
    Path(path).write_text(sweep_table(reports))
