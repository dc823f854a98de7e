"""
Ranking metrics over next-app predictions.

Every example has exactly one relevant item (the true next app), so with
1-based label rank ``r``:

* Hit@k   = 1 if r <= k
* MRR@k   = 1/r if r <= k else 0
* NDCG@k  = 1/log2(r+1) if r <= k else 0   (ideal DCG is 1)

Macro-F1 uses the top-1 app as the predicted class and averages per-class
F1 over the whole app vocabulary; a class never predicted and never seen
scores 0.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class RankedPrediction:
    window_id: str
    ranking: tuple[int, ...]
    label: int

    @property
    def rank(self) -> int:
        """1-based position of the label in the ranking."""
        return self.ranking.index(self.label) + 1

    @property
    def top1(self) -> int:
        return self.ranking[0]


def rank_from_logits(logits: np.ndarray) -> np.ndarray:
    """Descending-score order per row; equal scores keep ascending app index."""
    logits = np.asarray(logits)
    return np.argsort(-logits, axis=-1, kind="stable")


def label_ranks(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """1-based rank of each label under :func:`rank_from_logits`, without a full sort."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    rows = np.arange(len(labels))
    target = logits[rows, labels][:, None]
    n_cols = logits.shape[1]
    cols = np.arange(n_cols)[None, :]
    ahead = (logits > target) | ((logits == target) & (cols < labels[:, None]))
    return ahead.sum(axis=1) + 1


def _ranks(preds) -> np.ndarray:
    if isinstance(preds, np.ndarray):
        return preds.astype(np.int64)
    return np.array([p.rank for p in preds], dtype=np.int64)


def _mean(values: np.ndarray) -> float:
    # correctly rounded, so the result does not depend on summation order
    return math.fsum(values.tolist()) / values.size if values.size else 0.0


def _check_k(k: int) -> None:
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")


def hit_at_k(preds, k: int) -> float:
    """Accepts RankedPrediction objects or an array of 1-based ranks."""
    _check_k(k)
    r = _ranks(preds)
    return _mean((r <= k).astype(float))


def mrr_at_k(preds, k: int) -> float:
    _check_k(k)
    r = _ranks(preds)
    return _mean(np.where(r <= k, 1.0 / r, 0.0))


def ndcg_at_k(preds, k: int) -> float:
    _check_k(k)
    r = _ranks(preds)
    return _mean(np.where(r <= k, 1.0 / np.log2(r + 1.0), 0.0))


def f1_per_class(predicted: np.ndarray, truth: np.ndarray, n_classes: int) -> np.ndarray:
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    tp = np.bincount(truth[predicted == truth], minlength=n_classes).astype(float)
    pred_count = np.bincount(predicted, minlength=n_classes).astype(float)
    true_count = np.bincount(truth, minlength=n_classes).astype(float)
    denom = pred_count + true_count
    return np.divide(2.0 * tp, denom, out=np.zeros(n_classes), where=denom > 0)


def macro_f1(preds: Sequence[RankedPrediction] | None = None, n_classes: int | None = None, *, predicted=None, truth=None) -> float:
    """Unweighted mean F1 over ``n_classes`` (default: the ranking length)."""
    if preds is not None:
        preds = list(preds)
        if not preds:
            raise ValueError("macro-F1 is undefined on an empty prediction stream")
        predicted = np.array([p.top1 for p in preds])
        truth = np.array([p.label for p in preds])
        n_classes = n_classes or len(preds[0].ranking)
    else:
        predicted, truth = np.asarray(predicted), np.asarray(truth)
        if predicted.size == 0:
            raise ValueError("macro-F1 is undefined on an empty prediction stream")
        if predicted.shape != truth.shape:
            raise ShapeError(f"predicted {predicted.shape} and truth {truth.shape} differ")
        if n_classes is None:
            raise ConfigError("n_classes is required with raw arrays")
    return _mean(f1_per_class(predicted, truth, n_classes))


@dataclass
class MetricReport:
    hit: dict[int, float]
    mrr: dict[int, float]
    ndcg: dict[int, float]
    macro_f1: float
    count: int
    n_classes: int
    per_class_f1: list[float] = field(default_factory=list)

    def to_dict(self, per_class: bool = False) -> dict:
        d = {
            "count": self.count,
            "n_classes": self.n_classes,
            "hit": {str(k): v for k, v in self.hit.items()},
            "mrr": {str(k): v for k, v in self.mrr.items()},
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
            "macro_f1": self.macro_f1,
        }
        if per_class:
            d["per_class_f1"] = self.per_class_f1
        return d

    def row(self, ks=(1, 3, 5)) -> dict[str, float]:
        """Flat columns as used in the comparison tables."""
        out = {f"hit@{k}": self.hit[k] for k in ks}
        out.update({f"mrr@{k}": self.mrr[k] for k in ks})
        out.update({f"ndcg@{k}": self.ndcg[k] for k in ks})
        out["macro_f1"] = self.macro_f1
        return out


def evaluate_ranks(ranks: np.ndarray, predicted: np.ndarray, truth: np.ndarray, n_classes: int, ks=(1, 2, 3, 4, 5)) -> MetricReport:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("cannot evaluate an empty prediction stream")
    per_class = f1_per_class(predicted, truth, n_classes)
    return MetricReport(
        hit={k: hit_at_k(ranks, k) for k in ks},
        mrr={k: mrr_at_k(ranks, k) for k in ks},
        ndcg={k: ndcg_at_k(ranks, k) for k in ks},
        macro_f1=_mean(per_class),
        count=int(ranks.size),
        n_classes=n_classes,
        per_class_f1=per_class.tolist(),
    )


def evaluate_logits(logits: np.ndarray, labels: np.ndarray, ks=(1, 2, 3, 4, 5)) -> MetricReport:
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    ranks = label_ranks(logits, labels)
    predicted = rank_from_logits(logits)[:, 0]
    return evaluate_ranks(ranks, predicted, labels, logits.shape[1], ks)


def evaluate_predictions(preds: Sequence[RankedPrediction], ks=(1, 2, 3, 4, 5)) -> MetricReport:
    preds = list(preds)
    if not preds:
        raise ValueError("cannot evaluate an empty prediction stream")
    ranks = _ranks(preds)
    predicted = np.array([p.top1 for p in preds])
    truth = np.array([p.label for p in preds])
    return evaluate_ranks(ranks, predicted, truth, len(preds[0].ranking), ks)


def write_metrics_json(path, reports: dict[str, MetricReport]) -> None:
    payload = {split: r.to_dict() for split, r in reports.items()}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_metrics_csv(path, rows: dict[str, dict[str, float]]) -> None:
    """One row per label (split or variant); columns are the metric names."""
    rows = dict(rows)
    if not rows:
        raise ValueError("no rows to write")
    columns = list(next(iter(rows.values())).keys())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["variant"] + columns)
        for label, row in rows.items():
            writer.writerow([label] + [f"{row[c]:.6f}" if isinstance(row[c], float) else row[c] for c in columns])
