"""Success rates, rank-sweep ROC curves, confusion counts and baselines."""
from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .attack import RecordScore


def success_rate(guesses: Sequence[str], truths: Sequence[str]) -> float:
    if len(guesses) != len(truths):
        raise ValueError(f"{len(guesses)} guesses vs {len(truths)} truths")
    if not guesses:
        raise ValueError("no guesses")
    return sum(g == t for g, t in zip(guesses, truths)) / len(guesses)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    positives: int
    negatives: int

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def auc(self) -> float:
        return float(np.trapezoid(self.tpr, self.fpr))

    def hits_at(self, k: int) -> int:
        """True positives among the top ``k`` ranked records."""
        return int(round(self.tpr[k] * self.positives))


def roc_from_scores(scores: Sequence[RecordScore], truth: Iterable[int]) -> RocCurve:
    """ROC obtained by taking the top k ranked records for k = 0..n."""
    truth = set(truth)
    ids = [s.record_id for s in scores]
    if not truth <= set(ids):
        raise ValueError("truth contains ids that were not scored")
    n, p = len(ids), len(truth)
    if p == 0 or p == n:
        raise ValueError("need at least one positive and one negative")
    hit = np.fromiter((i in truth for i in ids), dtype=np.int64, count=n)
    tp = np.concatenate([[0], np.cumsum(hit)])
    fp = np.arange(n + 1) - tp
    return RocCurve(fp / (n - p), tp / p, p, n - p)


def mean_roc(curves: Sequence[RocCurve]) -> RocCurve:
    """Average curves of equal size point-wise in k (rank averaging)."""
    if not curves:
        raise ValueError("no curves")
    shapes = {(c.positives, c.negatives) for c in curves}
    if len(shapes) != 1:
        raise ValueError("curves differ in positives/negatives")
    fpr = np.mean([c.fpr for c in curves], axis=0)
    tpr = np.mean([c.tpr for c in curves], axis=0)
    return RocCurve(fpr, tpr, curves[0].positives, curves[0].negatives)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def tpr(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def fpr(self) -> float:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else 0.0

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "tpr": self.tpr, "fpr": self.fpr}


def confusion_at(guess_set: Iterable[int], truth: Iterable[int], n: int) -> ConfusionCounts:
    guess, truth = set(guess_set), set(truth)
    tp = len(guess & truth)
    fp = len(guess - truth)
    fn = len(truth - guess)
    return ConfusionCounts(tp, fp, n - tp - fp - fn, fn)


def random_baseline_hits(k: int, positives: int, n: int) -> float:
    """Expected hits when picking k of n records at random (hypergeometric mean)."""
    if not (0 <= k <= n and 0 <= positives <= n) or n == 0:
        raise ValueError("need 0 <= k, positives <= n and n > 0")
    return k * positives / n


def prediction_histogram(guesses: Iterable[str], candidates: Sequence[str]) -> dict[str, int]:
    counts = {t: 0 for t in candidates}
    for g in guesses:
        if g not in counts:
            raise ValueError(f"guess {g!r} is not a candidate value")
        counts[g] += 1
    return counts
