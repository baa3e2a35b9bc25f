"""Attacks against a model retrained after an attribute update.

Attackers only see models through :class:`BlackBox`: they submit records and
get back the confidence on a label. Ground-truth update receipts never reach
this module.
"""
from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .learn import Model, confidence_on_label, predict_proba
from .tabular import Record


class BlackBox:
    """Query access to a trained model; counts every record submitted."""

    def __init__(self, model: Model):
        if model.encoder is None:
            raise ValueError("black-box access needs a model carrying its feature encoder")
        self._model = model
        self.n_queries = 0

    @property
    def encoder(self):
        return self._model.encoder

    def confidence(self, records: Sequence[Mapping], label: str) -> np.ndarray:
        self.n_queries += len(records)
        X = self._model.encoder.encode_many(records)
        return np.asarray(confidence_on_label(self._model, X, label), dtype=np.float64)

    def confidences(self, records: Sequence[Mapping], labels: Sequence[str]) -> np.ndarray:
        """Confidence of each record on its own label."""
        self.n_queries += len(records)
        X = self._model.encoder.encode_many(records)
        P = predict_proba(self._model, X)
        idx = [self._model.labels.index(y) for y in labels]
        return P[np.arange(len(records)), idx]

    def same_feature_space(self, other: BlackBox) -> bool:
        a, b = self._model.encoder, other._model.encoder
        return (a.schema == b.schema and a.width == b.width
                and self._model.input_width == other._model.input_width)


def _box(m) -> BlackBox:
    return m if isinstance(m, BlackBox) else BlackBox(m)


@dataclass(frozen=True)
class ConfidenceTable:
    values: tuple[str, ...]
    conf_new: np.ndarray
    conf_old: np.ndarray | None = None


@dataclass(frozen=True)
class AttackGuess:
    guess: str
    score: float
    table: ConfidenceTable


@dataclass(frozen=True)
class RecordScore:
    record_id: int
    score: float


def _probes(known: Mapping, target: str, candidates: Sequence[str]) -> list[dict]:
    return [{**known, target: t} for t in candidates]


def single_model_attack(model_new, known: Mapping, label: str,
                        candidates: Sequence[str]) -> AttackGuess:
    """Guess the updated value as the candidate maximizing the new model's
    confidence on the true label. Ties go to the earliest candidate."""
    if not candidates:
        raise ValueError("candidate set is empty")
    box = _box(model_new)
    target = box.encoder.schema.target.name
    conf = box.confidence(_probes(known, target, candidates), label)
    i = int(np.argmax(conf))
    return AttackGuess(candidates[i], float(conf[i]), ConfidenceTable(tuple(candidates), conf))


def two_model_attack(model_old, model_new, known: Mapping, label: str,
                     candidates: Sequence[str]) -> AttackGuess:
    """Guess the candidate whose confidence on the true label increased the
    most from the original to the updated model. Ties go to the earliest."""
    if not candidates:
        raise ValueError("candidate set is empty")
    old, new = _box(model_old), _box(model_new)
    if not old.same_feature_space(new):
        raise ValueError("models do not share a feature space")
    target = new.encoder.schema.target.name
    probes = _probes(known, target, candidates)
    conf_old = old.confidence(probes, label)
    conf_new = new.confidence(probes, label)
    diff = conf_new - conf_old
    i = int(np.argmax(diff))
    return AttackGuess(candidates[i], float(diff[i]),
                       ConfidenceTable(tuple(candidates), conf_new, conf_old))


def _split(candidates: Sequence[Record]):
    if not candidates:
        raise ValueError("candidate list is empty")
    return [dict(r.values) for r in candidates], [r.id for r in candidates]


def _ranked(ids, scores) -> list[RecordScore]:
    ids = np.asarray(ids, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((ids, -scores))
    return [RecordScore(int(ids[i]), float(scores[i])) for i in order]


def record_inference_scores(model_old, model_new, candidates: Sequence[Record],
                            direction: str = "drop") -> list[RecordScore]:
    """Rank candidate records (carrying their ORIGINAL target value) by how
    likely they were updated, from the change in confidence on their label.

    ``direction="drop"`` scores ``conf_old - conf_new``: a record that left the
    training set in its original form loses confidence. ``"rise"`` uses
    ``conf_new - conf_old``. Sorted by descending score, ties by ascending id.
    """
    if direction not in ("drop", "rise"):
        raise ValueError(f"unknown direction {direction!r}")
    old, new = _box(model_old), _box(model_new)
    if not old.same_feature_space(new):
        raise ValueError("models do not share a feature space")
    rows, ids = _split(candidates)
    label_name = new.encoder.schema.label.name
    labels = [r[label_name] for r in rows]
    diff = new.confidences(rows, labels) - old.confidences(rows, labels)
    return _ranked(ids, -diff if direction == "drop" else diff)


def single_model_record_scores(model_new, candidates: Sequence[Record],
                               reference: float = 0.5) -> list[RecordScore]:
    """Baseline with the updated model only: score = reference - conf_new.

    Low confidence on a record's label suggests it changed; with the default
    reference a positive score means the new model no longer favours the label
    (binary case).
    """
    new = _box(model_new)
    rows, ids = _split(candidates)
    label_name = new.encoder.schema.label.name
    conf = new.confidences(rows, [r[label_name] for r in rows])
    return _ranked(ids, reference - conf)


def threshold_guess(scores: Sequence[RecordScore], policy: str = "positive_score",
                    k: int | None = None) -> set[int]:
    """Turn ranked scores into a guessed set of updated ids.

    ``top_k`` takes the first ``k`` entries of the ranking; ``positive_score``
    takes every id with a strictly positive score.
    """
    if policy == "top_k":
        if k is None or k < 0:
            raise ValueError("top_k policy needs a non-negative k")
        if k > len(scores):
            raise ValueError(f"k={k} exceeds the {len(scores)} scored records")
        return {s.record_id for s in scores[:k]}
    if policy == "positive_score":
        return {s.record_id for s in scores if s.score > 0}
    raise ValueError(f"unknown policy {policy!r}")
