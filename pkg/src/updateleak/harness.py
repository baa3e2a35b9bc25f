"""Config-driven update-leakage experiments.

An experiment builds a dataset, fixes one train/test split, trains the
original model, and then for every repetition ``i`` (seed ``base_seed + i``)
applies a fresh update batch, retrains from scratch and runs the attacks.
Ground truth comes from update receipts and is only consulted when scoring.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import __version__
from ._backend import BACKEND
from .attack import (record_inference_scores, single_model_attack,
                     single_model_record_scores, threshold_guess, two_model_attack,
                     RecordScore)
from .learn import Model, TrainConfig, TrainingError, train
from .metrics import (confusion_at, mean_roc, prediction_histogram, random_baseline_hits,
                      roc_from_scores, success_rate)
from .tabular import (Dataset, Encoder, SyntheticSpec, UpdateRule, apply_update_batch,
                      candidate_values, generate_synthetic, load_csv, load_schema,
                      load_synthetic_spec, sample_split)

logger = logging.getLogger(__name__)

RESULT_FORMAT_VERSION = 1
FRESH_SEED_OFFSET = 100_000
WORKERS_ENV = "UPDATELEAK_WORKERS"


class ConfigError(ValueError):
    """Experiment configuration is invalid."""


class ResultError(ValueError):
    """Result file is unreadable, of the wrong version, or inconsistent."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataConfig(_Strict):
    synthetic: SyntheticSpec | None = None
    csv: str | None = None
    schema_file: str | None = Field(default=None, alias="schema")

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.synthetic is None) == (self.csv is None):
            raise ValueError("data needs exactly one of 'synthetic' or 'csv'")
        if self.csv is not None and self.schema_file is None:
            raise ValueError("csv data needs a 'schema' file")
        return self


class SplitConfig(_Strict):
    train: int = Field(gt=0)
    test: int = Field(default=0, ge=0)


class RuleConfig(_Strict):
    before: str
    after: str
    count: int | None = Field(default=None, gt=0)


class UpdateConfig(_Strict):
    rules: list[RuleConfig] = Field(min_length=1)
    # records per rule when a rule does not give its own count
    size: int | None = Field(default=None, gt=0)


class RecordInferenceConfig(_Strict):
    candidates: int = Field(gt=0)
    updated: int = Field(gt=0)
    policy: Literal["top_k", "positive_score"] = "top_k"
    k: int | None = Field(default=None, ge=0)
    direction: Literal["drop", "rise"] = "drop"
    single_reference: float = 0.5

    @model_validator(mode="after")
    def _check(self):
        if self.updated > self.candidates:
            raise ValueError("more updated records than candidates")
        if self.k is not None and self.k > self.candidates:
            raise ValueError("k exceeds candidate count")
        return self


class ExperimentConfig(_Strict):
    name: str = "experiment"
    kind: Literal["attribute_inference", "record_inference"]
    data: DataConfig
    split: SplitConfig
    model: TrainConfig = Field(default_factory=TrainConfig)
    update: UpdateConfig
    repetitions: int = Field(default=1, ge=1)
    base_seed: int = 0
    seed_policy: Literal["same_seed", "fresh_seed"] = "same_seed"
    share_original_model: bool = True
    record_inference: RecordInferenceConfig | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "record_inference":
            if self.record_inference is None:
                raise ValueError("record_inference experiments need a 'record_inference' section")
            if len(self.update.rules) != 1:
                raise ValueError("record_inference experiments take exactly one update rule")
        else:
            for r in self.update.rules:
                if r.count is None and self.update.size is None:
                    raise ValueError("each rule needs a count, or set update.size")
        return self

    def rules(self, target: str) -> list[UpdateRule]:
        if self.kind == "record_inference":
            r = self.update.rules[0]
            return [UpdateRule(target, r.before, r.after, self.record_inference.updated)]
        return [UpdateRule(target, r.before, r.after, r.count or self.update.size)
                for r in self.update.rules]


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    """Read a YAML experiment config; relative file paths resolve against it."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    data = raw.get("data")
    if isinstance(data, dict):
        data = dict(data)
        for key in ("csv", "schema"):
            if isinstance(data.get(key), str):
                data[key] = str((path.parent / data[key]).resolve())
        if isinstance(data.get("synthetic"), str):
            data["synthetic"] = load_synthetic_spec(path.parent / data["synthetic"]).model_dump()
        raw = {**raw, "data": data}
    raw.update(overrides)
    try:
        return ExperimentConfig.model_validate(raw)
    except ValueError as e:
        raise ConfigError(_describe(e)) from None


def _describe(err) -> str:
    try:
        parts = []
        for item in err.errors():
            loc = ".".join(str(x) for x in item["loc"])
            if item["type"] == "extra_forbidden":
                parts.append(f"unknown config key '{loc}'")
            else:
                parts.append(f"{loc}: {item['msg']}")
        return "; ".join(parts)
    except AttributeError:
        return str(err)


# -- experiment context ---------------------------------------------------------

@dataclass
class _Context:
    cfg: ExperimentConfig
    train: Dataset
    test: Dataset
    encoder: Encoder
    original: Model | None
    original_error: str | None = None

    def original_for(self, seed: int) -> Model:
        if self.original_error is not None:
            raise TrainingError(f"original model: {self.original_error}")
        return self.original or _train(self, self.train, seed)


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.data.synthetic is not None:
        return generate_synthetic(cfg.data.synthetic, cfg.base_seed)
    return load_csv(cfg.data.csv, load_schema(cfg.data.schema_file))


def _train(ctx: _Context, data: Dataset, seed: int) -> Model:
    tc = ctx.cfg.model.model_copy(update={"seed": seed})
    return train(data, tc, encoder=ctx.encoder, test=ctx.test if len(ctx.test) else None)


def _seeds(cfg: ExperimentConfig, i: int) -> tuple[int, int]:
    old = cfg.model.seed + (0 if cfg.share_original_model else i)
    new = old if cfg.seed_policy == "same_seed" else cfg.model.seed + FRESH_SEED_OFFSET + i
    return old, new


def _context(cfg: ExperimentConfig) -> _Context:
    data = load_dataset(cfg)
    train_ds, test_ds = sample_split(data, cfg.split.train, cfg.split.test, cfg.base_seed)
    ctx = _Context(cfg, train_ds, test_ds, Encoder.fit(train_ds), None)
    if cfg.share_original_model:
        try:
            ctx.original = _train(ctx, train_ds, _seeds(cfg, 0)[0])
        except TrainingError as e:
            ctx.original_error = str(e)
    return ctx


def _accuracies(model: Model) -> dict:
    return {k: model.meta[k] for k in ("train_accuracy", "test_accuracy") if k in model.meta}


def _attribute_rep(ctx: _Context, i: int) -> dict:
    cfg = ctx.cfg
    seed = cfg.base_seed + i
    old_seed, new_seed = _seeds(cfg, i)
    target = ctx.train.schema.target.name
    label = ctx.train.schema.label.name
    rep = {"index": i, "seed": seed, "train_seed_old": old_seed, "train_seed_new": new_seed}
    try:
        original = ctx.original_for(old_seed)
        updated_ds, receipts = apply_update_batch(ctx.train, cfg.rules(target), seed)
        updated = _train(ctx, updated_ds, new_seed)
    except TrainingError as e:
        return {**rep, "status": "failed", "error": str(e)}
    T = candidate_values(ctx.train.schema)
    guesses = []
    for receipt in receipts:
        for rid in sorted(receipt.updated_ids):
            values = dict(updated_ds.record(rid).values)
            y = values.pop(label)
            known = {k: v for k, v in values.items() if k != target}
            single = single_model_attack(updated, known, y, T)
            two = two_model_attack(original, updated, known, y, T)
            guesses.append({"id": rid, "before": receipt.rule.before, "truth": receipt.rule.after,
                            "single": single.guess, "two": two.guess})
    return {**rep, "status": "ok", "accuracy_old": _accuracies(original),
            "accuracy_new": _accuracies(updated), "guesses": guesses}


def _record_rep(ctx: _Context, i: int) -> dict:
    cfg = ctx.cfg
    ri = cfg.record_inference
    seed = cfg.base_seed + i
    old_seed, new_seed = _seeds(cfg, i)
    schema = ctx.train.schema
    rule = cfg.rules(schema.target.name)[0]
    rep = {"index": i, "seed": seed, "train_seed_old": old_seed, "train_seed_new": new_seed}
    eligible = ctx.train.ids[ctx.train.columns[schema.target.name] == schema.target.code(rule.before)]
    if len(eligible) < ri.candidates:
        raise ConfigError(f"only {len(eligible)} records hold {rule.before!r}, "
                          f"{ri.candidates} candidates requested")
    rng = np.random.default_rng(seed)
    cand_ids = np.sort(rng.choice(eligible, size=ri.candidates, replace=False))
    try:
        original = ctx.original_for(old_seed)
        updated_ds, receipts = apply_update_batch(ctx.train, [rule], seed, among=cand_ids.tolist())
        updated = _train(ctx, updated_ds, new_seed)
    except TrainingError as e:
        return {**rep, "status": "failed", "error": str(e)}
    candidates = [ctx.train.record(int(r)) for r in cand_ids]
    two = record_inference_scores(original, updated, candidates, direction=ri.direction)
    single = single_model_record_scores(updated, candidates, reference=ri.single_reference)
    truth = sorted(receipts[0].updated_ids)
    return {**rep, "status": "ok", "accuracy_old": _accuracies(original),
            "accuracy_new": _accuracies(updated), "candidates": [int(r) for r in cand_ids],
            "updated": truth,
            "two_model": [[s.record_id, s.score] for s in two],
            "single_model": [[s.record_id, s.score] for s in single]}


# -- aggregation -------------------------------------------------------------------

def _attribute_aggregate(cfg: ExperimentConfig, reps: list[dict], T: list[str]) -> dict:
    ok = [r for r in reps if r["status"] == "ok"]
    guesses = [g for r in ok for g in r["guesses"]]
    out = {"repetitions_ok": len(ok), "repetitions_failed": len(reps) - len(ok),
           "n_guesses": len(guesses), "random_baseline": 1.0 / len(T)}
    if guesses:
        truths = [g["truth"] for g in guesses]
        out["single_model_success"] = success_rate([g["single"] for g in guesses], truths)
        out["two_model_success"] = success_rate([g["two"] for g in guesses], truths)
        out["single_model_histogram"] = prediction_histogram((g["single"] for g in guesses), T)
        out["two_model_histogram"] = prediction_histogram((g["two"] for g in guesses), T)
        by_rule = []
        for rc in cfg.update.rules:
            sel = [g for g in guesses if g["before"] == rc.before and g["truth"] == rc.after]
            if sel:
                t = [g["truth"] for g in sel]
                by_rule.append({"before": rc.before, "after": rc.after,
                                "size": rc.count or cfg.update.size, "n_guesses": len(sel),
                                "single_model_success": success_rate([g["single"] for g in sel], t),
                                "two_model_success": success_rate([g["two"] for g in sel], t)})
        out["by_rule"] = by_rule
    return out


def _scores(pairs) -> list[RecordScore]:
    return [RecordScore(int(i), float(s)) for i, s in pairs]


def _record_aggregate(cfg: ExperimentConfig, reps: list[dict]) -> dict:
    ri = cfg.record_inference
    ok = [r for r in reps if r["status"] == "ok"]
    k = ri.k if ri.k is not None else ri.updated
    out = {"repetitions_ok": len(ok), "repetitions_failed": len(reps) - len(ok),
           "candidates": ri.candidates, "updated": ri.updated, "k": k, "policy": ri.policy,
           "direction": ri.direction,
           "random_baseline_hits": random_baseline_hits(k, ri.updated, ri.candidates)}
    if not ok:
        return out
    for method in ("two_model", "single_model"):
        curves, hits, counts = [], [], []
        for r in ok:
            scores = _scores(r[method])
            curve = roc_from_scores(scores, r["updated"])
            curves.append(curve)
            hits.append(curve.hits_at(k))
            guess = threshold_guess(scores, ri.policy, k if ri.policy == "top_k" else None)
            counts.append(confusion_at(guess, r["updated"], ri.candidates))
        roc = mean_roc(curves)
        tot = {f: int(sum(getattr(c, f) for c in counts)) for f in ("tp", "fp", "tn", "fn")}
        out[method] = {
            "mean_top_k_hits": float(np.mean(hits)),
            "top_k_hits": hits,
            "mean_tpr": float(np.mean([c.tpr for c in counts])),
            "mean_fpr": float(np.mean([c.fpr for c in counts])),
            "confusion_total": tot,
            "auc": roc.auc(),
            "roc": {"fpr": roc.fpr.tolist(), "tpr": roc.tpr.tolist()},
        }
    return out


def compute_aggregate(result: dict) -> dict:
    cfg = ExperimentConfig.model_validate(result["config"])
    if cfg.kind == "attribute_inference":
        return _attribute_aggregate(cfg, result["repetitions"], result["candidate_values"])
    return _record_aggregate(cfg, result["repetitions"])


# -- running ---------------------------------------------------------------------

def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _run(cfg: ExperimentConfig, rep_fn, workers: int | None) -> dict:
    ctx = _context(cfg)
    workers = workers or default_workers()
    job = partial(rep_fn, ctx)
    idx = range(cfg.repetitions)
    if workers > 1 and cfg.repetitions > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(job, idx))
    else:
        reps = [job(i) for i in idx]
    for r in reps:
        if r["status"] == "failed":
            logger.warning("repetition %d failed: %s", r["index"], r["error"])
    result = {
        "format_version": RESULT_FORMAT_VERSION,
        "package_version": __version__,
        "backend": BACKEND,
        "kind": cfg.kind,
        "config": cfg.model_dump(mode="json", by_alias=True),
        "candidate_values": candidate_values(ctx.train.schema),
        "split": {"train": len(ctx.train), "test": len(ctx.test)},
        "original_model": _accuracies(ctx.original) if ctx.original is not None else None,
        "repetitions": reps,
    }
    result["aggregate"] = compute_aggregate(result)
    return result


def run_attribute_experiment(cfg: ExperimentConfig, workers: int | None = None) -> dict:
    if cfg.kind != "attribute_inference":
        raise ConfigError("config kind is not attribute_inference")
    return _run(cfg, _attribute_rep, workers)


def run_record_inference_experiment(cfg: ExperimentConfig, workers: int | None = None) -> dict:
    if cfg.kind != "record_inference":
        raise ConfigError("config kind is not record_inference")
    return _run(cfg, _record_rep, workers)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> dict:
    if cfg.kind == "attribute_inference":
        return run_attribute_experiment(cfg, workers)
    return run_record_inference_experiment(cfg, workers)


def null_world_check(cfg: ExperimentConfig, n_candidates: int = 1000) -> dict:
    """Retrain on an unchanged dataset and report how the attacks degenerate.

    With ``same_seed`` the two models must be bit-identical, every record score
    zero, and every two-model guess the first candidate value.
    """
    ctx = _context(cfg)
    old_seed, new_seed = _seeds(cfg, 0)
    original = ctx.original_for(old_seed)
    unchanged, receipts = apply_update_batch(ctx.train, [], cfg.base_seed)
    updated = _train(ctx, unchanged, new_seed)
    schema = ctx.train.schema
    n = min(n_candidates, len(ctx.train))
    candidates = [ctx.train.record_at(p) for p in range(n)]
    scores = record_inference_scores(original, updated, candidates)
    T = candidate_values(schema)
    guesses = []
    for r in candidates[:100]:
        values = dict(r.values)
        y = values.pop(schema.label.name)
        values.pop(schema.target.name)
        guesses.append(two_model_attack(original, updated, values, y, T).guess)
    return {"datasets_identical": unchanged == ctx.train and not receipts,
            "models_identical": original.same_weights(updated),
            "max_abs_score": max(abs(s.score) for s in scores),
            "score_order_is_id_order": [s.record_id for s in scores] == [r.id for r in candidates],
            "two_model_guesses": sorted(set(guesses)), "first_candidate": T[0]}


# -- persistence -----------------------------------------------------------------

def persist_result(result: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=1, sort_keys=True, allow_nan=True)
        fh.write("\n")


def load_result(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ResultError(f"no such result file: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            result = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ResultError(f"{path}: corrupt result file ({e})") from None
    if not isinstance(result, dict) or result.get("format_version") != RESULT_FORMAT_VERSION:
        raise ResultError(f"{path}: unsupported result format version")
    try:
        recomputed = compute_aggregate(result)
    except (KeyError, TypeError, ValueError) as e:
        raise ResultError(f"{path}: cannot recompute aggregates ({e})") from None
    # round-trip through JSON so floats compare exactly as stored
    if json.loads(json.dumps(recomputed)) != result.get("aggregate"):
        raise ResultError(f"{path}: stored aggregates do not match repetition records")
    return result


def summary_rows(result: dict) -> list[dict]:
    """Rows for the stdout/CSV summary table."""
    agg = result["aggregate"]
    if result["kind"] == "attribute_inference":
        return [{"update_rule": f"{r['before']}->{r['after']}", "update_size": r["size"],
                 "single_model": r["single_model_success"], "two_model": r["two_model_success"],
                 "n_guesses": r["n_guesses"]} for r in agg.get("by_rule", [])]
    rows = []
    for metric in ("mean_tpr", "mean_fpr", "mean_top_k_hits", "auc"):
        if "two_model" in agg:
            rows.append({"metric": metric, "single_model": agg["single_model"][metric],
                         "two_model": agg["two_model"][metric]})
    rows.append({"metric": "random_baseline_hits", "single_model": agg["random_baseline_hits"],
                 "two_model": agg["random_baseline_hits"]})
    return rows


def format_summary(result: dict) -> str:
    rows = summary_rows(result)
    if not rows:
        return "(no successful repetitions)"
    cols = list(rows[0])
    fmt = lambda v: f"{v:.3f}" if isinstance(v, float) else str(v)
    cells = [[fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[j]) for row in cells)) for j, c in enumerate(cols)]
    lines = [" | ".join(c.ljust(w) for c, w in zip(cols, widths)),
             "-+-".join("-" * w for w in widths)]
    lines += [" | ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def write_tables(result: dict, out_dir: str | Path) -> list[Path]:
    """Emit CSV tables (summary, and ROC points for record inference)."""
    out_dir = Path(out_dir)
    written = []
    rows = summary_rows(result)
    if rows:
        p = out_dir / "summary.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        written.append(p)
    if result["kind"] == "record_inference" and "two_model" in result["aggregate"]:
        p = out_dir / "roc.csv"
        write_roc_csv(result, p)
        written.append(p)
    return written


def roc_rows(result: dict) -> list[tuple[int, float, float, float, float, float]]:
    """(k, fpr_two, tpr_two, fpr_single, tpr_single, random_baseline_hits)."""
    agg = result["aggregate"]
    two, single = agg["two_model"]["roc"], agg["single_model"]["roc"]
    n, p = agg["candidates"], agg["updated"]
    return [(k, two["fpr"][k], two["tpr"][k], single["fpr"][k], single["tpr"][k],
             random_baseline_hits(k, p, n)) for k in range(len(two["fpr"]))]


def write_roc_csv(result: dict, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "fpr", "tpr", "single_fpr", "single_tpr", "random_hits"])
        for row in roc_rows(result):
            w.writerow([row[0], *(repr(float(x)) for x in row[1:])])
