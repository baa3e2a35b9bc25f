"""Command-line front end.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training failure.
Every command first prints ``# invocation:`` and ``# seeds:`` comment lines.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys
from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError

from . import __version__
from .attack import (record_inference_scores, single_model_attack,
                     single_model_record_scores, two_model_attack)
from .harness import (ConfigError, ResultError, format_summary, load_config, load_result,
                      null_world_check, persist_result, roc_rows, run_experiment,
                      write_roc_csv, write_tables)
from .learn import TrainConfig, TrainingError, load_model, save_model, train
from .tabular import (DataError, SchemaError, UpdateRule, apply_update_batch, candidate_values,
                      generate_synthetic, load_csv, load_schema, load_synthetic_spec,
                      sample_split, save_schema, write_csv)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3


def _header(argv: list[str], seeds: dict) -> None:
    print("# invocation: updateleak " + shlex.join(argv))
    print("# seeds: " + (", ".join(f"{k}={v}" for k, v in seeds.items()) or "none"))


def cmd_gen_data(args) -> int:
    _header(sys.argv[1:], {"data": args.seed})
    spec = load_synthetic_spec(args.spec)
    ds = generate_synthetic(spec, args.seed)
    write_csv(ds, args.out)
    schema_out = args.schema_out or str(Path(args.out).with_suffix(".schema.yaml"))
    save_schema(ds.schema, schema_out)
    print(f"wrote {len(ds)} records to {args.out} (schema {schema_out})")
    return EXIT_OK


def cmd_inspect(args) -> int:
    _header(sys.argv[1:], {})
    ds = load_csv(args.data, load_schema(args.schema))
    print(f"records: {len(ds)}  dropped: {ds.dropped_rows}")
    print("attribute | role | kind | summary")
    for a in ds.schema.attributes:
        col = ds.columns[a.name]
        if a.is_categorical:
            counts = np.bincount(col, minlength=len(a.domain))
            summary = " ".join(f"{v}={c}" for v, c in zip(a.domain, counts))
        else:
            summary = f"mean={col.mean():.4g} std={col.std():.4g}"
        print(f"{a.name} | {a.role} | {a.kind} | {summary}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    raw = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    for key, val in (("family", args.family), ("seed", args.seed), ("max_epochs", args.epochs),
                     ("learning_rate", args.lr), ("l2_strength", args.l2),
                     ("hidden_layers", args.hidden)):
        if val is not None:
            raw[key] = val
    return TrainConfig.model_validate(raw)


def cmd_train(args) -> int:
    cfg = _train_config(args)
    _header(sys.argv[1:], {"train": cfg.seed, "split": args.split_seed})
    ds = load_csv(args.data, load_schema(args.schema))
    test = None
    if args.n_train:
        ds, test = sample_split(ds, args.n_train, args.n_test, args.split_seed)
    encoder = load_model(args.encoder_from).encoder if args.encoder_from else None
    model = train(ds, cfg, encoder=encoder, test=test)
    save_model(model, args.out)
    acc = f"train_accuracy={model.meta['train_accuracy']:.4f}"
    if "test_accuracy" in model.meta:
        acc += f" test_accuracy={model.meta['test_accuracy']:.4f}"
    print(f"trained {cfg.family} on {len(ds)} records: {acc} -> {args.out}")
    return EXIT_OK


def _parse_rule(text: str, target: str) -> UpdateRule:
    parts = text.split(":")
    if len(parts) != 3:
        raise DataError(f"rule must be before:after:count, got {text!r}")
    return UpdateRule(target, parts[0], parts[1], int(parts[2]))


def cmd_update(args) -> int:
    _header(sys.argv[1:], {"update": args.seed})
    ds = load_csv(args.data, load_schema(args.schema))
    rules = [_parse_rule(r, ds.schema.target.name) for r in args.rule]
    updated, receipts = apply_update_batch(ds, rules, args.seed)
    write_csv(updated, args.out)
    if args.receipt:
        with open(args.receipt, "w", encoding="utf-8") as fh:
            json.dump([{"before": r.rule.before, "after": r.rule.after, "count": r.rule.count,
                        "updated_ids": sorted(r.updated_ids)} for r in receipts], fh, indent=1)
    n = sum(len(r.updated_ids) for r in receipts)
    print(f"updated {n} records under {len(rules)} rule(s) -> {args.out}")
    return EXIT_OK


def cmd_attack(args) -> int:
    _header(sys.argv[1:], {})
    new = load_model(args.new)
    old = load_model(args.old) if args.old else None
    if args.mode in ("two-model", "records") and old is None:
        raise ConfigError(f"--mode {args.mode} needs --old")
    ds = load_csv(args.data, new.encoder.schema)
    ids = [int(i) for i in args.ids.split(",")] if args.ids else ds.ids.tolist()
    schema = ds.schema
    if args.mode == "records":
        cands = [ds.record(i) for i in ids]
        ranked = record_inference_scores(old, new, cands, direction=args.direction)
        single = {s.record_id: s.score for s in single_model_record_scores(new, cands)}
        print("record_id | two_model_score | single_model_score")
        for s in ranked:
            print(f"{s.record_id} | {s.score!r} | {single[s.record_id]!r}")
        return EXIT_OK
    T = candidate_values(schema)
    print("record_id | guess | score")
    for rid in ids:
        values = dict(ds.record(rid).values)
        y = values.pop(schema.label.name)
        values.pop(schema.target.name)
        if args.mode == "single":
            g = single_model_attack(new, values, y, T)
        else:
            g = two_model_attack(old, new, values, y, T)
        print(f"{rid} | {g.guess} | {g.score!r}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    overrides = {"seed_policy": "fresh_seed"} if args.fresh_seed else {}
    cfg = load_config(args.config, **overrides)
    reps = range(cfg.repetitions)
    _header(sys.argv[1:], {"base_seed": cfg.base_seed, "repetition_seeds":
                           f"{cfg.base_seed}..{cfg.base_seed + cfg.repetitions - 1}",
                           "seed_policy": cfg.seed_policy, "model_seed": cfg.model.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.null_world:
        report = null_world_check(cfg)
        with open(out / "null_world.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
        for k, v in report.items():
            print(f"{k}: {v}")
        return EXIT_OK
    result = run_experiment(cfg, workers=args.workers)
    persist_result(result, out / "result.json")
    write_tables(result, out)
    agg = result["aggregate"]
    print(f"kind: {result['kind']}  repetitions ok: {agg['repetitions_ok']}/{len(reps)}  "
          f"failed: {agg['repetitions_failed']}  seed_policy: {cfg.seed_policy}")
    print(format_summary(result))
    print(f"wrote {out / 'result.json'}")
    return EXIT_OK


def cmd_report(args) -> int:
    _header(sys.argv[1:], {})
    result = load_result(args.result)
    print(format_summary(result))
    if result["kind"] != "record_inference":
        return EXIT_OK
    if args.roc_csv:
        write_roc_csv(result, args.roc_csv)
        print(f"wrote ROC points to {args.roc_csv}")
    print(f"low-FPR region (fpr <= {args.low_fpr}):")
    print("k | fpr | tpr | single_fpr | single_tpr | random_hits")
    for k, f2, t2, f1, t1, rnd in roc_rows(result):
        if f2 <= args.low_fpr:
            print(f"{k} | {f2:.4f} | {t2:.4f} | {f1:.4f} | {t1:.4f} | {rnd:.2f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="updateleak", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="generate a synthetic dataset")
    s.add_argument("--spec", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--schema-out")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("inspect", help="summarize a CSV dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--schema", required=True)
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("train", help="train a model on a CSV dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="YAML TrainConfig")
    s.add_argument("--family", choices=["logistic", "mlp"])
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--l2", type=float)
    s.add_argument("--hidden", type=lambda t: [int(x) for x in t.split(",")])
    s.add_argument("--n-train", type=int)
    s.add_argument("--n-test", type=int, default=0)
    s.add_argument("--split-seed", type=int, default=0)
    s.add_argument("--encoder-from", help="reuse the feature encoder of a saved model")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("update", help="apply target-attribute update rules")
    s.add_argument("--data", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--rule", action="append", required=True, help="before:after:count")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--receipt")
    s.set_defaults(func=cmd_update)

    s = sub.add_parser("attack", help="run an attack against saved models")
    s.add_argument("--mode", choices=["single", "two-model", "records"], required=True)
    s.add_argument("--new", required=True)
    s.add_argument("--old")
    s.add_argument("--data", required=True, help="CSV of target records (known attributes, label)")
    s.add_argument("--ids", help="comma-separated record ids (default: all)")
    s.add_argument("--direction", choices=["drop", "rise"], default="drop")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("experiment", help="run a configured experiment")
    s.add_argument("config")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int)
    s.add_argument("--fresh-seed", action="store_true")
    s.add_argument("--null-world", action="store_true",
                   help="retrain on unchanged data and report attack degeneracy")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("report", help="summarize a result file, emit ROC CSV")
    s.add_argument("result")
    s.add_argument("--roc-csv")
    s.add_argument("--low-fpr", type=float, default=0.1)
    s.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if argv is not None:
        sys.argv = ["updateleak", *argv]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BrokenPipeError:
        # output piped into e.g. `head`; silence the interpreter's flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except (ConfigError, ValidationError, SchemaError, yaml.YAMLError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as e:
        print(f"training failed: {e}", file=sys.stderr)
        return EXIT_TRAINING
    except (DataError, ResultError, FileNotFoundError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
