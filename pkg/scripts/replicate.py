"""Full-scale replication runs on the real Census / LendingClub extracts.

Not part of the test suite: needs the preprocessed CSVs under data/ and hours
of CPU time. Usage:

    python3 scripts/replicate.py census      # MLP 2x256, 50k/25k split
    python3 scripts/replicate.py lendingclub # L2 logistic regression

Each run writes results/<name>/ and compares the original model's accuracy
with the expected target (informational, not asserted).
"""
import argparse
import sys
from pathlib import Path

from updateleak.harness import (format_summary, load_config, persist_result, run_experiment,
                                write_tables)

ROOT = Path(__file__).resolve().parent.parent

RUNS = {
    # expected (train, test) accuracy of the original model
    "census": ("census_mlp_married_divorced.yaml", (0.89, 0.85)),
    "census-records": ("census_record_inference.yaml", (0.89, 0.85)),
    "census-shift": ("census_distribution_shift.yaml", (0.89, 0.85)),
    "lendingclub": ("lendingclub_logistic_ca_ny.yaml", (0.80, 0.80)),
}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("run", choices=sorted(RUNS))
    p.add_argument("--workers", type=int)
    p.add_argument("--tolerance", type=float, default=0.02)
    args = p.parse_args(argv)
    config, (train_target, test_target) = RUNS[args.run]
    cfg = load_config(ROOT / "configs" / config)
    if cfg.data.csv is None or not Path(cfg.data.csv).exists():
        print(f"missing dataset {cfg.data.csv}; see README (Full-scale replication)", file=sys.stderr)
        return 2
    result = run_experiment(cfg, workers=args.workers)
    out = ROOT / "results" / args.run
    out.mkdir(parents=True, exist_ok=True)
    persist_result(result, out / "result.json")
    write_tables(result, out)
    print(format_summary(result))
    acc = result["original_model"] or result["repetitions"][0].get("accuracy_old", {})
    for key, target in (("train_accuracy", train_target), ("test_accuracy", test_target)):
        got = acc.get(key)
        if got is None:
            continue
        status = "ok" if abs(got - target) <= args.tolerance else "off-target"
        print(f"{key}: {got:.4f} (expected ~{target:.2f}) {status}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
