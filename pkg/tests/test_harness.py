import json

import pytest
import yaml

from conftest import tiny_spec
from updateleak.harness import (ConfigError, ExperimentConfig, ResultError, compute_aggregate,
                                load_config, load_result, null_world_check, persist_result,
                                roc_rows, run_experiment, summary_rows, write_tables)


def attr_cfg(**kw):
    base = dict(kind="attribute_inference", data={"synthetic": tiny_spec(n=600).model_dump()},
                split={"train": 400, "test": 200},
                model={"family": "logistic"},
                update={"rules": [{"before": "a", "after": "b"}, {"before": "c", "after": "a"}],
                        "size": 3},
                repetitions=3)
    base.update(kw)
    return ExperimentConfig.model_validate(base)


def ri_cfg(**kw):
    base = dict(kind="record_inference", data={"synthetic": tiny_spec(n=600).model_dump()},
                split={"train": 400, "test": 200},
                model={"family": "mlp", "hidden_layers": [8], "max_epochs": 2},
                update={"rules": [{"before": "a", "after": "b"}]},
                repetitions=2,
                record_inference={"candidates": 60, "updated": 6, "k": 6})
    base.update(kw)
    return ExperimentConfig.model_validate(base)


class TestConfig:
    def test_load_resolves_paths_and_spec(self, tmp_path):
        spec = tmp_path / "spec.yaml"
        spec.write_text(yaml.safe_dump(tiny_spec(n=100).model_dump()))
        cfg = tmp_path / "exp.yaml"
        cfg.write_text(yaml.safe_dump({
            "kind": "attribute_inference", "data": {"synthetic": "spec.yaml"},
            "split": {"train": 60, "test": 40}, "update": {"rules": [{"before": "a", "after": "b"}],
                                                          "size": 1}}))
        c = load_config(cfg)
        assert c.data.synthetic.n == 100
        assert load_config(cfg, seed_policy="fresh_seed").seed_policy == "fresh_seed"

    def test_unknown_key_is_named(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("kind: attribute_inference\nbogus_key: 1\n")
        with pytest.raises(ConfigError, match="bogus_key"):
            load_config(p)

    def test_nested_unknown_key_is_named(self):
        with pytest.raises(ValueError, match="lr"):
            attr_cfg(model={"family": "logistic", "lr": 0.1})

    def test_zero_update_size_rejected(self):
        with pytest.raises(ValueError):
            attr_cfg(update={"rules": [{"before": "a", "after": "b"}], "size": 0})

    def test_rule_without_count_or_size(self):
        with pytest.raises(ValueError, match="count"):
            attr_cfg(update={"rules": [{"before": "a", "after": "b"}]})

    def test_record_inference_needs_section(self):
        with pytest.raises(ValueError):
            ri_cfg(record_inference=None)

    def test_k_larger_than_candidates(self):
        with pytest.raises(ValueError):
            ri_cfg(record_inference={"candidates": 5, "updated": 2, "k": 6})

    def test_not_a_mapping(self, tmp_path):
        p = tmp_path / "x.yaml"
        p.write_text("- 1\n")
        with pytest.raises(ConfigError):
            load_config(p)


class TestAttributeExperiment:
    def test_runs_and_aggregates(self):
        r = run_experiment(attr_cfg())
        agg = r["aggregate"]
        assert agg["repetitions_ok"] == 3
        assert agg["n_guesses"] == 3 * 2 * 3
        assert 0 <= agg["two_model_success"] <= 1
        assert sum(agg["two_model_histogram"].values()) == agg["n_guesses"]
        assert [b["after"] for b in agg["by_rule"]] == ["b", "a"]
        assert agg["random_baseline"] == pytest.approx(1 / 3)
        assert {g["truth"] for rep in r["repetitions"] for g in rep["guesses"]} == {"a", "b"}

    def test_deterministic(self, tmp_path):
        persist_result(run_experiment(attr_cfg()), tmp_path / "a.json")
        persist_result(run_experiment(attr_cfg()), tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_seed_policies(self):
        same = run_experiment(attr_cfg(repetitions=2))["repetitions"]
        assert all(r["train_seed_old"] == r["train_seed_new"] == 0 for r in same)
        fresh = run_experiment(attr_cfg(repetitions=2, seed_policy="fresh_seed"))["repetitions"]
        assert [r["train_seed_new"] for r in fresh] == [100000, 100001]
        own = run_experiment(attr_cfg(repetitions=2, share_original_model=False))["repetitions"]
        assert [r["train_seed_old"] for r in own] == [0, 1]

    def test_parallel_matches_serial(self):
        a = run_experiment(attr_cfg(repetitions=2), workers=1)
        b = run_experiment(attr_cfg(repetitions=2), workers=2)
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_training_failure_is_recorded(self):
        cfg = attr_cfg(model={"family": "mlp", "hidden_layers": [8], "max_epochs": 40,
                              "learning_rate": 1e4}, repetitions=1)
        r = run_experiment(cfg)
        assert r["aggregate"]["repetitions_failed"] == 1
        assert "diverged" in r["repetitions"][0]["error"]


class TestRecordExperiment:
    def test_runs(self):
        r = run_experiment(ri_cfg())
        agg = r["aggregate"]
        assert agg["random_baseline_hits"] == pytest.approx(6 * 6 / 60)
        for m in ("two_model", "single_model"):
            assert len(agg[m]["roc"]["fpr"]) == 61
            assert agg[m]["roc"]["tpr"][0] == 0 and agg[m]["roc"]["tpr"][-1] == 1
            assert sum(agg[m]["confusion_total"].values()) == 2 * 60
        rep = r["repetitions"][0]
        assert len(rep["updated"]) == 6 and set(rep["updated"]) <= set(rep["candidates"])
        rows = roc_rows(r)
        assert rows[0][0] == 0 and len(rows) == 61

    def test_too_few_eligible(self):
        with pytest.raises(ConfigError, match="candidates requested"):
            run_experiment(ri_cfg(record_inference={"candidates": 390, "updated": 6}))


class TestNullWorld:
    @pytest.mark.parametrize("family", ["logistic", "mlp"])
    def test_degenerates(self, family):
        rep = null_world_check(attr_cfg(model={"family": family, "hidden_layers": [4],
                                               "max_epochs": 2}), n_candidates=50)
        assert rep["datasets_identical"] and rep["models_identical"]
        assert rep["max_abs_score"] == 0.0 and rep["score_order_is_id_order"]
        assert rep["two_model_guesses"] == [rep["first_candidate"]]


class TestPersistence:
    def test_round_trip(self, tmp_path):
        r = run_experiment(ri_cfg())
        persist_result(r, tmp_path / "r.json")
        back = load_result(tmp_path / "r.json")
        assert back["aggregate"] == json.loads(json.dumps(r["aggregate"]))
        assert compute_aggregate(back) == back["aggregate"]

    def test_tampered_aggregate(self, tmp_path):
        r = run_experiment(attr_cfg(repetitions=1))
        r["aggregate"]["two_model_success"] = 2.0
        persist_result(r, tmp_path / "r.json")
        with pytest.raises(ResultError, match="do not match"):
            load_result(tmp_path / "r.json")

    def test_tampered_guess(self, tmp_path):
        r = run_experiment(attr_cfg(repetitions=1))
        g = r["repetitions"][0]["guesses"][0]
        g["two"] = "c" if g["two"] != "c" else "a"
        persist_result(r, tmp_path / "r.json")
        with pytest.raises(ResultError):
            load_result(tmp_path / "r.json")

    def test_missing_and_corrupt(self, tmp_path):
        with pytest.raises(ResultError, match="no such"):
            load_result(tmp_path / "nope.json")
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(ResultError, match="corrupt"):
            load_result(tmp_path / "bad.json")
        (tmp_path / "old.json").write_text('{"format_version": 0}')
        with pytest.raises(ResultError, match="version"):
            load_result(tmp_path / "old.json")

    def test_tables(self, tmp_path):
        r = run_experiment(ri_cfg())
        paths = write_tables(r, tmp_path)
        names = {p.name for p in paths}
        assert "summary.csv" in names and "roc.csv" in names
        assert summary_rows(r)
