import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from updateleak.tabular import (AttributeSpec, DataError, Dataset, Encoder, Record, Schema,
                                SchemaError, SyntheticSpec, UpdateRule, apply_update_batch,
                                candidate_values, encode, generate_synthetic, load_csv,
                                load_schema, load_synthetic_spec, sample_split, save_schema,
                                write_csv)

from conftest import CONFIGS, tiny_spec


class TestSchema:
    def test_needs_one_target_and_label(self):
        with pytest.raises(SchemaError):
            Schema([AttributeSpec("a", "categorical", "known", ("x", "y"))])

    def test_label_needs_two_values(self):
        with pytest.raises(SchemaError):
            Schema([AttributeSpec("t", "categorical", "target", ("x",)),
                    AttributeSpec("y", "categorical", "label", ("only",))])

    @pytest.mark.parametrize("domain", [("a", "a"), ("a", "")])
    def test_domain_unique_nonempty(self, domain):
        with pytest.raises(SchemaError):
            AttributeSpec("t", "categorical", "target", domain)

    def test_yaml_round_trip(self, small_schema, tmp_path):
        save_schema(small_schema, tmp_path / "s.yaml")
        assert load_schema(tmp_path / "s.yaml") == small_schema

    def test_unknown_key_rejected(self):
        with pytest.raises(SchemaError, match="unknown schema keys"):
            Schema.from_dict({"attributes": [{"name": "t", "role": "target", "domain": ["a"],
                                              "colour": "red"}]})


class TestCsv:
    def _write(self, path, text):
        path.write_text(text, encoding="utf-8")
        return path

    def test_three_valid_rows(self, small_schema, tmp_path):
        p = self._write(tmp_path / "d.csv", "marital,edu,age,income\n"
                        "married,low,30,no\ndivorced,high,41.5,yes\n\"widowed\",mid,55,no\n")
        ds = load_csv(p, small_schema)
        assert len(ds) == 3
        assert ds.ids.tolist() == [0, 1, 2]
        assert ds.dropped_rows == 0
        assert ds.record(1).values == {"marital": "divorced", "edu": "high", "age": 41.5,
                                       "income": "yes"}

    def test_row_with_missing_cell_dropped(self, small_schema, tmp_path):
        p = self._write(tmp_path / "d.csv", "marital,edu,age,income\n"
                        "married,low,30,no\ndivorced,,41,yes\nwidowed,mid,55,no\n")
        ds = load_csv(p, small_schema)
        assert len(ds) == 2 and ds.dropped_rows == 1

    def test_unparseable_rows_dropped(self, small_schema, tmp_path):
        p = self._write(tmp_path / "d.csv", "marital,edu,age,income\n"
                        "married,low,abc,no\nsingle,low,3,no\nmarried,low,nan,no\nmarried,low,1,yes\n")
        ds = load_csv(p, small_schema)
        assert len(ds) == 1 and ds.dropped_rows == 3

    def test_header_mismatch(self, small_schema, tmp_path):
        p = self._write(tmp_path / "d.csv", "marital,edu,income\nmarried,low,no\n")
        with pytest.raises(DataError, match="header"):
            load_csv(p, small_schema)

    def test_missing_file(self, small_schema, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_csv(tmp_path / "nope.csv", small_schema)

    def test_all_rows_dropped(self, small_schema, tmp_path):
        p = self._write(tmp_path / "d.csv", "marital,edu,age,income\nmarried,,1,no\n")
        with pytest.raises(DataError, match="no valid rows"):
            load_csv(p, small_schema)

    def test_write_load_identity(self, small_dataset, tmp_path):
        write_csv(small_dataset, tmp_path / "d.csv")
        assert load_csv(tmp_path / "d.csv", small_dataset.schema) == small_dataset

    def test_value_mapping_coarsens(self, tmp_path):
        schema = Schema([
            AttributeSpec("edu", "categorical", "target", ("medium", "high"),
                          mapping={"hs": "medium", "college": "medium", "phd": "high"}),
            AttributeSpec("y", "categorical", "label", ("0", "1")),
        ])
        p = self._write(tmp_path / "d.csv", "edu,y\nhs,0\nphd,1\ncollege,1\nhigh,0\n")
        ds = load_csv(p, schema)
        assert [r.values["edu"] for r in ds.records()] == ["medium", "high", "medium", "high"]


class TestEncode:
    def test_one_hot(self):
        schema = Schema([AttributeSpec("t", "categorical", "target", ("A", "B", "C")),
                         AttributeSpec("y", "categorical", "label", ("0", "1"))])
        enc = Encoder(schema)
        assert encode({"t": "B", "y": "1"}, enc).tolist() == [0.0, 1.0, 0.0]

    def test_numeric_mean_maps_to_zero(self, small_dataset):
        enc = Encoder.fit(small_dataset)
        rec = dict(small_dataset.record(0).values)
        rec["age"] = float(small_dataset.columns["age"].mean())
        x = enc.encode(rec)
        assert x[enc.offsets["age"]] == pytest.approx(0.0, abs=1e-12)

    def test_zero_std_substituted(self, small_schema):
        ds = Dataset(small_schema, [0, 1], {"marital": [0, 1], "edu": [0, 0], "age": [5.0, 5.0],
                                            "income": [0, 1]})
        enc = Encoder.fit(ds)
        assert enc.stds["age"] == 1.0
        assert enc.transform(ds)[:, enc.offsets["age"]].tolist() == [0.0, 0.0]

    def test_two_categorical_attrs_width_six(self):
        schema = Schema([AttributeSpec("t", "categorical", "target", ("a", "b", "c")),
                         AttributeSpec("k", "categorical", "known", ("x", "y", "z")),
                         AttributeSpec("y", "categorical", "label", ("0", "1"))])
        v = Encoder(schema).encode({"t": "c", "k": "x", "y": "0"})
        assert v.tolist() == [0, 0, 1, 1, 0, 0]

    def test_unknown_category(self, small_dataset):
        rec = dict(small_dataset.record(0).values, marital="single")
        with pytest.raises(DataError, match="unknown category"):
            Encoder.fit(small_dataset).encode(rec)

    def test_label_excluded(self, small_dataset):
        assert Encoder.fit(small_dataset).width == 3 + 3 + 1

    def test_injective_on_categorical_combinations(self):
        schema = Schema([AttributeSpec("t", "categorical", "target", ("a", "b", "c")),
                         AttributeSpec("k", "categorical", "known", ("x", "y")),
                         AttributeSpec("y", "categorical", "label", ("0", "1"))])
        enc = Encoder(schema)
        vecs = {tuple(enc.encode({"t": t, "k": k})) for t in "abc" for k in "xy"}
        assert len(vecs) == 6


class TestSplit:
    def test_disjoint(self, small_dataset):
        tr, te = sample_split(small_dataset.take(np.arange(10)), 6, 4, seed=1)
        assert len(tr) == 6 and len(te) == 4
        assert set(tr.ids) | set(te.ids) == set(range(10))
        assert not set(tr.ids) & set(te.ids)

    def test_deterministic(self, small_dataset):
        a = sample_split(small_dataset, 20, 10, seed=5)
        b = sample_split(small_dataset, 20, 10, seed=5)
        assert a[0] == b[0] and a[1] == b[1]

    def test_insufficient(self, small_dataset):
        with pytest.raises(DataError):
            sample_split(small_dataset, 30, 11, seed=0)


class TestUpdates:
    def test_single_record_rule(self, small_schema):
        ds = Dataset(small_schema, np.arange(8),
                     {"marital": [0, 0, 0, 0, 0, 1, 2, 1], "edu": [0] * 8, "age": [1.0] * 8,
                      "income": [0, 1] * 4})
        new, (receipt,) = apply_update_batch(ds, [UpdateRule("marital", "married", "divorced", 1)], 4)
        assert len(receipt.updated_ids) == 1
        (rid,) = receipt.updated_ids
        assert ds.record(rid).values["marital"] == "married"
        assert new.record(rid).values["marital"] == "divorced"
        assert int(np.sum(new.columns["marital"] != ds.columns["marital"])) == 1

    def test_count_must_be_positive(self):
        with pytest.raises(DataError):
            UpdateRule("marital", "married", "divorced", 0)

    def test_input_unchanged(self, small_dataset):
        before = small_dataset.columns["marital"].copy()
        apply_update_batch(small_dataset, [UpdateRule("marital", "married", "divorced", 2)], 0)
        assert np.array_equal(small_dataset.columns["marital"], before)

    def test_two_rule_batch_exact_diff(self):
        states = ("CA", "NY", "VA", "TX")
        schema = Schema([AttributeSpec("state", "categorical", "target", states),
                         AttributeSpec("amt", "numeric", "known"),
                         AttributeSpec("y", "categorical", "label", ("0", "1"))])
        rng = np.random.default_rng(0)
        ds = Dataset(schema, np.arange(300), {"state": rng.integers(0, 4, 300),
                                              "amt": rng.normal(size=300),
                                              "y": rng.integers(0, 2, 300)})
        rules = [UpdateRule("state", "CA", "NY", 10), UpdateRule("state", "VA", "CA", 10)]
        new, receipts = apply_update_batch(ds, rules, seed=9)
        # cell-by-cell diff of the two datasets
        changed = set()
        for r_old, r_new in zip(ds.records(), new.records()):
            for name in schema.names:
                if r_old.values[name] != r_new.values[name]:
                    assert name == "state"
                    changed.add(r_old.id)
        ids = receipts[0].updated_ids | receipts[1].updated_ids
        assert len(ids) == 20 and changed == ids
        for rec in receipts:
            for rid in rec.updated_ids:
                assert ds.record(rid).values["state"] == rec.rule.before
                assert new.record(rid).values["state"] == rec.rule.after

    def test_later_rule_cannot_reclaim(self, small_schema):
        ds = Dataset(small_schema, np.arange(4), {"marital": [0, 0, 1, 2], "edu": [0] * 4,
                                                  "age": [0.0] * 4, "income": [0] * 4})
        rules = [UpdateRule("marital", "married", "divorced", 2),
                 UpdateRule("marital", "divorced", "widowed", 2)]
        with pytest.raises(DataError, match="eligible"):
            apply_update_batch(ds, rules, 0)

    def test_insufficient_eligible(self, small_dataset):
        with pytest.raises(DataError):
            apply_update_batch(small_dataset, [UpdateRule("marital", "married", "widowed", 1000)], 0)

    def test_non_target_rule_rejected(self, small_dataset):
        with pytest.raises(DataError):
            apply_update_batch(small_dataset, [UpdateRule("edu", "low", "high", 1)], 0)

    def test_among_restricts(self, small_dataset):
        married = [int(i) for i in small_dataset.ids
                   if small_dataset.record(int(i)).values["marital"] == "married"][:3]
        _, (rec,) = apply_update_batch(small_dataset, [UpdateRule("marital", "married", "widowed", 2)],
                                       1, among=married)
        assert rec.updated_ids <= set(married)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), c1=st.integers(1, 5), c2=st.integers(1, 5))
    def test_diff_equals_sum_of_counts(self, seed, c1, c2):
        ds = generate_synthetic(tiny_spec(n=300), seed=1)
        rules = [UpdateRule("t", "a", "b", c1), UpdateRule("t", "c", "a", c2)]
        new, _ = apply_update_batch(ds, rules, seed)
        for name in ds.schema.names:
            diff = int(np.sum(new.columns[name] != ds.columns[name]))
            assert diff == (c1 + c2 if name == "t" else 0)
        again, _ = apply_update_batch(ds, rules, seed)
        assert again == new


class TestCandidates:
    def test_marital_status_five(self):
        schema = Schema([AttributeSpec("MaritalStatus", "categorical", "target",
                                       ("married", "divorced", "separated", "widowed", "unmarried")),
                         AttributeSpec("y", "categorical", "label", ("0", "1"))])
        assert len(candidate_values(schema)) == 5

    def test_lendingclub_state_fifty_one(self):
        schema = load_schema(CONFIGS / "lendingclub_schema.yaml")
        assert len(candidate_values(schema)) == 51

    def test_single_value(self):
        schema = Schema([AttributeSpec("t", "categorical", "target", ("only",)),
                         AttributeSpec("y", "categorical", "label", ("0", "1"))])
        assert candidate_values(schema) == ["only"]


class TestSynthetic:
    def _spec(self, probs, n=10_000, noise=()):
        k = len(probs)
        return SyntheticSpec.model_validate({
            "n": n, "target": {"values": [f"v{i}" for i in range(k)], "probs": probs,
                               "logits": [0.0] * k}, "noise": list(noise)})

    def test_uniform_counts_within_three_sigma(self):
        ds = generate_synthetic(self._spec([0.2] * 5), seed=0)
        counts = np.bincount(ds.columns["target"], minlength=5)
        bound = 3 * math.sqrt(10_000 * 0.2 * 0.8)
        assert np.all(np.abs(counts - 2000) <= bound)

    def test_rare_value_count(self):
        ds = generate_synthetic(self._spec([0.499, 0.499, 0.002]), seed=0)
        count = int(np.sum(ds.columns["target"] == 2))
        assert abs(count - 20) <= 3 * math.sqrt(10_000 * 0.002 * 0.998)

    def test_no_noise_attributes(self):
        ds = generate_synthetic(self._spec([0.5, 0.5], n=10), seed=0)
        assert ds.schema.names == ["target", "label"]

    def test_deterministic(self):
        assert generate_synthetic(tiny_spec(), 3) == generate_synthetic(tiny_spec(), 3)
        assert generate_synthetic(tiny_spec(), 3) != generate_synthetic(tiny_spec(), 4)

    @pytest.mark.parametrize("probs", [[0.5, 0.6], [1.2, -0.2]])
    def test_invalid_probabilities(self, probs):
        with pytest.raises(ValueError):
            self._spec(probs)

    def test_planted_label_signal(self):
        spec = SyntheticSpec.model_validate({
            "n": 20_000, "target": {"values": ["lo", "hi"], "probs": [0.5, 0.5],
                                    "logits": [-2.0, 2.0]}})
        ds = generate_synthetic(spec, 1)
        t, y = ds.columns["target"], ds.columns["label"]
        p_hi = y[t == 1].mean()
        assert abs(p_hi - 1 / (1 + math.exp(-2))) < 0.02

    def test_substrate_file_loads(self):
        spec = load_synthetic_spec(CONFIGS / "synthetic_substrate.yaml")
        assert min(spec.target.probs) == 0.005
