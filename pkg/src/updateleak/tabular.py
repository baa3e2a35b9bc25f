"""Tabular datasets: schemas, CSV ingestion, encoding, sampling and updates.

Datasets are stored column-wise. Categorical cells are integer codes into the
attribute's declared domain, numeric cells are float64. All arrays are marked
read-only after construction; operations that change data return new objects.
"""
from __future__ import annotations

import csv
import logging
import math
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

logger = logging.getLogger(__name__)

CATEGORICAL = "categorical"
NUMERIC = "numeric"
ROLES = ("target", "known", "label")


class SchemaError(ValueError):
    """Schema declaration is inconsistent."""


class DataError(ValueError):
    """Data does not satisfy the schema or an operation's preconditions."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    kind: str
    role: str
    domain: tuple[str, ...] = ()
    # raw CSV value -> domain value, applied on load (e.g. coarsening a fine
    # attribute into a few levels)
    mapping: Mapping[str, str] | None = None

    def __post_init__(self):
        if not self.name:
            raise SchemaError("attribute name must be non-empty")
        if self.kind not in (CATEGORICAL, NUMERIC):
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"{self.name}: unknown role {self.role!r}")
        object.__setattr__(self, "domain", tuple(self.domain))
        if self.kind == CATEGORICAL:
            if not self.domain:
                raise SchemaError(f"{self.name}: categorical attribute needs a domain")
            if any(not str(v) for v in self.domain):
                raise SchemaError(f"{self.name}: empty category in domain")
            if len(set(self.domain)) != len(self.domain):
                raise SchemaError(f"{self.name}: duplicate categories in domain")
        elif self.domain:
            raise SchemaError(f"{self.name}: numeric attribute cannot declare a domain")
        if self.mapping is not None:
            bad = [v for v in self.mapping.values() if v not in self.domain]
            if bad:
                raise SchemaError(f"{self.name}: mapping targets outside domain: {bad}")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    def code(self, value: str) -> int:
        try:
            return self.domain.index(value)
        except ValueError:
            raise DataError(f"{self.name}: unknown category {value!r}") from None


class Schema:
    """Ordered attribute declarations with exactly one target and one label."""

    def __init__(self, attributes: Iterable[AttributeSpec]):
        self.attributes = tuple(attributes)
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate attribute names")
        targets = [a for a in self.attributes if a.role == "target"]
        labels = [a for a in self.attributes if a.role == "label"]
        if len(targets) != 1 or len(labels) != 1:
            raise SchemaError("schema needs exactly one target and one label attribute")
        self.target = targets[0]
        self.label = labels[0]
        if not self.target.is_categorical:
            raise SchemaError("target attribute must be categorical")
        if not self.label.is_categorical or len(self.label.domain) < 2:
            raise SchemaError("label attribute must be categorical with >= 2 values")
        self._by_name = {a.name: a for a in self.attributes}

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    @property
    def features(self) -> list[AttributeSpec]:
        """Model inputs (target and known attributes) in schema order."""
        return [a for a in self.attributes if a.role != "label"]

    @property
    def known(self) -> list[AttributeSpec]:
        return [a for a in self.attributes if a.role == "known"]

    def __getitem__(self, name: str) -> AttributeSpec:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __eq__(self, other) -> bool:
        return isinstance(other, Schema) and self.attributes == other.attributes

    def __hash__(self) -> int:
        return hash(self.attributes)

    def __repr__(self) -> str:
        return f"Schema({self.names})"

    def to_dict(self) -> dict:
        out = []
        for a in self.attributes:
            d = {"name": a.name, "kind": a.kind, "role": a.role}
            if a.domain:
                d["domain"] = list(a.domain)
            if a.mapping:
                d["mapping"] = dict(a.mapping)
            out.append(d)
        return {"attributes": out}

    @classmethod
    def from_dict(cls, data: Mapping) -> Schema:
        if not isinstance(data, Mapping) or set(data) != {"attributes"}:
            raise SchemaError("schema must be a mapping with a single 'attributes' key")
        attrs = []
        allowed = {"name", "kind", "role", "domain", "mapping"}
        for entry in data["attributes"]:
            unknown = set(entry) - allowed
            if unknown:
                raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
            domain = tuple(str(v) for v in entry.get("domain", ()))
            mapping = entry.get("mapping")
            if mapping is not None:
                mapping = {str(k): str(v) for k, v in mapping.items()}
            attrs.append(AttributeSpec(
                name=str(entry["name"]), kind=entry.get("kind", CATEGORICAL),
                role=entry.get("role", "known"), domain=domain, mapping=mapping))
        return cls(attrs)


def load_schema(path: str | Path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return Schema.from_dict(yaml.safe_load(fh))


def save_schema(schema: Schema, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(schema.to_dict(), fh, sort_keys=False)


@dataclass(frozen=True)
class Record:
    id: int
    values: Mapping[str, str | float]


class Dataset:
    """An immutable, column-oriented collection of records sharing a schema."""

    def __init__(self, schema: Schema, ids, columns: Mapping[str, np.ndarray],
                 dropped_rows: int = 0):
        self.schema = schema
        self.ids = _readonly(np.asarray(ids, dtype=np.int64))
        n = len(self.ids)
        if len(np.unique(self.ids)) != n:
            raise DataError("record ids must be unique")
        cols = {}
        for a in schema.attributes:
            if a.name not in columns:
                raise DataError(f"missing column {a.name!r}")
            if a.is_categorical:
                col = np.asarray(columns[a.name], dtype=np.int64)
                if col.size and (col.min() < 0 or col.max() >= len(a.domain)):
                    raise DataError(f"{a.name}: category code out of range")
            else:
                col = np.asarray(columns[a.name], dtype=np.float64)
                if not np.all(np.isfinite(col)):
                    raise DataError(f"{a.name}: non-finite numeric value")
            if col.shape != (n,):
                raise DataError(f"{a.name}: column length {col.shape} != {n}")
            cols[a.name] = _readonly(col)
        self.columns = cols
        self.dropped_rows = dropped_rows
        self._pos = None

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Dataset) and self.schema == other.schema
                and np.array_equal(self.ids, other.ids)
                and all(np.array_equal(self.columns[k], other.columns[k]) for k in self.columns))

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, schema={self.schema.names})"

    def position(self, record_id: int) -> int:
        if self._pos is None:
            self._pos = {int(i): p for p, i in enumerate(self.ids)}
        try:
            return self._pos[int(record_id)]
        except KeyError:
            raise DataError(f"no record with id {record_id}") from None

    def value(self, pos: int, name: str) -> str | float:
        a = self.schema[name]
        cell = self.columns[name][pos]
        return a.domain[cell] if a.is_categorical else float(cell)

    def record_at(self, pos: int) -> Record:
        return Record(int(self.ids[pos]), {n: self.value(pos, n) for n in self.schema.names})

    def record(self, record_id: int) -> Record:
        return self.record_at(self.position(record_id))

    def records(self) -> Iterator[Record]:
        for pos in range(len(self)):
            yield self.record_at(pos)

    def take(self, positions) -> Dataset:
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(self.schema, self.ids[positions],
                       {k: v[positions] for k, v in self.columns.items()})

    def replace_column(self, name: str, values) -> Dataset:
        cols = dict(self.columns)
        cols[name] = values
        return Dataset(self.schema, self.ids, cols)

    @classmethod
    def from_records(cls, schema: Schema, records: Iterable[Record]) -> Dataset:
        records = list(records)
        cols = {}
        for a in schema.attributes:
            vals = []
            for r in records:
                if a.name not in r.values:
                    raise DataError(f"record {r.id} lacks attribute {a.name!r}")
                v = r.values[a.name]
                vals.append(a.code(v) if a.is_categorical else float(v))
            cols[a.name] = np.array(vals, dtype=np.int64 if a.is_categorical else np.float64)
        return cls(schema, [r.id for r in records], cols)


# -- CSV ---------------------------------------------------------------------

def _parse_cell(attr: AttributeSpec, raw: str):
    """Return the stored cell value, or None if the cell is missing/unparseable."""
    raw = raw.strip()
    if raw == "":
        return None
    if attr.is_categorical:
        if attr.mapping is not None:
            raw = attr.mapping.get(raw, raw)
        try:
            return attr.domain.index(raw)
        except ValueError:
            return None
    try:
        x = float(raw)
    except ValueError:
        return None
    return x if math.isfinite(x) else None


def load_csv(path: str | Path, schema: Schema) -> Dataset:
    """Read a CSV whose header matches the schema attribute names.

    Ids are assigned 0..n-1 in file order among the kept rows. Rows with a
    missing or unparseable cell are dropped, never imputed; the number dropped
    is available as ``dataset.dropped_rows``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such CSV file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if sorted(header) != sorted(schema.names):
            raise DataError(f"{path}: header {header} does not match schema {schema.names}")
        attrs = [schema[h] for h in header]
        cols: dict[str, list] = {a.name: [] for a in attrs}
        dropped = 0
        for row in reader:
            if not row:
                continue
            if len(row) != len(attrs):
                dropped += 1
                continue
            cells = [_parse_cell(a, raw) for a, raw in zip(attrs, row)]
            if any(c is None for c in cells):
                dropped += 1
                continue
            for a, c in zip(attrs, cells):
                cols[a.name].append(c)
    n = len(cols[attrs[0].name])
    if n == 0:
        raise DataError(f"{path}: no valid rows ({dropped} dropped)")
    if dropped:
        logger.info("%s: dropped %d rows with missing or invalid cells", path, dropped)
    arrays = {a.name: np.array(cols[a.name], dtype=np.int64 if a.is_categorical else np.float64)
              for a in attrs}
    return Dataset(schema, np.arange(n), arrays, dropped_rows=dropped)


def write_csv(dataset: Dataset, path: str | Path) -> None:
    schema = dataset.schema
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.names)
        cols = []
        for a in schema.attributes:
            col = dataset.columns[a.name]
            if a.is_categorical:
                cols.append([a.domain[c] for c in col])
            else:
                cols.append([repr(float(x)) for x in col])
        for row in zip(*cols):
            w.writerow(row)


# -- encoding ----------------------------------------------------------------

class Encoder:
    """One-hot / z-score feature encoder.

    Categorical inputs are one-hot in domain order; numeric inputs are
    standardized with statistics from the dataset given to :meth:`fit`
    (a zero std is replaced by 1). The label is excluded.
    """

    def __init__(self, schema: Schema, means: Mapping[str, float] | None = None,
                 stds: Mapping[str, float] | None = None):
        self.schema = schema
        self.means = dict(means or {})
        self.stds = dict(stds or {})
        for a in schema.features:
            if not a.is_categorical:
                self.means.setdefault(a.name, 0.0)
                self.stds.setdefault(a.name, 1.0)
        self.offsets = {}
        off = 0
        for a in schema.features:
            self.offsets[a.name] = off
            off += len(a.domain) if a.is_categorical else 1
        self.width = off

    @classmethod
    def fit(cls, dataset: Dataset) -> Encoder:
        means, stds = {}, {}
        for a in dataset.schema.features:
            if not a.is_categorical:
                col = dataset.columns[a.name]
                means[a.name] = float(col.mean())
                sd = float(col.std())
                stds[a.name] = sd if sd > 0 else 1.0
        return cls(dataset.schema, means, stds)

    def transform(self, dataset: Dataset) -> np.ndarray:
        return self._encode_columns(dataset.columns, len(dataset))

    def encode(self, values: Mapping[str, str | float]) -> np.ndarray:
        return self.encode_many([values])[0]

    def encode_many(self, rows: Sequence[Mapping[str, str | float]]) -> np.ndarray:
        cols = {}
        for a in self.schema.features:
            if a.is_categorical:
                cols[a.name] = np.array([a.code(r[a.name]) for r in rows], dtype=np.int64)
            else:
                cols[a.name] = np.array([float(r[a.name]) for r in rows], dtype=np.float64)
        return self._encode_columns(cols, len(rows))

    def _encode_columns(self, cols: Mapping[str, np.ndarray], n: int) -> np.ndarray:
        X = np.zeros((n, self.width), dtype=np.float64)
        rows = np.arange(n)
        for a in self.schema.features:
            off = self.offsets[a.name]
            if a.is_categorical:
                X[rows, off + cols[a.name]] = 1.0
            else:
                X[:, off] = (cols[a.name] - self.means[a.name]) / self.stds[a.name]
        return X

    def labels(self, dataset: Dataset) -> np.ndarray:
        return np.asarray(dataset.columns[self.schema.label.name], dtype=np.int64)

    def to_dict(self) -> dict:
        return {"schema": self.schema.to_dict(), "means": self.means, "stds": self.stds}

    @classmethod
    def from_dict(cls, d: Mapping) -> Encoder:
        return cls(Schema.from_dict(d["schema"]), d["means"], d["stds"])


def encode(record: Record | Mapping, encoder: Encoder) -> np.ndarray:
    values = record.values if isinstance(record, Record) else record
    return encoder.encode(values)


# -- sampling and updates ------------------------------------------------------

def sample_split(dataset: Dataset, n_train: int, n_test: int, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint uniform random train/test subsets; records keep dataset order."""
    if n_train < 1 or n_test < 0:
        raise DataError("n_train must be >= 1 and n_test >= 0")
    if n_train + n_test > len(dataset):
        raise DataError(f"need {n_train + n_test} records, dataset has {len(dataset)}")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    train = np.sort(perm[:n_train])
    test = np.sort(perm[n_train:n_train + n_test])
    return dataset.take(train), dataset.take(test)


@dataclass(frozen=True)
class UpdateRule:
    attribute: str
    before: str
    after: str
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise DataError(f"update count must be positive, got {self.count}")
        if self.before == self.after:
            raise DataError("update rule before and after values must differ")


@dataclass(frozen=True)
class UpdateReceipt:
    rule: UpdateRule
    updated_ids: frozenset[int] = field(default_factory=frozenset)


def apply_update_batch(dataset: Dataset, rules: Sequence[UpdateRule], seed: int,
                       among: Iterable[int] | None = None) -> tuple[Dataset, list[UpdateReceipt]]:
    """Change the target attribute of randomly chosen records, rule by rule.

    For each rule, ``count`` records holding ``before`` (and not claimed by an
    earlier rule of the batch) are drawn uniformly without replacement and get
    ``after``. ``among`` restricts eligibility to the given record ids.
    Returns the new dataset and one receipt per rule.
    """
    target = dataset.schema.target
    codes = dataset.columns[target.name].copy()
    eligible_mask = np.ones(len(dataset), dtype=bool)
    if among is not None:
        eligible_mask[:] = False
        eligible_mask[[dataset.position(i) for i in among]] = True
    rng = np.random.default_rng(seed)
    receipts = []
    for rule in rules:
        if rule.attribute != target.name:
            raise DataError(f"rule attribute {rule.attribute!r} is not the target {target.name!r}")
        before, after = target.code(rule.before), target.code(rule.after)
        pool = np.flatnonzero((dataset.columns[target.name] == before) & eligible_mask)
        if len(pool) < rule.count:
            raise DataError(f"rule {rule.before}->{rule.after}: {len(pool)} eligible records, "
                            f"{rule.count} requested")
        chosen = np.sort(rng.choice(pool, size=rule.count, replace=False))
        codes[chosen] = after
        eligible_mask[chosen] = False
        receipts.append(UpdateReceipt(rule, frozenset(int(i) for i in dataset.ids[chosen])))
    return dataset.replace_column(target.name, codes), receipts


def candidate_values(schema: Schema) -> list[str]:
    """The target attribute's full domain in canonical order."""
    return list(schema.target.domain)


# -- synthetic data ---------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TargetSpec(_Strict):
    name: str = "target"
    values: list[str]
    probs: list[float]
    # log-odds contribution of each value towards the positive label
    logits: list[float]

    @model_validator(mode="after")
    def _check(self):
        k = len(self.values)
        if k < 1 or len(self.probs) != k or len(self.logits) != k:
            raise ValueError("target values, probs and logits must have equal non-zero length")
        _check_probs(self.probs, "target")
        return self


class NoiseAttributeSpec(_Strict):
    name: str
    kind: Literal["categorical", "numeric"] = "categorical"
    domain: list[str] = Field(default_factory=list)
    probs: list[float] | None = None
    effects: list[float] | None = None
    mean: float = 0.0
    std: float = 1.0
    slope: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "categorical":
            if not self.domain:
                raise ValueError(f"{self.name}: categorical noise attribute needs a domain")
            if self.probs is not None:
                if len(self.probs) != len(self.domain):
                    raise ValueError(f"{self.name}: probs length mismatch")
                _check_probs(self.probs, self.name)
            if self.effects is not None and len(self.effects) != len(self.domain):
                raise ValueError(f"{self.name}: effects length mismatch")
        elif self.std <= 0:
            raise ValueError(f"{self.name}: std must be positive")
        return self


class SyntheticSpec(_Strict):
    """Generator for a dataset with planted label signal.

    P(label = values[1] | t, v) = sigmoid(intercept + target.logits[t]
    + sum of noise effects), where a categorical noise attribute contributes
    ``effects[v_j]`` and a numeric one ``slope * v_j``.
    """

    n: int = Field(gt=0)
    target: TargetSpec
    noise: list[NoiseAttributeSpec] = Field(default_factory=list)
    label_name: str = "label"
    label_values: list[str] = Field(default_factory=lambda: ["0", "1"])
    intercept: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        if len(self.label_values) != 2 or len(set(self.label_values)) != 2:
            raise ValueError("synthetic label needs exactly two distinct values")
        names = [self.target.name, self.label_name] + [a.name for a in self.noise]
        if len(set(names)) != len(names):
            raise ValueError("attribute names must be distinct")
        return self

    def schema(self) -> Schema:
        attrs = [AttributeSpec(self.target.name, CATEGORICAL, "target", tuple(self.target.values))]
        for a in self.noise:
            if a.kind == "categorical":
                attrs.append(AttributeSpec(a.name, CATEGORICAL, "known", tuple(a.domain)))
            else:
                attrs.append(AttributeSpec(a.name, NUMERIC, "known"))
        attrs.append(AttributeSpec(self.label_name, CATEGORICAL, "label", tuple(self.label_values)))
        return Schema(attrs)


def _check_probs(p: Sequence[float], what: str) -> None:
    arr = np.asarray(p, dtype=float)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)) or abs(arr.sum() - 1.0) > 1e-9:
        raise ValueError(f"{what}: probabilities must be non-negative and sum to 1")


def load_synthetic_spec(path: str | Path) -> SyntheticSpec:
    with open(path, encoding="utf-8") as fh:
        return SyntheticSpec.model_validate(yaml.safe_load(fh))


def generate_synthetic(spec: SyntheticSpec, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    n = spec.n
    cols = {}
    t = rng.choice(len(spec.target.values), size=n, p=spec.target.probs)
    cols[spec.target.name] = t
    logit = spec.intercept + np.asarray(spec.target.logits)[t]
    for a in spec.noise:
        if a.kind == "categorical":
            k = len(a.domain)
            codes = rng.choice(k, size=n, p=a.probs if a.probs is not None else np.full(k, 1.0 / k))
            cols[a.name] = codes
            if a.effects is not None:
                logit = logit + np.asarray(a.effects)[codes]
        else:
            x = rng.normal(a.mean, a.std, size=n)
            cols[a.name] = x
            logit = logit + a.slope * x
    p = 1.0 / (1.0 + np.exp(-logit))
    cols[spec.label_name] = (rng.random(n) < p).astype(np.int64)
    return Dataset(spec.schema(), np.arange(n), cols)
