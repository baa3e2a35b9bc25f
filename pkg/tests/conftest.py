from pathlib import Path

import numpy as np
import pytest

from updateleak.tabular import (AttributeSpec, Dataset, Schema, SyntheticSpec,
                                generate_synthetic)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def small_schema():
    return Schema([
        AttributeSpec("marital", "categorical", "target", ("married", "divorced", "widowed")),
        AttributeSpec("edu", "categorical", "known", ("low", "mid", "high")),
        AttributeSpec("age", "numeric", "known"),
        AttributeSpec("income", "categorical", "label", ("no", "yes")),
    ])


@pytest.fixture
def small_dataset(small_schema):
    rng = np.random.default_rng(3)
    n = 40
    cols = {
        "marital": rng.integers(0, 3, n),
        "edu": rng.integers(0, 3, n),
        "age": rng.normal(40, 10, n),
        "income": rng.integers(0, 2, n),
    }
    return Dataset(small_schema, np.arange(n), cols)


def tiny_spec(n=2000, **kw) -> SyntheticSpec:
    base = dict(
        n=n,
        target={"name": "t", "values": ["a", "b", "c"], "probs": [0.5, 0.3, 0.2],
                "logits": [2.0, -1.0, 0.5]},
        noise=[{"name": "v", "domain": ["x", "y"], "effects": [0.5, -0.5]},
               {"name": "z", "kind": "numeric", "slope": 0.5}],
    )
    base.update(kw)
    return SyntheticSpec.model_validate(base)


@pytest.fixture
def tiny_data():
    return generate_synthetic(tiny_spec(), seed=11)


# pass/fail lines emitted by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
