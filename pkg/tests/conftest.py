import json
from pathlib import Path

import pytest

from jodscale.model import (
    ComparisonGraph,
    ConditionId,
    DatasetCollection,
    DatasetMeta,
)


@pytest.fixture
def two_condition_collection():
    """Reference beats test in 75 of 100 trials; the analytic optimum is
    q_test = sqrt(2) * 1.048 * Phi^-1(0.25) ~ -1.0."""
    ref = ConditionId.reference("demo")
    test = ConditionId("demo", "c0", "dist", 1)
    graph = ComparisonGraph(2, {(1, 0): 25, (0, 1): 75})
    return DatasetCollection(
        [ref, test], graph, {}, {"demo": DatasetMeta("demo", "pwc")}
    )


def write_two_condition_fixture(root: Path) -> Path:
    """The same fixture as files, for loader and CLI tests."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "conditions.csv").write_text(
        "condition\ndemo/ref/reference/0\ndemo/c0/dist/1\n"
    )
    (root / "comparisons.csv").write_text(
        "cond_a,cond_b,count_a_over_b\n"
        "demo/c0/dist/1,demo/ref/reference/0,25\n"
        "demo/ref/reference/0,demo/c0/dist/1,75\n"
    )
    manifest = {
        "datasets": [
            {
                "name": "demo",
                "experiment": "pwc",
                "display": {"L_peak": 100.0, "L_black": 0.5, "gamma": 2.2},
                "conditions": "conditions.csv",
            }
        ],
        "comparisons": "comparisons.csv",
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


@pytest.fixture
def two_condition_manifest(tmp_path):
    return write_two_condition_fixture(tmp_path / "fixture")
