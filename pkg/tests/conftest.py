import json
from pathlib import Path

import pytest

from pcsflow.tabular import Dataset

DATA_DIR = Path(__file__).parent / "data"

# the scripted cleaning plan used by workflow-level tests on the toy dataset
TOY_CLEANING_PLAN = {
    "version": "1",
    "task_label": "cleaning",
    "steps": [
        {"op": "fill_missing", "columns": ["age"], "params": {"strategy": "mean"}},
        {
            "op": "handle_outliers",
            "columns": ["age"],
            "params": {"method": "iqr", "multiplier": 1.5, "action": "clip"},
        },
        {"op": "encode_categorical", "columns": ["tier"], "params": {"scheme": "one_hot"}},
    ],
}

# review that widens the outlier decision point to three alternatives (2x3 grid)
TOY_STAGE2_REVIEW = {
    "predictability": "imputation choice may shift the age distribution",
    "stability": "compare imputation strategies and outlier rules",
    "verdict": "revise",
    "judgment_calls": [
        {
            "decision_point": "outlier treatment",
            "alternatives": [
                {
                    "op": "handle_outliers",
                    "columns": ["age"],
                    "params": {"method": "zscore", "threshold": 3.0, "action": "clip"},
                }
            ],
        }
    ],
}


def toy_scenario(with_review: bool = True) -> dict:
    responses = [{"shape": "plan", "agent": "explore", "body": TOY_CLEANING_PLAN}]
    if with_review:
        responses.append(
            {"shape": "pcs_review", "agent": "pcs", "stage": 2, "body": TOY_STAGE2_REVIEW}
        )
    return {"responses": responses}


@pytest.fixture
def toy_path() -> Path:
    return DATA_DIR / "toy.csv"


@pytest.fixture
def toy_scenario_path(tmp_path) -> Path:
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(toy_scenario()))
    return path


@pytest.fixture
def small_ds() -> Dataset:
    return Dataset.from_columns(
        "small",
        {
            "age": [25.0, 30.0, None, 40.0, 150.0],
            "income": [1.0, 2.0, 3.0, 4.0, 5.0],
            "tier": ["a", "b", "a", "b", "a"],
            "churn": [True, False, True, False, True],
        },
        roles={"churn": "target"},
    )
