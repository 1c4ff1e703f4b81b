"""Built-in model zoo and the (dataset x model) fit grid.

Six families cover linear and nonlinear models for both tasks at desk scale
with no external solver: baselines, ridge regression by normal equations,
one-vs-rest logistic regression by full-batch gradient descent, k-nearest
neighbors, and greedy CART trees. Everything is deterministic for a fixed
seed; ties break by smaller index / lexicographic label throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    MissingFeatureColumn,
    MissingValuesPresent,
    NonNumericFeature,
    NoSuccessfulFits,
    PcsflowError,
    SingularSystem,
)
from .metrics import Scores, classification_scores, nps, regression_scores
from .tabular import (
    BOOLEAN,
    FEATURE,
    MISSING,
    NUMERIC,
    Dataset,
    split_train_test,
)
from .util import stable_seed

CLASSIFICATION = "classification"
REGRESSION = "regression"

FAMILY_TASKS = {
    "mean_baseline": {REGRESSION},
    "majority_baseline": {CLASSIFICATION},
    "linear_regression": {REGRESSION},
    "logistic_regression": {CLASSIFICATION},
    "knn": {CLASSIFICATION, REGRESSION},
    "decision_tree": {CLASSIFICATION, REGRESSION},
}

DEFAULT_VALIDATION_FRACTION = 0.25


@dataclass(frozen=True)
class ModelSpec:
    family: str
    task: str
    params: Mapping[str, Any] = field(default_factory=dict)
    id: str = ""

    def __post_init__(self):
        if self.family not in FAMILY_TASKS:
            raise ValueError(f"unknown model family {self.family!r}")
        if self.task not in FAMILY_TASKS[self.family]:
            raise ValueError(f"family {self.family!r} incompatible with task {self.task!r}")
        if not self.id:
            object.__setattr__(self, "id", self.family)

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "task": self.task,
            "params": dict(self.params),
            "id": self.id,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "ModelSpec":
        return cls(
            family=doc["family"],
            task=doc["task"],
            params=dict(doc.get("params", {})),
            id=doc.get("id", ""),
        )


def default_zoo(task: str) -> list[ModelSpec]:
    """The four-model zoo used when a backend does not propose its own."""
    if task == CLASSIFICATION:
        return [
            ModelSpec("majority_baseline", task),
            ModelSpec(
                "logistic_regression",
                task,
                {"learning_rate": 0.1, "iterations": 500, "l2": 0.0},
            ),
            ModelSpec("knn", task, {"k": 5}),
            ModelSpec("decision_tree", task, {"max_depth": 5, "min_leaf": 1}),
        ]
    return [
        ModelSpec("mean_baseline", task),
        ModelSpec("linear_regression", task, {"l2": 1e-3}),
        ModelSpec("knn", task, {"k": 5}),
        ModelSpec("decision_tree", task, {"max_depth": 5, "min_leaf": 1}),
    ]


@dataclass(frozen=True)
class TrainedModel:
    spec: ModelSpec
    feature_names: tuple[str, ...]
    target: str
    parameters: Mapping[str, Any]

    def to_json(self) -> dict:
        return {
            "spec": self.spec.to_json(),
            "feature_names": list(self.feature_names),
            "target": self.target,
            "parameters": _jsonify(self.parameters),
        }


def _jsonify(value):
    if isinstance(value, dict):
        return {k: _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


@dataclass(frozen=True)
class Predictions:
    values: tuple
    dataset_id: str
    model_id: str


@dataclass(frozen=True)
class PredictiveFit:
    dataset_id: str
    model_id: str
    scores: Optional[Scores]
    nps: Optional[float]
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_json(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "model_id": self.model_id,
            "scores": self.scores.to_json() if self.scores else None,
            "nps": self.nps,
            "error": self.error,
        }


# --- feature extraction ---------------------------------------------------------------


def _label_token(value, dtype: str) -> str:
    if dtype == BOOLEAN:
        return "true" if value else "false"
    if dtype == NUMERIC:
        return repr(float(value))
    return str(value)


def _design_matrix(ds: Dataset, feature_names: Sequence[str]) -> np.ndarray:
    missing_cols = [c for c in feature_names if c not in ds.column_names]
    if missing_cols:
        raise MissingFeatureColumn(f"dataset lacks feature column(s) {missing_cols}")
    idx = [ds.column_index(c) for c in feature_names]
    for c in feature_names:
        if ds.column(c).dtype != NUMERIC:
            raise NonNumericFeature(f"feature {c!r} is not numeric")
        if ds.column(c).missing_count:
            raise MissingValuesPresent(f"feature {c!r} has missing values")
    return np.array([[row[i] for i in idx] for row in ds.rows], dtype=float)


def _target_values(ds: Dataset, target: str, task: str):
    spec = ds.column(target)
    values = ds.values(target)
    if any(v is MISSING for v in values):
        raise MissingValuesPresent(f"target {target!r} has missing values")
    if task == REGRESSION:
        if spec.dtype != NUMERIC:
            raise NonNumericFeature(f"regression target {target!r} is not numeric")
        return np.array(values, dtype=float)
    return [_label_token(v, spec.dtype) for v in values]


def _feature_names_for(ds: Dataset, target: str) -> tuple[str, ...]:
    return tuple(
        c.name for c in ds.columns if c.name != target and c.role == FEATURE
    )


def extract_targets(ds: Dataset, target: str, task: str):
    """Target values in scoring form: label tokens or a float array."""
    return _target_values(ds, target, task)


# --- logistic regression internals -----------------------------------------------------


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(X: np.ndarray, y: np.ndarray, w: np.ndarray, l2: float) -> float:
    """Mean cross-entropy plus l2/(2n) penalty on non-intercept weights."""
    n = len(y)
    p = sigmoid(X @ w)
    eps = 1e-12
    ce = -np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps))
    penalty = l2 / (2 * n) * float(w[1:] @ w[1:])
    return float(ce + penalty)


def logistic_gradient(X: np.ndarray, y: np.ndarray, w: np.ndarray, l2: float) -> np.ndarray:
    n = len(y)
    p = sigmoid(X @ w)
    grad = X.T @ (p - y) / n
    reg = w.copy()
    reg[0] = 0.0  # intercept unpenalized
    return grad + (l2 / n) * reg


def _fit_logistic_binary(
    X: np.ndarray, y: np.ndarray, learning_rate: float, iterations: int, l2: float
) -> np.ndarray:
    w = np.zeros(X.shape[1])
    for _ in range(iterations):
        w = w - learning_rate * logistic_gradient(X, y, w, l2)
    return w


# --- decision tree internals -----------------------------------------------------------


def _gini(labels: Sequence[str]) -> float:
    n = len(labels)
    counts: dict[str, int] = {}
    for v in labels:
        counts[v] = counts.get(v, 0) + 1
    return 1.0 - sum((c / n) ** 2 for c in counts.values())


def _sse(values: np.ndarray) -> float:
    if len(values) == 0:
        return 0.0
    return float(np.sum((values - values.mean()) ** 2))


def _leaf_value(y, task: str):
    if task == REGRESSION:
        return float(np.mean(y))
    counts: dict[str, int] = {}
    for v in y:
        counts[v] = counts.get(v, 0) + 1
    return min(counts, key=lambda v: (-counts[v], v))


def _node_impurity(y, task: str) -> float:
    if task == REGRESSION:
        return _sse(np.asarray(y, dtype=float))
    return _gini(y) * len(y)


def _build_tree(
    X: np.ndarray, y, idx: list[int], depth: int, max_depth: int, min_leaf: int, task: str
) -> dict:
    subset_y = [y[i] for i in idx]
    leaf = {"kind": "leaf", "value": _leaf_value(subset_y, task), "n": len(idx)}
    if depth >= max_depth or len(idx) < 2 * min_leaf or len(set(map(repr, subset_y))) == 1:
        return leaf

    # zero-gain splits are allowed (recursion can still separate the classes,
    # e.g. XOR); recursion is bounded by depth, purity, and leaf size
    best = None  # (impurity, feature, threshold, left_idx, right_idx)
    for j in range(X.shape[1]):
        values = sorted({X[i, j] for i in idx})
        for a, b in zip(values, values[1:]):
            threshold = (a + b) / 2
            left = [i for i in idx if X[i, j] <= threshold]
            right = [i for i in idx if X[i, j] > threshold]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            impurity = _node_impurity([y[i] for i in left], task) + _node_impurity(
                [y[i] for i in right], task
            )
            key = (impurity, j, threshold)
            if best is None or key < (best[0], best[1], best[2]):
                best = (impurity, j, threshold, left, right)
    if best is None:
        return leaf
    _, j, threshold, left, right = best
    return {
        "kind": "split",
        "feature": j,
        "threshold": threshold,
        "left": _build_tree(X, y, left, depth + 1, max_depth, min_leaf, task),
        "right": _build_tree(X, y, right, depth + 1, max_depth, min_leaf, task),
    }


def _tree_predict_row(node: dict, x: np.ndarray):
    while node["kind"] == "split":
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return node["value"]


# --- training ----------------------------------------------------------------------------


def train(ds: Dataset, target: str, spec: ModelSpec, seed: int = 0) -> TrainedModel:
    """Fit one model. Deterministic: the seed only feeds tie-free procedures."""
    ds.column_index(target)
    if ds.n_rows < 2:
        raise PcsflowError("need at least 2 rows to train")
    feature_names = _feature_names_for(ds, target)
    X = _design_matrix(ds, feature_names)
    y = _target_values(ds, target, spec.task)
    params = dict(spec.params)

    if spec.family == "mean_baseline":
        parameters: dict[str, Any] = {"mean": float(np.mean(y))}
    elif spec.family == "majority_baseline":
        counts: dict[str, int] = {}
        for v in y:
            counts[v] = counts.get(v, 0) + 1
        parameters = {"majority": min(counts, key=lambda v: (-counts[v], v))}
    elif spec.family == "linear_regression":
        l2 = float(params.get("l2", 0.0))
        Xa = np.hstack([np.ones((len(X), 1)), X])
        reg = np.eye(Xa.shape[1]) * l2
        reg[0, 0] = 0.0  # intercept unregularized
        A = Xa.T @ Xa + reg
        b = Xa.T @ y
        try:
            coef = np.linalg.solve(A, b)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"normal equations singular: {exc}") from exc
        if not np.all(np.isfinite(coef)):
            raise SingularSystem("normal equations produced non-finite coefficients")
        parameters = {"intercept": float(coef[0]), "coefficients": coef[1:].tolist()}
    elif spec.family == "logistic_regression":
        lr = float(params.get("learning_rate", 0.1))
        iterations = int(params.get("iterations", 500))
        l2 = float(params.get("l2", 0.0))
        classes = sorted(set(y))
        Xa = np.hstack([np.ones((len(X), 1)), X])
        weights = {}
        for c in classes:
            yc = np.array([1.0 if v == c else 0.0 for v in y])
            weights[c] = _fit_logistic_binary(Xa, yc, lr, iterations, l2).tolist()
        parameters = {"classes": classes, "weights": weights}
    elif spec.family == "knn":
        parameters = {
            "k": int(params.get("k", 5)),
            "X": X.tolist(),
            "y": list(y) if spec.task == CLASSIFICATION else np.asarray(y).tolist(),
        }
    else:  # decision_tree
        max_depth = int(params.get("max_depth", 5))
        min_leaf = int(params.get("min_leaf", 1))
        tree = _build_tree(
            X, y, list(range(len(X))), 0, max_depth, min_leaf, spec.task
        )
        parameters = {"tree": tree}

    return TrainedModel(spec, feature_names, target, parameters)


def predict(model: TrainedModel, ds: Dataset) -> Predictions:
    """Score a dataset; extra columns are ignored, row order is preserved."""
    X = _design_matrix(ds, model.feature_names)
    family = model.spec.family
    p = model.parameters

    if family == "mean_baseline":
        values = [p["mean"]] * len(X)
    elif family == "majority_baseline":
        values = [p["majority"]] * len(X)
    elif family == "linear_regression":
        coef = np.array(p["coefficients"])
        values = (p["intercept"] + X @ coef).tolist()
    elif family == "logistic_regression":
        classes = p["classes"]
        scores = np.column_stack(
            [
                sigmoid(np.hstack([np.ones((len(X), 1)), X]) @ np.array(p["weights"][c]))
                for c in classes
            ]
        )
        # argmax picks the first (lexicographically smallest) class on ties
        values = [classes[int(i)] for i in np.argmax(scores, axis=1)]
    elif family == "knn":
        train_X = np.array(p["X"])
        train_y = p["y"]
        k = min(p["k"], len(train_X))
        values = []
        for x in X:
            dists = np.sqrt(np.sum((train_X - x) ** 2, axis=1))
            order = sorted(range(len(dists)), key=lambda i: (dists[i], i))
            chosen = [train_y[i] for i in order[:k]]
            if model.spec.task == REGRESSION:
                values.append(float(np.mean(chosen)))
            else:
                counts: dict[str, int] = {}
                for v in chosen:
                    counts[v] = counts.get(v, 0) + 1
                values.append(min(counts, key=lambda v: (-counts[v], v)))
    else:  # decision_tree
        values = [_tree_predict_row(p["tree"], x) for x in X]

    return Predictions(tuple(values), ds.id, model.spec.id)


# --- fit grid -----------------------------------------------------------------------------


def score_predictions(y_true, predictions: Predictions, task: str) -> Scores:
    if task == CLASSIFICATION:
        return classification_scores(y_true, list(predictions.values))
    return regression_scores(y_true, list(predictions.values))


def _fit_cell(
    ds: Dataset, spec: ModelSpec, target: str, validation_fraction: float, seed: int
) -> PredictiveFit:
    try:
        sub_seed = stable_seed(seed, ds.id)
        train_part, val_part = split_train_test(ds, validation_fraction, sub_seed)
        model = train(train_part, target, spec, sub_seed)
        preds = predict(model, val_part)
        y_true = _target_values(val_part, target, spec.task)
        if spec.task == CLASSIFICATION:
            scores = classification_scores(y_true, list(preds.values))
        else:
            scores = regression_scores(np.asarray(y_true), list(preds.values))
        return PredictiveFit(ds.id, spec.id, scores, nps(scores))
    except PcsflowError as exc:
        return PredictiveFit(ds.id, spec.id, None, None, error=f"{type(exc).__name__}: {exc}")


def train_grid(
    datasets: Sequence[Dataset],
    specs: Sequence[ModelSpec],
    target: str,
    validation_fraction: float = DEFAULT_VALIDATION_FRACTION,
    seed: int = 0,
    jobs: int = 1,
) -> list[PredictiveFit]:
    """Train/score every (dataset, model) pair on an internal validation split.

    The split sub-seed depends only on (seed, dataset id), so every model sees
    the same partition of a given dataset. Failed cells become failed fits.
    Results are ordered canonically by (dataset_id, model_id).
    """
    cells = sorted(
        ((ds, spec) for ds in datasets for spec in specs),
        key=lambda cell: (cell[0].id, cell[1].id),
    )
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(
                pool.map(
                    lambda cell: _fit_cell(
                        cell[0], cell[1], target, validation_fraction, seed
                    ),
                    cells,
                )
            )
    return [_fit_cell(ds, spec, target, validation_fraction, seed) for ds, spec in cells]


def model_nps_sd(fits: Sequence[PredictiveFit]) -> dict[str, float]:
    """Population SD of NPS per model across its successful fits."""
    by_model: dict[str, list[float]] = {}
    for f in fits:
        if f.ok:
            by_model.setdefault(f.model_id, []).append(f.nps)
    out = {}
    for model_id, values in by_model.items():
        mean = sum(values) / len(values)
        out[model_id] = math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))
    return out


def select_top(fits: Sequence[PredictiveFit], n: int) -> list[PredictiveFit]:
    """Top n fits by NPS; ties by lower per-model SD, then (dataset, model) id."""
    successful = [f for f in fits if f.ok]
    if not successful:
        raise NoSuccessfulFits("no (dataset, model) cell produced a score")
    sds = model_nps_sd(successful)
    ranked = sorted(
        successful,
        key=lambda f: (-f.nps, sds[f.model_id], f.dataset_id, f.model_id),
    )
    return ranked[:n]
