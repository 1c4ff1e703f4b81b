"""Parameterized cleaning and feature-engineering operations over Datasets.

Every operation is pure and split into fit + apply: fitting freezes the
statistics the operation needs (fill values, outlier bounds, category maps,
bin edges, principal components) into a FittedStep, and applying replays
those frozen statistics on any schema-compatible dataset. Running an op on
its own fitting dataset gives the usual one-shot semantics; replaying the
FittedStep on held-out data avoids leaking test statistics.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import combinations, combinations_with_replacement
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    AllMissing,
    CardinalityExceeded,
    DomainError,
    DtypeMismatch,
    InvalidParam,
    MissingValuesPresent,
    TooFewDistinct,
    TooManyColumns,
    WouldDropTarget,
)
from .tabular import (
    BOOLEAN,
    CATEGORICAL,
    FEATURE,
    MISSING,
    NUMERIC,
    ColumnSpec,
    Dataset,
    population_sd,
    quantile_type7,
)

# Generated feature columns are capped to keep memory bounded on
# high-cardinality inputs.
OUTPUT_COLUMN_CAP = 1000
POLYNOMIAL_DEGREE_CAP = 3
DEFAULT_ONE_HOT_MAX_CARD = 100
MUTUAL_INFO_BINS = 10


@dataclass(frozen=True)
class OpDescriptor:
    """A single registered operation call: name, target columns, parameters."""

    op: str
    columns: tuple[str, ...] = ()
    params: Mapping[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"op": self.op, "columns": list(self.columns), "params": dict(self.params)}

    @classmethod
    def from_json(cls, doc: Mapping) -> "OpDescriptor":
        return cls(
            op=doc["op"],
            columns=tuple(doc.get("columns", ())),
            params=dict(doc.get("params", {})),
        )


@dataclass(frozen=True)
class FittedStep:
    """Frozen state of one fitted operation, replayable on compatible data."""

    op: str
    columns: tuple[str, ...]
    params: Mapping[str, Any]
    state: Mapping[str, Any]

    def to_json(self) -> dict:
        return {
            "op": self.op,
            "columns": list(self.columns),
            "params": dict(self.params),
            "state": self.state,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "FittedStep":
        return cls(
            op=doc["op"],
            columns=tuple(doc["columns"]),
            params=dict(doc["params"]),
            state=doc["state"],
        )


# --- shared validation helpers ---------------------------------------------------


def _require_columns(ds: Dataset, cols: Sequence[str]) -> None:
    for c in cols:
        ds.column_index(c)


def _require_numeric(ds: Dataset, cols: Sequence[str], op: str) -> None:
    for c in cols:
        if ds.column(c).dtype != NUMERIC:
            raise DtypeMismatch(f"{op}: column {c!r} is not numeric")


def _require_discrete(ds: Dataset, cols: Sequence[str], op: str) -> None:
    for c in cols:
        if ds.column(c).dtype not in (CATEGORICAL, BOOLEAN):
            raise DtypeMismatch(f"{op}: column {c!r} is not categorical/boolean")


def _check_param_keys(op: str, params: Mapping, allowed: set[str]) -> None:
    unknown = set(params) - allowed
    if unknown:
        raise InvalidParam(f"{op}: unknown parameter(s) {sorted(unknown)}")


def _token(value, dtype: str) -> str:
    """Stable string key for a cell value (category maps, group keys)."""
    if value is MISSING:
        return "\x00missing"
    if dtype == BOOLEAN:
        return "true" if value else "false"
    if dtype == NUMERIC:
        return repr(float(value))
    return value


def _pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson r over the given pairs; 0 when degenerate."""
    n = len(xs)
    if n < 2:
        return 0.0
    mx = sum(xs) / n
    my = sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    if sxx == 0 or syy == 0:
        return 0.0
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    return sxy / math.sqrt(sxx * syy)


def _complete_pairs(ds: Dataset, a: str, b: str) -> tuple[list, list]:
    xs, ys = [], []
    ia, ib = ds.column_index(a), ds.column_index(b)
    for row in ds.rows:
        if row[ia] is not MISSING and row[ib] is not MISSING:
            xs.append(row[ia])
            ys.append(row[ib])
    return xs, ys


# --- fill_missing -----------------------------------------------------------------

_FILL_STRATEGIES = ("mean", "median", "mode", "constant", "knn", "group_wise")
_GROUP_AGGS = ("mean", "median", "mode")


def _check_fill_params(params: Mapping) -> None:
    _check_param_keys(
        "fill_missing", params, {"strategy", "value", "k", "group_col", "agg"}
    )
    strategy = params.get("strategy")
    if strategy not in _FILL_STRATEGIES:
        raise InvalidParam(f"fill_missing: strategy must be one of {_FILL_STRATEGIES}")
    if strategy == "constant" and "value" not in params:
        raise InvalidParam("fill_missing: constant strategy requires 'value'")
    if strategy == "knn":
        k = params.get("k", 5)
        if not isinstance(k, int) or k < 1:
            raise InvalidParam("fill_missing: k must be a positive integer")
    if strategy == "group_wise":
        if "group_col" not in params:
            raise InvalidParam("fill_missing: group_wise requires 'group_col'")
        if params.get("agg", "mean") not in _GROUP_AGGS:
            raise InvalidParam(f"fill_missing: agg must be one of {_GROUP_AGGS}")


def _aggregate(values: list, agg: str, dtype: str, col: str):
    if not values:
        return None
    if agg == "mean":
        return sum(values) / len(values)
    if agg == "median":
        return quantile_type7(sorted(values), 0.5)
    # mode: most frequent, smallest value on ties
    counts: dict = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    return min(counts, key=lambda v: (-counts[v], _token(v, dtype)))


def _constant_for(value, dtype: str, col: str):
    if dtype == NUMERIC:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise DtypeMismatch(f"fill_missing: constant for numeric {col!r} must be a number")
        return float(value)
    if dtype == BOOLEAN:
        if not isinstance(value, bool):
            raise DtypeMismatch(f"fill_missing: constant for boolean {col!r} must be a bool")
        return value
    if not isinstance(value, str):
        raise DtypeMismatch(f"fill_missing: constant for {col!r} must be a string")
    return value


def _fit_fill_missing(ds: Dataset, cols, params) -> FittedStep:
    _check_fill_params(params)
    _require_columns(ds, cols)
    strategy = params["strategy"]
    if strategy in ("mean", "median", "knn"):
        _require_numeric(ds, cols, "fill_missing")

    state: dict[str, Any] = {"kind": strategy, "by_column": {}}
    if strategy in ("mean", "median", "mode"):
        for c in cols:
            observed = ds.observed(c)
            if not observed:
                raise AllMissing(f"fill_missing: column {c!r} has no observed value")
            fill = _aggregate(observed, strategy, ds.column(c).dtype, c)
            state["by_column"][c] = fill
    elif strategy == "constant":
        for c in cols:
            state["by_column"][c] = _constant_for(params["value"], ds.column(c).dtype, c)
    elif strategy == "group_wise":
        group_col = params["group_col"]
        agg = params.get("agg", "mean")
        ds.column_index(group_col)
        if agg in ("mean", "median"):
            _require_numeric(ds, cols, "fill_missing")
        g_idx = ds.column_index(group_col)
        g_dtype = ds.column(group_col).dtype
        for c in cols:
            c_idx = ds.column_index(c)
            dtype = ds.column(c).dtype
            all_observed = ds.observed(c)
            if not all_observed:
                raise AllMissing(f"fill_missing: column {c!r} has no observed value")
            groups: dict[str, list] = {}
            for row in ds.rows:
                if row[c_idx] is not MISSING:
                    groups.setdefault(_token(row[g_idx], g_dtype), []).append(row[c_idx])
            state["by_column"][c] = {
                "groups": {k: _aggregate(v, agg, dtype, c) for k, v in groups.items()},
                "global": _aggregate(all_observed, agg, dtype, c),
                "group_col": group_col,
            }
    else:  # knn
        k = params.get("k", 5)
        feature_cols = [
            s.name
            for s in ds.columns
            if s.dtype == NUMERIC and s.name not in cols
        ]
        means, sds = {}, {}
        for f in feature_cols:
            observed = ds.observed(f)
            means[f] = sum(observed) / len(observed) if observed else 0.0
            sds[f] = population_sd(observed) if len(observed) > 1 else 0.0
        donors = {}
        for c in cols:
            c_idx = ds.column_index(c)
            rows = []
            for row in ds.rows:
                if row[c_idx] is not MISSING:
                    coords = {
                        f: _standardize_value(row[ds.column_index(f)], means[f], sds[f])
                        for f in feature_cols
                        if row[ds.column_index(f)] is not MISSING
                    }
                    rows.append({"coords": coords, "value": row[c_idx]})
            if not rows:
                raise AllMissing(f"fill_missing: column {c!r} has no observed value")
            donors[c] = rows
        state.update(
            {"k": k, "features": feature_cols, "means": means, "sds": sds, "donors": donors}
        )
    return FittedStep("fill_missing", tuple(cols), dict(params), state)


def _standardize_value(v, mean, sd):
    return (float(v) - mean) / sd if sd > 0 else float(v) - mean


def _knn_fill_value(state, row_coords: dict, col: str) -> float:
    donors = state["donors"][col]
    scored = []
    for idx, donor in enumerate(donors):
        shared = set(row_coords) & set(donor["coords"])
        if shared:
            dist = math.sqrt(
                sum((row_coords[f] - donor["coords"][f]) ** 2 for f in shared)
            )
        else:
            dist = math.inf
        scored.append((dist, idx))
    scored.sort()
    k = min(state["k"], len(scored))
    chosen = [donors[idx]["value"] for _, idx in scored[:k]]
    return sum(chosen) / len(chosen)


def _apply_fill_missing(step: FittedStep, ds: Dataset, for_test: bool) -> Dataset:
    _require_columns(ds, step.columns)
    state = step.state
    kind = state["kind"]
    col_idx = {c: ds.column_index(c) for c in step.columns}
    new_rows = []
    if kind == "group_wise":
        group_cols = {
            c: ds.column_index(state["by_column"][c]["group_col"]) for c in step.columns
        }
    if kind == "knn":
        feat_idx = {
            f: ds.column_index(f) for f in state["features"] if f in ds.column_names
        }
    for row in ds.rows:
        cells = list(row)
        for c in step.columns:
            if cells[col_idx[c]] is not MISSING:
                continue
            if kind in ("mean", "median", "mode", "constant"):
                cells[col_idx[c]] = state["by_column"][c]
            elif kind == "group_wise":
                entry = state["by_column"][c]
                g_dtype = ds.columns[group_cols[c]].dtype
                key = _token(cells[group_cols[c]], g_dtype)
                fill = entry["groups"].get(key)
                cells[col_idx[c]] = fill if fill is not None else entry["global"]
            else:  # knn
                coords = {
                    f: _standardize_value(
                        cells[i], state["means"][f], state["sds"][f]
                    )
                    for f, i in feat_idx.items()
                    if cells[i] is not MISSING
                }
                cells[col_idx[c]] = _knn_fill_value(state, coords, c)
        new_rows.append(cells)
    return ds.derive(
        ds.columns, new_rows, "fill_missing", step.params, op_columns=step.columns
    )


# --- handle_outliers --------------------------------------------------------------

_OUTLIER_METHODS = ("iqr", "zscore", "quantile")
_OUTLIER_ACTIONS = ("clip", "remove_row", "set_missing")


def _check_outlier_params(params: Mapping) -> None:
    _check_param_keys(
        "handle_outliers", params, {"method", "action", "multiplier", "threshold", "lo", "hi"}
    )
    if params.get("method") not in _OUTLIER_METHODS:
        raise InvalidParam(f"handle_outliers: method must be one of {_OUTLIER_METHODS}")
    if params.get("action") not in _OUTLIER_ACTIONS:
        raise InvalidParam(f"handle_outliers: action must be one of {_OUTLIER_ACTIONS}")
    if params["method"] == "quantile":
        lo, hi = params.get("lo"), params.get("hi")
        if lo is None or hi is None or not (0 <= lo < hi <= 1):
            raise InvalidParam("handle_outliers: quantile needs 0 <= lo < hi <= 1")
    if params["method"] == "iqr":
        mult = params.get("multiplier", 1.5)
        if not isinstance(mult, (int, float)) or mult < 0:
            raise InvalidParam("handle_outliers: multiplier must be nonnegative")
    if params["method"] == "zscore":
        thresh = params.get("threshold", 3.0)
        if not isinstance(thresh, (int, float)) or thresh <= 0:
            raise InvalidParam("handle_outliers: threshold must be positive")


def _fit_handle_outliers(ds: Dataset, cols, params) -> FittedStep:
    _check_outlier_params(params)
    _require_columns(ds, cols)
    _require_numeric(ds, cols, "handle_outliers")
    method = params["method"]
    bounds = {}
    for c in cols:
        observed = sorted(ds.observed(c))
        if not observed:
            bounds[c] = [-math.inf, math.inf]
            continue
        if method == "iqr":
            mult = params.get("multiplier", 1.5)
            q1 = quantile_type7(observed, 0.25)
            q3 = quantile_type7(observed, 0.75)
            iqr = q3 - q1
            bounds[c] = [q1 - mult * iqr, q3 + mult * iqr]
        elif method == "zscore":
            thresh = params.get("threshold", 3.0)
            mean = sum(observed) / len(observed)
            sd = population_sd(observed)
            if sd == 0:
                bounds[c] = [-math.inf, math.inf]
            else:
                bounds[c] = [mean - thresh * sd, mean + thresh * sd]
        else:
            bounds[c] = [
                quantile_type7(observed, params["lo"]),
                quantile_type7(observed, params["hi"]),
            ]
    return FittedStep(
        "handle_outliers", tuple(cols), dict(params), {"bounds": bounds}
    )


def _apply_handle_outliers(step: FittedStep, ds: Dataset, for_test: bool) -> Dataset:
    _require_columns(ds, step.columns)
    action = step.params["action"]
    # removing rows from held-out data would break prediction alignment;
    # replay degrades remove_row to clipping
    if for_test and action == "remove_row":
        action = "clip"
    bounds = step.state["bounds"]
    col_idx = {c: ds.column_index(c) for c in step.columns}
    new_rows = []
    for row in ds.rows:
        cells = list(row)
        drop = False
        for c in step.columns:
            v = cells[col_idx[c]]
            if v is MISSING:
                continue
            lo, hi = bounds[c]
            if lo <= v <= hi:
                continue
            if action == "clip":
                cells[col_idx[c]] = lo if v < lo else hi
            elif action == "set_missing":
                cells[col_idx[c]] = MISSING
            else:
                drop = True
        if not drop:
            new_rows.append(cells)
    return ds.derive(
        ds.columns, new_rows, "handle_outliers", step.params, op_columns=step.columns
    )


# --- encode_categorical -----------------------------------------------------------

_ENCODE_SCHEMES = ("label", "one_hot", "frequency")


def _check_encode_params(params: Mapping) -> None:
    _check_param_keys("encode_categorical", params, {"scheme", "max_card"})
    if params.get("scheme") not in _ENCODE_SCHEMES:
        raise InvalidParam(f"encode_categorical: scheme must be one of {_ENCODE_SCHEMES}")
    max_card = params.get("max_card", DEFAULT_ONE_HOT_MAX_CARD)
    if not isinstance(max_card, int) or max_card < 1:
        raise InvalidParam("encode_categorical: max_card must be a positive integer")


def _fit_encode_categorical(ds: Dataset, cols, params) -> FittedStep:
    _check_encode_params(params)
    _require_columns(ds, cols)
    _require_discrete(ds, cols, "encode_categorical")
    scheme = params["scheme"]
    state: dict[str, Any] = {"kind": scheme, "by_column": {}}
    for c in cols:
        dtype = ds.column(c).dtype
        tokens = [_token(v, dtype) for v in ds.observed(c)]
        categories = sorted(set(tokens))
        if scheme == "label":
            state["by_column"][c] = {cat: i for i, cat in enumerate(categories)}
        elif scheme == "one_hot":
            max_card = params.get("max_card", DEFAULT_ONE_HOT_MAX_CARD)
            if len(categories) > max_card:
                raise CardinalityExceeded(
                    f"encode_categorical: {c!r} has {len(categories)} categories, cap {max_card}"
                )
            state["by_column"][c] = categories
        else:
            total = len(tokens)
            counts: dict[str, int] = {}
            for t in tokens:
                counts[t] = counts.get(t, 0) + 1
            state["by_column"][c] = {t: n / total for t, n in counts.items()}
    return FittedStep("encode_categorical", tuple(cols), dict(params), state)


def _apply_encode_categorical(step: FittedStep, ds: Dataset, for_test: bool) -> Dataset:
    _require_columns(ds, step.columns)
    state = step.state
    scheme = state["kind"]
    if scheme in ("label", "frequency"):
        specs = list(ds.columns)
        col_idx = {c: ds.column_index(c) for c in step.columns}
        for c in step.columns:
            old = specs[col_idx[c]]
            specs[col_idx[c]] = ColumnSpec(c, NUMERIC, old.role)
        new_rows = []
        for row in ds.rows:
            cells = list(row)
            for c in step.columns:
                v = cells[col_idx[c]]
                if v is MISSING:
                    continue
                mapped = state["by_column"][c].get(_token(v, ds.column(c).dtype))
                cells[col_idx[c]] = float(mapped) if mapped is not None else MISSING
            new_rows.append(cells)
        return ds.derive(
            specs, new_rows, "encode_categorical", step.params, op_columns=step.columns
        )

    # one_hot: replace each source column in place with its indicator block
    specs = []
    added = []
    plan = []  # (kind, source index | spec) descriptors in output order
    for i, spec in enumerate(ds.columns):
        if spec.name in step.columns:
            for cat in state["by_column"][spec.name]:
                ind_name = f"{spec.name}={cat}"
                specs.append(ColumnSpec(ind_name, NUMERIC, FEATURE))
                added.append(ind_name)
                plan.append(("indicator", i, cat, spec.dtype))
        else:
            specs.append(spec)
            plan.append(("copy", i, None, None))
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise InvalidParam("encode_categorical: indicator name collides with existing column")
    new_rows = []
    for row in ds.rows:
        cells = []
        for kind, i, cat, dtype in plan:
            if kind == "copy":
                cells.append(row[i])
            else:
                v = row[i]
                cells.append(
                    1.0 if v is not MISSING and _token(v, dtype) == cat else 0.0
                )
        new_rows.append(cells)
    return ds.derive(
        specs,
        new_rows,
        "encode_categorical",
        step.params,
        op_columns=step.columns,
        removed=step.columns,
        added=added,
    )


# --- remove_columns ---------------------------------------------------------------

_REMOVE_CRITERIA = ("missing_fraction", "variance", "correlation", "explicit")


def _check_remove_params(params: Mapping) -> None:
    _check_param_keys("remove_columns", params, {"criterion", "threshold"})
    criterion = params.get("criterion")
    if criterion not in _REMOVE_CRITERIA:
        raise InvalidParam(f"remove_columns: criterion must be one of {_REMOVE_CRITERIA}")
    if criterion != "explicit":
        t = params.get("threshold")
        if not isinstance(t, (int, float)):
            raise InvalidParam("remove_columns: threshold required")
        if criterion in ("missing_fraction", "correlation") and not 0 <= t <= 1:
            raise InvalidParam("remove_columns: threshold must be in [0,1]")
        if criterion == "variance" and t < 0:
            raise InvalidParam("remove_columns: variance threshold must be nonnegative")


def _fit_remove_columns(ds: Dataset, cols, params) -> FittedStep:
    _check_remove_params(params)
    criterion = params["criterion"]
    target = ds.target_column()

    if criterion == "explicit":
        _require_columns(ds, cols)
        if target in cols:
            raise WouldDropTarget(f"remove_columns: cannot drop target {target!r}")
        removed = list(cols)
    else:
        candidates = [
            s.name for s in ds.columns if s.name != target and (not cols or s.name in cols)
        ]
        threshold = params["threshold"]
        removed = []
        if criterion == "missing_fraction":
            for c in candidates:
                frac = ds.column(c).missing_count / ds.n_rows if ds.n_rows else 0.0
                if frac > threshold:
                    removed.append(c)
        elif criterion == "variance":
            for c in candidates:
                if ds.column(c).dtype != NUMERIC:
                    continue
                observed = ds.observed(c)
                var = population_sd(observed) ** 2 if observed else 0.0
                if var < threshold:
                    removed.append(c)
        else:  # correlation: drop the later column of each offending pair
            numeric = [c for c in candidates if ds.column(c).dtype == NUMERIC]
            dropped: set[str] = set()
            for i, j in combinations(range(len(numeric)), 2):
                a, b = numeric[i], numeric[j]
                if a in dropped or b in dropped:
                    continue
                xs, ys = _complete_pairs(ds, a, b)
                if abs(_pearson(xs, ys)) > threshold:
                    dropped.add(b)
            removed = [c for c in numeric if c in dropped]
    return FittedStep("remove_columns", tuple(cols), dict(params), {"removed": removed})


def _apply_remove_columns(step: FittedStep, ds: Dataset, for_test: bool) -> Dataset:
    drop = [c for c in step.state["removed"] if c in ds.column_names]
    keep_idx = [i for i, s in enumerate(ds.columns) if s.name not in drop]
    specs = [ds.columns[i] for i in keep_idx]
    rows = [[row[i] for i in keep_idx] for row in ds.rows]
    return ds.derive(
        specs, rows, "remove_columns", step.params, removed=drop
    )


# --- transform_features -----------------------------------------------------------

_TRANSFORMS = ("log1p", "minmax", "standard")


def _check_transform_params(params: Mapping) -> None:
    _check_param_keys("transform_features", params, {"transform"})
    if params.get("transform") not in _TRANSFORMS:
        raise InvalidParam(f"transform_features: transform must be one of {_TRANSFORMS}")


def _fit_transform_features(ds: Dataset, cols, params) -> FittedStep:
    _check_transform_params(params)
    _require_columns(ds, cols)
    _require_numeric(ds, cols, "transform_features")
    transform = params["transform"]
    state: dict[str, Any] = {"kind": transform, "by_column": {}}
    for c in cols:
        observed = ds.observed(c)
        if transform == "log1p":
            if any(v <= -1 for v in observed):
                raise DomainError(f"transform_features: log1p needs values > -1 in {c!r}")
            state["by_column"][c] = None
        elif transform == "minmax":
            if not observed or min(observed) == max(observed):
                state["by_column"][c] = None  # constant: pass through
            else:
                state["by_column"][c] = [min(observed), max(observed)]
        else:
            sd = population_sd(observed) if observed else 0.0
            if sd == 0:
                state["by_column"][c] = None
            else:
                state["by_column"][c] = [sum(observed) / len(observed), sd]
    return FittedStep("transform_features", tuple(cols), dict(params), state)


def _apply_transform_features(step: FittedStep, ds: Dataset, for_test: bool) -> Dataset:
    _require_columns(ds, step.columns)
    kind = step.state["kind"]
    col_idx = {c: ds.column_index(c) for c in step.columns}
    new_rows = []
    for row in ds.rows:
        cells = list(row)
        for c in step.columns:
            v = cells[col_idx[c]]
            if v is MISSING:
                continue
            frozen = step.state["by_column"][c]
            if kind == "log1p":
                if v <= -1:
                    raise DomainError(f"transform_features: log1p domain error in {c!r}")
                cells[col_idx[c]] = math.log1p(v)
            elif frozen is None:
                continue  # constant column passes through unchanged
            elif kind == "minmax":
                mn, mx = frozen
                cells[col_idx[c]] = (v - mn) / (mx - mn)
            else:
                mean, sd = frozen
                cells[col_idx[c]] = (v - mean) / sd
        new_rows.append(cells)
    return ds.derive(
        ds.columns, new_rows, "transform_features", step.params, op_columns=step.columns
    )


# --- discretize_features ----------------------------------------------------------

_DISCRETIZE_METHODS = ("equal_width", "quantile", "kmeans")


def _check_discretize_params(params: Mapping) -> None:
    _check_param_keys("discretize_features", params, {"method", "n"})
    if params.get("method") not in _DISCRETIZE_METHODS:
        raise InvalidParam(
            f"discretize_features: method must be one of {_DISCRETIZE_METHODS}"
        )
    n = params.get("n")
    if not isinstance(n, int) or n < 2:
        raise InvalidParam("discretize_features: n must be an integer >= 2")


def _kmeans_1d_boundaries(values: list[float], n: int) -> list[float]:
    """Exact 1-D k-means by dynamic programming over sorted values.

    Returns the n-1 internal boundaries (midpoints between adjacent clusters)
    of the partition minimizing within-cluster sum of squared error.
    """
    xs = sorted(values)
    m = len(xs)
    prefix = [0.0]
    prefix_sq = [0.0]
    for x in xs:
        prefix.append(prefix[-1] + x)
        prefix_sq.append(prefix_sq[-1] + x * x)

    def cost(i: int, j: int) -> float:  # SSE of xs[i..j] inclusive
        cnt = j - i + 1
        s = prefix[j + 1] - prefix[i]
        sq = prefix_sq[j + 1] - prefix_sq[i]
        return sq - s * s / cnt

    INF = math.inf
    best = [[INF] * (n + 1) for _ in range(m + 1)]
    split = [[0] * (n + 1) for _ in range(m + 1)]
    best[0][0] = 0.0
    for j in range(1, m + 1):
        for k in range(1, min(j, n) + 1):
            for i in range(k - 1, j):
                cand = best[i][k - 1] + cost(i, j - 1)
                if cand < best[j][k]:
                    best[j][k] = cand
                    split[j][k] = i
    cuts = []
    j, k = m, n
    while k > 1:
        i = split[j][k]
        cuts.append(i)
        j, k = i, k - 1
    cuts.reverse()
    return [(xs[c - 1] + xs[c]) / 2 for c in cuts]


def _fit_discretize_features(ds: Dataset, cols, params) -> FittedStep:
    _check_discretize_params(params)
    _require_columns(ds, cols)
    _require_numeric(ds, cols, "discretize_features")
    method = params["method"]
    n = params["n"]
    edges = {}
    for c in cols:
        observed = ds.observed(c)
        if not observed:
            raise AllMissing(f"discretize_features: column {c!r} has no observed value")
        distinct = len(set(observed))
        if method == "equal_width":
            mn, mx = min(observed), max(observed)
            if mn == mx:
                edges[c] = []
            else:
                width = (mx - mn) / n
                edges[c] = [mn + i * width for i in range(1, n)]
        elif method == "quantile":
            if distinct < n:
                raise TooFewDistinct(
                    f"discretize_features: {c!r} has {distinct} distinct values, need {n}"
                )
            s = sorted(observed)
            edges[c] = [quantile_type7(s, i / n) for i in range(1, n)]
        else:
            if distinct < n:
                raise TooFewDistinct(
                    f"discretize_features: {c!r} has {distinct} distinct values, need {n}"
                )
            edges[c] = _kmeans_1d_boundaries(observed, n)
    return FittedStep(
        "discretize_features", tuple(cols), dict(params), {"edges": edges}
    )


def _apply_discretize_features(step: FittedStep, ds: Dataset, for_test: bool) -> Dataset:
    _require_columns(ds, step.columns)
    n = step.params["n"]
    col_idx = {c: ds.column_index(c) for c in step.columns}
    specs = list(ds.columns)
    for c in step.columns:
        old = specs[col_idx[c]]
        specs[col_idx[c]] = ColumnSpec(c, CATEGORICAL, old.role)
    new_rows = []
    for row in ds.rows:
        cells = list(row)
        for c in step.columns:
            v = cells[col_idx[c]]
            if v is MISSING:
                continue
            idx = min(bisect_right(step.state["edges"][c], v), n - 1)
            cells[col_idx[c]] = f"bin_{idx}"
        new_rows.append(cells)
    return ds.derive(
        specs, new_rows, "discretize_features", step.params, op_columns=step.columns
    )


# --- select_features --------------------------------------------------------------

_SELECT_METHODS = ("variance", "correlation", "mutual_info")


def _check_select_params(params: Mapping) -> None:
    _check_param_keys("select_features", params, {"method", "threshold", "top", "target"})
    method = params.get("method")
    if method not in _SELECT_METHODS:
        raise InvalidParam(f"select_features: method must be one of {_SELECT_METHODS}")
    if method == "variance":
        if not isinstance(params.get("threshold"), (int, float)):
            raise InvalidParam("select_features: variance needs a 'threshold'")
    else:
        top = params.get("top")
        if not isinstance(top, int) or top < 1:
            raise InvalidParam("select_features: 'top' must be a positive integer")


def _equal_frequency_bin(values: Sequence[float], n_bins: int) -> list[str]:
    s = sorted(values)
    edges = [quantile_type7(s, i / n_bins) for i in range(1, n_bins)]
    return [f"b{min(bisect_right(edges, v), n_bins - 1)}" for v in values]


def _mi_tokens(ds: Dataset, col: str) -> dict[int, str]:
    """Discretized token per row index, numerics binned into 10 quantile bins."""
    spec = ds.column(col)
    idx = ds.column_index(col)
    out = {}
    if spec.dtype == NUMERIC:
        present = [(i, row[idx]) for i, row in enumerate(ds.rows) if row[idx] is not MISSING]
        if not present:
            return {}
        binned = _equal_frequency_bin([v for _, v in present], MUTUAL_INFO_BINS)
        for (i, _), b in zip(present, binned):
            out[i] = b
    else:
        for i, row in enumerate(ds.rows):
            if row[idx] is not MISSING:
                out[i] = _token(row[idx], spec.dtype)
    return out


def _mutual_information(x_tokens: Mapping[int, str], y_tokens: Mapping[int, str]) -> float:
    shared = sorted(set(x_tokens) & set(y_tokens))
    n = len(shared)
    if n == 0:
        return 0.0
    joint: dict[tuple[str, str], int] = {}
    mx: dict[str, int] = {}
    my: dict[str, int] = {}
    for i in shared:
        x, y = x_tokens[i], y_tokens[i]
        joint[(x, y)] = joint.get((x, y), 0) + 1
        mx[x] = mx.get(x, 0) + 1
        my[y] = my.get(y, 0) + 1
    mi = 0.0
    for (x, y), c in joint.items():
        p_xy = c / n
        mi += p_xy * math.log(p_xy / ((mx[x] / n) * (my[y] / n)))
    return max(mi, 0.0)


def _fit_select_features(ds: Dataset, cols, params) -> FittedStep:
    _check_select_params(params)
    method = params["method"]
    target = params.get("target") or ds.target_column()
    if target is None:
        raise InvalidParam("select_features: no target column known")
    ds.column_index(target)

    candidates = [
        s.name
        for s in ds.columns
        if s.role == FEATURE and s.name != target and (not cols or s.name in cols)
    ]
    if method == "variance":
        threshold = params["threshold"]
        selected = []
        for c in candidates:
            if ds.column(c).dtype != NUMERIC:
                selected.append(c)
                continue
            observed = ds.observed(c)
            var = population_sd(observed) ** 2 if observed else 0.0
            if var >= threshold:
                selected.append(c)
    elif method == "correlation":
        for c in candidates + [target]:
            if ds.column(c).dtype != NUMERIC:
                raise DtypeMismatch(f"select_features: correlation needs numeric {c!r}")
        scored = []
        for rank, c in enumerate(candidates):
            xs, ys = _complete_pairs(ds, c, target)
            scored.append((-abs(_pearson(xs, ys)), rank, c))
        scored.sort()
        selected = sorted(
            (c for _, _, c in scored[: params["top"]]),
            key=lambda c: ds.column_index(c),
        )
    else:
        y_tokens = _mi_tokens(ds, target)
        scored = []
        for rank, c in enumerate(candidates):
            mi = _mutual_information(_mi_tokens(ds, c), y_tokens)
            scored.append((-mi, rank, c))
        scored.sort()
        selected = sorted(
            (c for _, _, c in scored[: params["top"]]),
            key=lambda c: ds.column_index(c),
        )
    return FittedStep(
        "select_features",
        tuple(cols),
        dict(params),
        {"keep": selected, "target": target, "candidates": candidates},
    )


def _apply_select_features(step: FittedStep, ds: Dataset, for_test: bool) -> Dataset:
    keep = set(step.state["keep"]) | {step.state["target"]}
    considered = set(step.state["candidates"])
    keep_idx = [
        i
        for i, s in enumerate(ds.columns)
        if s.name in keep or s.name not in considered
    ]
    removed = [s.name for i, s in enumerate(ds.columns) if i not in keep_idx]
    specs = [ds.columns[i] for i in keep_idx]
    rows = [[row[i] for i in keep_idx] for row in ds.rows]
    return ds.derive(specs, rows, "select_features", step.params, removed=removed)


# --- create_polynomial_features -----------------------------------------------------


def _check_polynomial_params(params: Mapping) -> None:
    _check_param_keys(
        "create_polynomial_features", params, {"degree", "interactions_only"}
    )
    degree = params.get("degree")
    if not isinstance(degree, int) or not 2 <= degree <= POLYNOMIAL_DEGREE_CAP:
        raise InvalidParam(
            f"create_polynomial_features: degree must be an integer in [2, {POLYNOMIAL_DEGREE_CAP}]"
        )
    if not isinstance(params.get("interactions_only", False), bool):
        raise InvalidParam("create_polynomial_features: interactions_only must be a flag")


def _monomial_name(cols: Sequence[str], exponents: Sequence[int]) -> str:
    parts = []
    for c, e in zip(cols, exponents):
        if e == 1:
            parts.append(c)
        elif e > 1:
            parts.append(f"{c}^{e}")
    return "*".join(parts)


def _fit_create_polynomial_features(ds: Dataset, cols, params) -> FittedStep:
    _check_polynomial_params(params)
    _require_columns(ds, cols)
    _require_numeric(ds, cols, "create_polynomial_features")
    if not cols:
        raise InvalidParam("create_polynomial_features: needs at least one column")
    degree = params["degree"]
    interactions_only = params.get("interactions_only", False)

    monomials = []
    for d in range(2, degree + 1):
        picker = combinations if interactions_only else combinations_with_replacement
        for combo in picker(range(len(cols)), d):
            exponents = [0] * len(cols)
            for i in combo:
                exponents[i] += 1
            monomials.append(exponents)

    names = [_monomial_name(cols, e) for e in monomials]
    if ds.n_cols + len(names) > OUTPUT_COLUMN_CAP:
        raise TooManyColumns(
            f"create_polynomial_features: would produce {ds.n_cols + len(names)} columns"
        )
    collisions = set(names) & set(ds.column_names)
    if collisions:
        raise InvalidParam(
            f"create_polynomial_features: columns already exist: {sorted(collisions)}"
        )
    return FittedStep(
        "create_polynomial_features",
        tuple(cols),
        dict(params),
        {"names": names, "exponents": monomials},
    )


def _apply_create_polynomial_features(
    step: FittedStep, ds: Dataset, for_test: bool
) -> Dataset:
    _require_columns(ds, step.columns)
    src_idx = [ds.column_index(c) for c in step.columns]
    specs = list(ds.columns) + [
        ColumnSpec(name, NUMERIC, FEATURE) for name in step.state["names"]
    ]
    new_rows = []
    for row in ds.rows:
        cells = list(row)
        for exponents in step.state["exponents"]:
            value: Any = 1.0
            for i, e in zip(src_idx, exponents):
                if e == 0:
                    continue
                if row[i] is MISSING:
                    value = MISSING
                    break
                value *= float(row[i]) ** e
            cells.append(value)
        new_rows.append(cells)
    return ds.derive(
        specs,
        new_rows,
        "create_polynomial_features",
        step.params,
        op_columns=step.columns,
        added=step.state["names"],
    )


# --- reduce_dimensions --------------------------------------------------------------


def _check_reduce_params(params: Mapping) -> None:
    _check_param_keys("reduce_dimensions", params, {"n_components"})
    n = params.get("n_components")
    if not isinstance(n, int) or n < 1:
        raise InvalidParam("reduce_dimensions: n_components must be a positive integer")


def _fit_reduce_dimensions(ds: Dataset, cols, params) -> FittedStep:
    _check_reduce_params(params)
    _require_columns(ds, cols)
    _require_numeric(ds, cols, "reduce_dimensions")
    n = params["n_components"]
    if n > len(cols):
        raise InvalidParam(
            f"reduce_dimensions: n_components {n} exceeds {len(cols)} columns"
        )
    for c in cols:
        if ds.column(c).missing_count:
            raise MissingValuesPresent(f"reduce_dimensions: {c!r} has missing values")

    X = np.array([[row[ds.column_index(c)] for c in cols] for row in ds.rows], dtype=float)
    means = X.mean(axis=0)
    centered = X - means
    cov = centered.T @ centered / len(X)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order]
    # fix sign so the largest-magnitude loading of each component is positive
    for j in range(eigenvectors.shape[1]):
        pivot = int(np.argmax(np.abs(eigenvectors[:, j])))
        if eigenvectors[pivot, j] < 0:
            eigenvectors[:, j] = -eigenvectors[:, j]
    return FittedStep(
        "reduce_dimensions",
        tuple(cols),
        dict(params),
        {
            "means": means.tolist(),
            "components": eigenvectors[:, :n].tolist(),
            "explained_variance": eigenvalues.tolist(),
        },
    )


def _apply_reduce_dimensions(step: FittedStep, ds: Dataset, for_test: bool) -> Dataset:
    _require_columns(ds, step.columns)
    n = step.params["n_components"]
    for c in step.columns:
        if ds.column(c).missing_count:
            raise MissingValuesPresent(f"reduce_dimensions: {c!r} has missing values")
    src_idx = [ds.column_index(c) for c in step.columns]
    X = np.array([[row[i] for i in src_idx] for row in ds.rows], dtype=float)
    projected = (X - np.array(step.state["means"])) @ np.array(step.state["components"])

    pc_names = [f"pc_{j + 1}" for j in range(n)]
    insert_at = min(src_idx) if src_idx else ds.n_cols
    drop = set(src_idx)
    specs: list[ColumnSpec] = []
    out_plan: list[tuple[str, int]] = []
    for i, spec in enumerate(ds.columns):
        if i == insert_at:
            for j, name in enumerate(pc_names):
                specs.append(ColumnSpec(name, NUMERIC, FEATURE))
                out_plan.append(("pc", j))
        if i in drop:
            continue
        specs.append(spec)
        out_plan.append(("copy", i))
    if insert_at == ds.n_cols:
        for j, name in enumerate(pc_names):
            specs.append(ColumnSpec(name, NUMERIC, FEATURE))
            out_plan.append(("pc", j))

    new_rows = []
    for r, row in enumerate(ds.rows):
        cells = []
        for kind, i in out_plan:
            cells.append(float(projected[r, i]) if kind == "pc" else row[i])
        new_rows.append(cells)
    return ds.derive(
        specs,
        new_rows,
        "reduce_dimensions",
        step.params,
        op_columns=step.columns,
        removed=step.columns,
        added=pc_names,
    )


# --- registry -----------------------------------------------------------------------

# op name -> (fitter, applier, param checker, input dtype family)
_OPS = {
    "fill_missing": (_fit_fill_missing, _apply_fill_missing, _check_fill_params, "any"),
    "handle_outliers": (
        _fit_handle_outliers,
        _apply_handle_outliers,
        _check_outlier_params,
        "numeric",
    ),
    "encode_categorical": (
        _fit_encode_categorical,
        _apply_encode_categorical,
        _check_encode_params,
        "discrete",
    ),
    "remove_columns": (
        _fit_remove_columns,
        _apply_remove_columns,
        _check_remove_params,
        "any",
    ),
    "transform_features": (
        _fit_transform_features,
        _apply_transform_features,
        _check_transform_params,
        "numeric",
    ),
    "discretize_features": (
        _fit_discretize_features,
        _apply_discretize_features,
        _check_discretize_params,
        "numeric",
    ),
    "select_features": (
        _fit_select_features,
        _apply_select_features,
        _check_select_params,
        "any",
    ),
    "create_polynomial_features": (
        _fit_create_polynomial_features,
        _apply_create_polynomial_features,
        _check_polynomial_params,
        "numeric",
    ),
    "reduce_dimensions": (
        _fit_reduce_dimensions,
        _apply_reduce_dimensions,
        _check_reduce_params,
        "numeric",
    ),
}

OP_NAMES = tuple(_OPS)


def op_param_checker(op: str):
    if op not in _OPS:
        raise InvalidParam(f"unknown operation {op!r}")
    return _OPS[op][2]


def op_input_dtype(op: str) -> str:
    return _OPS[op][3]


def fit_op(ds: Dataset, op: str, columns: Sequence[str], params: Mapping) -> FittedStep:
    """Fit one operation, freezing the statistics it derives from ds."""
    if op not in _OPS:
        raise InvalidParam(f"unknown operation {op!r}")
    return _OPS[op][0](ds, tuple(columns), dict(params))


def apply_step(step: FittedStep, ds: Dataset, for_test: bool = False) -> Dataset:
    """Apply a fitted step. for_test replays without row removal."""
    if step.op not in _OPS:
        raise InvalidParam(f"unknown operation {step.op!r}")
    return _OPS[step.op][1](step, ds, for_test)


def run_op(ds: Dataset, op: str, columns: Sequence[str], params: Mapping) -> Dataset:
    """Fit and apply in one shot (the normal training-side call)."""
    return apply_step(fit_op(ds, op, columns, params), ds)


def run_descriptor(ds: Dataset, desc: OpDescriptor) -> Dataset:
    return run_op(ds, desc.op, desc.columns, desc.params)


# --- spec-shaped convenience wrappers ------------------------------------------------


def fill_missing(ds: Dataset, cols: Sequence[str], **params) -> Dataset:
    return run_op(ds, "fill_missing", cols, params)


def handle_outliers(ds: Dataset, cols: Sequence[str], **params) -> Dataset:
    return run_op(ds, "handle_outliers", cols, params)


def encode_categorical(ds: Dataset, cols: Sequence[str], **params) -> Dataset:
    return run_op(ds, "encode_categorical", cols, params)


def remove_columns(ds: Dataset, cols: Sequence[str] = (), **params) -> Dataset:
    return run_op(ds, "remove_columns", cols, params)


def transform_features(ds: Dataset, cols: Sequence[str], **params) -> Dataset:
    return run_op(ds, "transform_features", cols, params)


def discretize_features(ds: Dataset, cols: Sequence[str], **params) -> Dataset:
    return run_op(ds, "discretize_features", cols, params)


def select_features(
    ds: Dataset, target: Optional[str] = None, cols: Sequence[str] = (), **params
) -> tuple[Dataset, list[str]]:
    if target is not None:
        params = dict(params, target=target)
    step = fit_op(ds, "select_features", cols, params)
    return apply_step(step, ds), list(step.state["keep"])


def create_polynomial_features(ds: Dataset, cols: Sequence[str], **params) -> Dataset:
    return run_op(ds, "create_polynomial_features", cols, params)


def reduce_dimensions(ds: Dataset, cols: Sequence[str], **params) -> Dataset:
    return run_op(ds, "reduce_dimensions", cols, params)
