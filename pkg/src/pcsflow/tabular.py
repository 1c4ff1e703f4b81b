"""Immutable typed tabular data model: CSV I/O, schema inference, summaries.

A Dataset is a value: columns are typed specs, rows are tuples of plain
Python cells (float / bool / str, with None for missing), and lineage is an
append-only list of the operations that produced it. All functions here are
pure except the two file endpoints.
"""

from __future__ import annotations

import csv
import hashlib
import math
import random
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .errors import (
    DegenerateSplit,
    DtypeMismatch,
    EmptyFile,
    FileUnreadable,
    IoFailure,
    MalformedCsv,
    UnknownColumn,
    UnsupportedDtype,
)
from .util import fmt_number

# Column dtypes and roles. Plain strings keep JSON serialization trivial.
NUMERIC = "numeric"
CATEGORICAL = "categorical"
BOOLEAN = "boolean"
TEXT = "text"
DTYPES = (NUMERIC, CATEGORICAL, BOOLEAN, TEXT)

FEATURE = "feature"
TARGET = "target"
IDENTIFIER = "identifier"
EXCLUDED = "excluded"
ROLES = (FEATURE, TARGET, IDENTIFIER, EXCLUDED)

MISSING = None

DEFAULT_MISSING_TOKENS = ("", "na", "n/a", "null", "nan")
BOOLEAN_TOKENS = {"true": True, "false": False}

# Decimal with optional sign and scientific notation; rejects inf/nan/locale forms.
_NUMERIC_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")

# A column stays categorical up to max(100 distinct, 50% of rows); beyond that
# it is free text and unusable for one-hot style downstream work.
CATEGORICAL_CAP_ABSOLUTE = 100
CATEGORICAL_CAP_ROW_FRACTION = 0.5


@dataclass(frozen=True)
class CsvOptions:
    delimiter: str = ","
    header_required: bool = True
    missing_tokens: tuple[str, ...] = DEFAULT_MISSING_TOKENS

    def is_missing_token(self, raw: str) -> bool:
        return raw.strip().lower() in {t.lower() for t in self.missing_tokens}


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    dtype: str
    role: str = FEATURE
    missing_count: int = 0

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise ValueError(f"unknown dtype {self.dtype!r}")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class LineageEntry:
    """One applied operation: what ran, with which parameters, on which parent."""

    op: str
    params: Mapping[str, Any]
    parent: str
    columns: tuple[str, ...] = ()
    removed: tuple[str, ...] = ()
    added: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "op": self.op,
            "params": dict(self.params),
            "parent": self.parent,
            "columns": list(self.columns),
            "removed": list(self.removed),
            "added": list(self.added),
        }


def _normalize_cell(value: Any, dtype: str, col: str) -> Any:
    if value is MISSING:
        return MISSING
    if dtype == NUMERIC:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise DtypeMismatch(f"column {col!r}: {value!r} is not numeric")
        f = float(value)
        if math.isnan(f):
            return MISSING
        if math.isinf(f):
            raise DtypeMismatch(f"column {col!r}: infinite values not allowed")
        return f
    if dtype == BOOLEAN:
        if not isinstance(value, bool):
            raise DtypeMismatch(f"column {col!r}: {value!r} is not boolean")
        return value
    if not isinstance(value, str):
        raise DtypeMismatch(f"column {col!r}: {value!r} is not a string")
    return value


@dataclass(frozen=True)
class Dataset:
    """Immutable table with typed columns and operation lineage."""

    id: str
    name: str
    columns: tuple[ColumnSpec, ...]
    rows: tuple[tuple, ...]
    lineage: tuple[LineageEntry, ...] = ()

    # -- construction ---------------------------------------------------------

    @classmethod
    def create(
        cls,
        name: str,
        columns: Sequence[ColumnSpec],
        rows: Iterable[Sequence],
        lineage: Sequence[LineageEntry] = (),
        dataset_id: Optional[str] = None,
    ) -> "Dataset":
        """Validate invariants, normalize cells, recompute missing counts."""
        cols = tuple(columns)
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate column names: {dupes}")
        targets = [c.name for c in cols if c.role == TARGET]
        if len(targets) > 1:
            raise ValueError(f"more than one target column: {targets}")

        norm_rows = []
        missing = [0] * len(cols)
        for r_i, row in enumerate(rows):
            row = tuple(row)
            if len(row) != len(cols):
                raise ValueError(
                    f"row {r_i} has {len(row)} cells, expected {len(cols)}"
                )
            cells = []
            for c_i, (cell, spec) in enumerate(zip(row, cols)):
                cell = _normalize_cell(cell, spec.dtype, spec.name)
                if cell is MISSING:
                    missing[c_i] += 1
                cells.append(cell)
            norm_rows.append(tuple(cells))

        cols = tuple(
            replace(c, missing_count=m) for c, m in zip(cols, missing)
        )
        rows_t = tuple(norm_rows)
        lineage_t = tuple(lineage)
        if dataset_id is None:
            dataset_id = _content_id(name, cols, rows_t, lineage_t)
        return cls(dataset_id, name, cols, rows_t, lineage_t)

    @classmethod
    def from_columns(
        cls,
        name: str,
        data: Mapping[str, Sequence],
        dtypes: Optional[Mapping[str, str]] = None,
        roles: Optional[Mapping[str, str]] = None,
    ) -> "Dataset":
        """Build a dataset from column-major Python values, inferring dtypes."""
        dtypes = dict(dtypes or {})
        roles = dict(roles or {})
        specs = []
        for col, values in data.items():
            dtype = dtypes.get(col) or _dtype_of_values(values, col)
            specs.append(ColumnSpec(col, dtype, roles.get(col, FEATURE)))
        n = max((len(v) for v in data.values()), default=0)
        for col, values in data.items():
            if len(values) != n:
                raise ValueError(f"column {col!r} has ragged length")
        rows = [tuple(data[c.name][i] for c in specs) for i in range(n)]
        return cls.create(name, specs, rows)

    # -- accessors ------------------------------------------------------------

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.columns)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column_index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise UnknownColumn(f"no column named {name!r}")

    def column(self, name: str) -> ColumnSpec:
        return self.columns[self.column_index(name)]

    def values(self, name: str) -> tuple:
        i = self.column_index(name)
        return tuple(row[i] for row in self.rows)

    def observed(self, name: str) -> list:
        return [v for v in self.values(name) if v is not MISSING]

    def target_column(self) -> Optional[str]:
        for c in self.columns:
            if c.role == TARGET:
                return c.name
        return None

    # -- derivation -----------------------------------------------------------

    def with_roles(self, roles: Mapping[str, str]) -> "Dataset":
        """Reassign column roles. Metadata only: no lineage entry."""
        for name in roles:
            self.column_index(name)
        cols = tuple(
            replace(c, role=roles.get(c.name, c.role)) for c in self.columns
        )
        return Dataset.create(self.name, cols, self.rows, self.lineage)

    def derive(
        self,
        columns: Sequence[ColumnSpec],
        rows: Iterable[Sequence],
        op: str,
        params: Mapping[str, Any],
        op_columns: Sequence[str] = (),
        removed: Sequence[str] = (),
        added: Sequence[str] = (),
        name: Optional[str] = None,
        dataset_id: Optional[str] = None,
    ) -> "Dataset":
        """Produce a child dataset with one lineage entry appended."""
        entry = LineageEntry(
            op=op,
            params=dict(params),
            parent=self.id,
            columns=tuple(op_columns),
            removed=tuple(removed),
            added=tuple(added),
        )
        return Dataset.create(
            name if name is not None else self.name,
            columns,
            rows,
            self.lineage + (entry,),
            dataset_id=dataset_id,
        )

    def renamed(self, name: str, dataset_id: Optional[str] = None) -> "Dataset":
        return Dataset.create(name, self.columns, self.rows, self.lineage, dataset_id)


def _dtype_of_values(values: Sequence, col: str) -> str:
    observed = [v for v in values if v is not None]
    if observed and all(isinstance(v, bool) for v in observed):
        return BOOLEAN
    if all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in observed
    ):
        return NUMERIC
    if all(isinstance(v, str) for v in observed):
        return CATEGORICAL
    raise DtypeMismatch(f"column {col!r}: mixed value types")


def _content_id(name, columns, rows, lineage) -> str:
    h = hashlib.sha256()
    h.update(name.encode("utf-8"))
    for c in columns:
        h.update(f"|{c.name}:{c.dtype}:{c.role}".encode("utf-8"))
    for row in rows:
        h.update(b"\x1e")
        for cell in row:
            h.update(repr(cell).encode("utf-8"))
    for entry in lineage:
        h.update(f"|{entry.op}:{sorted(entry.params.items())!r}:{entry.parent}".encode("utf-8"))
    return h.hexdigest()[:16]


# --- schema inference ----------------------------------------------------------


def infer_schema(
    grid: Sequence[Sequence[str]],
    names: Sequence[str],
    options: Optional[CsvOptions] = None,
) -> list[ColumnSpec]:
    """Infer one ColumnSpec per column of a rectangular raw string grid.

    numeric if every non-missing entry is a plain decimal (optional exponent),
    boolean if all are true/false tokens, text past the categorical cardinality
    cap, categorical otherwise.
    """
    options = options or CsvOptions()
    for i, row in enumerate(grid):
        if len(row) != len(names):
            raise ValueError(f"grid row {i} not rectangular")
    n_rows = len(grid)
    cap = max(CATEGORICAL_CAP_ABSOLUTE, CATEGORICAL_CAP_ROW_FRACTION * n_rows)
    specs = []
    for c_i, name in enumerate(names):
        raw = [grid[r][c_i] for r in range(n_rows)]
        present = [t for t in raw if not options.is_missing_token(t)]
        missing = len(raw) - len(present)
        if all(_NUMERIC_RE.match(t.strip()) for t in present):
            dtype = NUMERIC
        elif present and all(t.strip().lower() in BOOLEAN_TOKENS for t in present):
            dtype = BOOLEAN
        else:
            distinct = len(set(present))
            dtype = TEXT if distinct > cap else CATEGORICAL
        specs.append(ColumnSpec(name, dtype, FEATURE, missing))
    return specs


def _parse_cell(token: str, dtype: str, options: CsvOptions):
    if options.is_missing_token(token):
        return MISSING
    if dtype == NUMERIC:
        return float(token.strip())
    if dtype == BOOLEAN:
        return BOOLEAN_TOKENS[token.strip().lower()]
    return token


# --- CSV I/O -------------------------------------------------------------------


def read_csv(path, options: Optional[CsvOptions] = None) -> Dataset:
    """Load a UTF-8 CSV into a Dataset with inferred schema and empty lineage."""
    options = options or CsvOptions()
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh, delimiter=options.delimiter)
            records = list(reader)
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise FileUnreadable(f"{path} is not UTF-8 text: {exc}") from exc

    if not records:
        raise EmptyFile(f"{path} has no content")

    if options.header_required:
        names = [h.strip() for h in records[0]]
        data = records[1:]
    else:
        width = len(records[0])
        names = [f"col_{i}" for i in range(width)]
        data = records

    width = len(names)
    for i, row in enumerate(data, start=1):
        if len(row) != width:
            raise MalformedCsv(
                f"row {i} has {len(row)} fields, expected {width}", row_index=i
            )

    specs = infer_schema(data, names, options)
    rows = [
        tuple(_parse_cell(tok, spec.dtype, options) for tok, spec in zip(row, specs))
        for row in data
    ]
    return Dataset.create(path.stem, specs, rows)


def _serialize_cell(value, dtype: str) -> str:
    if value is MISSING:
        return ""
    if dtype == NUMERIC:
        return repr(float(value))
    if dtype == BOOLEAN:
        return "true" if value else "false"
    return value


def write_csv(ds: Dataset, path, delimiter: str = ",") -> None:
    """Write RFC-4180-style CSV: header row, missing as empty field."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            writer.writerow(ds.column_names)
            for row in ds.rows:
                writer.writerow(
                    [_serialize_cell(v, c.dtype) for v, c in zip(row, ds.columns)]
                )
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# --- splitting -------------------------------------------------------------------


def split_train_test(
    ds: Dataset, test_fraction: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Disjoint row partition: round(fraction*n) test rows, floor 1 per side."""
    n = ds.n_rows
    if n < 2:
        raise DegenerateSplit(f"need at least 2 rows to split, have {n}")
    if not 0 < test_fraction < 1:
        raise DegenerateSplit(f"test_fraction must be in (0,1), got {test_fraction}")
    n_test = int(round(test_fraction * n))
    n_test = min(max(n_test, 1), n - 1)

    rng = random.Random(seed)
    order = list(range(n))
    rng.shuffle(order)
    test_idx = sorted(order[:n_test])
    train_idx = sorted(order[n_test:])

    def part(indices, label):
        rows = [ds.rows[i] for i in indices]
        entry_params = {"test_fraction": test_fraction, "seed": seed, "part": label}
        return ds.derive(
            ds.columns,
            rows,
            op="split_train_test",
            params=entry_params,
            name=f"{ds.name}#{label}",
        )

    return part(train_idx, "train"), part(test_idx, "test")


# --- summaries -------------------------------------------------------------------


def quantile_type7(sorted_values: Sequence[float], p: float) -> float:
    """Linear interpolation between order statistics (the common type-7 rule)."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("no values")
    if n == 1:
        return float(sorted_values[0])
    h = (n - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, n - 1)
    frac = h - lo
    return float(sorted_values[lo]) + frac * (
        float(sorted_values[hi]) - float(sorted_values[lo])
    )


def population_sd(values: Sequence[float]) -> float:
    n = len(values)
    mean = sum(values) / n
    return math.sqrt(sum((v - mean) ** 2 for v in values) / n)


@dataclass(frozen=True)
class ColumnSummary:
    name: str
    dtype: str
    count: int
    missing_fraction: float
    min: Optional[float] = None
    max: Optional[float] = None
    mean: Optional[float] = None
    sd: Optional[float] = None
    q1: Optional[float] = None
    median: Optional[float] = None
    q3: Optional[float] = None
    cardinality: Optional[int] = None
    top_value: Optional[str] = None
    top_count: Optional[int] = None

    def to_json(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def summarize(ds: Dataset) -> list[ColumnSummary]:
    """One deterministic summary per column."""
    out = []
    for spec in ds.columns:
        values = ds.values(spec.name)
        observed = [v for v in values if v is not MISSING]
        n = len(values)
        missing_fraction = (n - len(observed)) / n if n else 0.0
        base = dict(
            name=spec.name,
            dtype=spec.dtype,
            count=len(observed),
            missing_fraction=missing_fraction,
        )
        if spec.dtype == NUMERIC and observed:
            s = sorted(observed)
            base.update(
                min=s[0],
                max=s[-1],
                mean=sum(s) / len(s),
                sd=population_sd(s),
                q1=quantile_type7(s, 0.25),
                median=quantile_type7(s, 0.5),
                q3=quantile_type7(s, 0.75),
            )
        elif spec.dtype != NUMERIC and observed:
            tokens = [_serialize_cell(v, spec.dtype) for v in observed]
            counts: dict[str, int] = {}
            for t in tokens:
                counts[t] = counts.get(t, 0) + 1
            # ties broken lexicographically so summaries are order-free
            top = min(counts, key=lambda t: (-counts[t], t))
            base.update(
                cardinality=len(counts), top_value=top, top_count=counts[top]
            )
        out.append(ColumnSummary(**base))
    return out


# --- textual descriptions ---------------------------------------------------------


@dataclass(frozen=True)
class TextSummary:
    """Short recomputable statements about one column's distribution."""

    column: str
    elements: tuple[str, ...]

    def to_json(self) -> dict:
        return {"column": self.column, "elements": list(self.elements)}


def iqr_outlier_count(values: Sequence[float], multiplier: float = 1.5) -> int:
    s = sorted(values)
    q1 = quantile_type7(s, 0.25)
    q3 = quantile_type7(s, 0.75)
    iqr = q3 - q1
    lo, hi = q1 - multiplier * iqr, q3 + multiplier * iqr
    return sum(1 for v in values if v < lo or v > hi)


def _ranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Spearman rank correlation with average ranks; None when degenerate."""
    if len(x) != len(y) or len(x) < 2:
        return None
    rx, ry = _ranks(x), _ranks(y)
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    sxx = sum((a - mx) ** 2 for a in rx)
    syy = sum((b - my) ** 2 for b in ry)
    if sxx == 0 or syy == 0:
        return None
    sxy = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    return sxy / math.sqrt(sxx * syy)


TREND_SPEARMAN_THRESHOLD = 0.8


def describe_column(
    ds: Dataset, col: str, order_by: Optional[str] = None
) -> TextSummary:
    """Data-derived textual description: extremes, center, spread, outliers, trend."""
    spec = ds.column(col)
    if spec.dtype == TEXT:
        raise UnsupportedDtype(f"column {col!r} is free text")
    values = ds.values(col)
    elements: list[str] = []

    if spec.dtype == NUMERIC:
        observed = [v for v in values if v is not MISSING]
        if not observed:
            elements.append("no observed values")
        elif min(observed) == max(observed):
            elements.append(f"constant value {fmt_number(observed[0])}")
        else:
            s = sorted(observed)
            elements.append(f"min {fmt_number(s[0])}")
            elements.append(f"max {fmt_number(s[-1])}")
            elements.append(f"mean {fmt_number(sum(s) / len(s))}")
            elements.append(f"median {fmt_number(quantile_type7(s, 0.5))}")
            elements.append(f"sd {fmt_number(population_sd(s))}")
            n_out = iqr_outlier_count(observed)
            if n_out:
                plural = "s" if n_out != 1 else ""
                elements.append(f"{n_out} outlier{plural} (IQR rule)")
    else:
        observed = [v for v in values if v is not MISSING]
        if not observed:
            elements.append("no observed values")
        else:
            tokens = [_serialize_cell(v, spec.dtype) for v in observed]
            counts: dict[str, int] = {}
            for t in tokens:
                counts[t] = counts.get(t, 0) + 1
            top = min(counts, key=lambda t: (-counts[t], t))
            elements.append(
                f"dominant category {top} ({counts[top]} of {len(tokens)} rows)"
            )
            elements.append(f"cardinality {len(counts)}")

    if order_by is not None and spec.dtype == NUMERIC:
        order_spec = ds.column(order_by)
        if order_spec.dtype != NUMERIC:
            raise DtypeMismatch(f"order_by column {order_by!r} must be numeric")
        pairs = [
            (o, v)
            for o, v in zip(ds.values(order_by), values)
            if o is not MISSING and v is not MISSING
        ]
        if len(pairs) >= 2:
            rho = spearman([p[0] for p in pairs], [p[1] for p in pairs])
            if rho is not None and abs(rho) >= TREND_SPEARMAN_THRESHOLD:
                direction = "increasing" if rho > 0 else "decreasing"
                elements.append(f"{direction} trend over {order_by}")

    return TextSummary(column=col, elements=tuple(elements))
