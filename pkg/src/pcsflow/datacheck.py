"""Structural and logical validation checks for cleaned datasets.

Each check yields a <name, passed, message> record. The suite compares a
cleaned dataset against the raw dataset it came from; schema changes count
as consistent only when the cleaned dataset's lineage explains them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .tabular import Dataset

CHECK_ORDER = (
    "test_file_readable",
    "test_empty_dataset",
    "test_missing_values",
    "test_duplicated_features",
    "test_duplicated_rows",
    "test_data_consistency",
    "test_data_retention",
)

DEFAULT_RETENTION_THRESHOLD = 0.85


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    message: str

    def __post_init__(self):
        if not self.passed and not self.message:
            raise ValueError("failing check needs a message")

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "message": self.message}


@dataclass(frozen=True)
class CheckConfig:
    retention_threshold: float = DEFAULT_RETENTION_THRESHOLD
    require_no_missing: bool = True
    checks_enabled: frozenset[str] = frozenset(CHECK_ORDER)

    def __post_init__(self):
        if not 0 < self.retention_threshold <= 1:
            raise ValueError("retention_threshold must be in (0, 1]")
        unknown = set(self.checks_enabled) - set(CHECK_ORDER)
        if unknown:
            raise ValueError(f"unknown checks: {sorted(unknown)}")

    def to_json(self) -> dict:
        return {
            "retention_threshold": self.retention_threshold,
            "require_no_missing": self.require_no_missing,
            "checks_enabled": sorted(self.checks_enabled),
        }


def file_readable_failure(path, error: Exception) -> CheckResult:
    """Failing readability record for callers whose load step already failed."""
    return CheckResult(
        "test_file_readable", False, f"cannot read {path}: {error}"
    )


def _check_file_readable(clean: Dataset, raw: Dataset, cfg: CheckConfig) -> CheckResult:
    # both datasets are in memory here, so readability already held
    return CheckResult(
        "test_file_readable",
        True,
        f"dataset loaded ({clean.n_rows} rows, {clean.n_cols} columns)",
    )


def _check_empty_dataset(clean: Dataset, raw: Dataset, cfg: CheckConfig) -> CheckResult:
    if clean.n_rows == 0:
        return CheckResult(
            "test_empty_dataset", False, "dataset has column headers but 0 rows"
        )
    return CheckResult("test_empty_dataset", True, f"{clean.n_rows} rows present")


def _check_missing_values(clean: Dataset, raw: Dataset, cfg: CheckConfig) -> CheckResult:
    per_column = {
        c.name: c.missing_count / clean.n_rows
        for c in clean.columns
        if clean.n_rows and c.missing_count
    }
    if per_column and cfg.require_no_missing:
        detail = ", ".join(f"{k}={v:.4f}" for k, v in per_column.items())
        return CheckResult(
            "test_missing_values", False, f"missing value proportions: {detail}"
        )
    return CheckResult("test_missing_values", True, "no unprocessed missing values")


def _check_duplicated_features(clean: Dataset, raw: Dataset, cfg: CheckConfig) -> CheckResult:
    names = list(clean.column_names)
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        return CheckResult(
            "test_duplicated_features", False, f"duplicated column names: {dupes}"
        )
    return CheckResult("test_duplicated_features", True, "column names unique")


def _check_duplicated_rows(clean: Dataset, raw: Dataset, cfg: CheckConfig) -> CheckResult:
    seen = set()
    dupes = 0
    for row in clean.rows:
        key = tuple(repr(c) for c in row)
        if key in seen:
            dupes += 1
        seen.add(key)
    if dupes:
        return CheckResult(
            "test_duplicated_rows", False, f"{dupes} duplicated row(s) found"
        )
    return CheckResult("test_duplicated_rows", True, "no duplicated rows")


def _lineage_explains(clean: Dataset, column: str) -> bool:
    for entry in clean.lineage:
        if column in entry.removed or column in entry.columns:
            return True
    return False


def _check_data_consistency(clean: Dataset, raw: Dataset, cfg: CheckConfig) -> CheckResult:
    problems = []
    clean_by_name = {c.name: c for c in clean.columns}
    for spec in raw.columns:
        current = clean_by_name.get(spec.name)
        if current is None:
            if not _lineage_explains(clean, spec.name):
                problems.append(f"column {spec.name!r} disappeared without lineage")
        elif current.dtype != spec.dtype:
            if not _lineage_explains(clean, spec.name):
                problems.append(
                    f"column {spec.name!r} changed dtype "
                    f"{spec.dtype}->{current.dtype} without lineage"
                )
    if problems:
        return CheckResult("test_data_consistency", False, "; ".join(problems))
    return CheckResult(
        "test_data_consistency", True, "schema changes all explained by lineage"
    )


def _check_data_retention(clean: Dataset, raw: Dataset, cfg: CheckConfig) -> CheckResult:
    if raw.n_rows == 0:
        return CheckResult("test_data_retention", True, "raw dataset empty")
    ratio = clean.n_rows / raw.n_rows
    message = (
        f"retention {ratio:.4f} ({clean.n_rows}/{raw.n_rows}), "
        f"threshold {cfg.retention_threshold}"
    )
    # strict: exactly hitting the threshold still fails
    if ratio <= cfg.retention_threshold:
        return CheckResult("test_data_retention", False, message)
    return CheckResult("test_data_retention", True, message)


_CHECKS = {
    "test_file_readable": _check_file_readable,
    "test_empty_dataset": _check_empty_dataset,
    "test_missing_values": _check_missing_values,
    "test_duplicated_features": _check_duplicated_features,
    "test_duplicated_rows": _check_duplicated_rows,
    "test_data_consistency": _check_data_consistency,
    "test_data_retention": _check_data_retention,
}


def run_suite(
    clean: Dataset, raw: Dataset, cfg: Optional[CheckConfig] = None
) -> list[CheckResult]:
    """Run all enabled checks in canonical order."""
    cfg = cfg or CheckConfig()
    return [
        _CHECKS[name](clean, raw, cfg)
        for name in CHECK_ORDER
        if name in cfg.checks_enabled
    ]


def suite_passed(results: list[CheckResult]) -> bool:
    return all(r.passed for r in results)


def failures(results: list[CheckResult]) -> list[CheckResult]:
    return [r for r in results if not r.passed]
