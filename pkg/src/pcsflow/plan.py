"""Structured plan DSL: parse, statically validate, execute, self-repair.

A plan is a closed sequence of registered tool calls (JSON on the wire).
Execution applies the steps in order against an immutable Dataset, stops at
the first failure, and leaves a complete trace. The repair loop asks a
planner backend for a revised plan after each failure, bounded by a retry
budget; transport failures and unusable responses consume budget too.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence

from .errors import (
    BackendFailure,
    InvalidParam,
    PlanSchemaError,
    PlanSyntaxError,
    StepFailed,
)
from .mltools import (
    OP_NAMES,
    FittedStep,
    OpDescriptor,
    apply_step,
    fit_op,
    op_input_dtype,
    op_param_checker,
)
from .tabular import BOOLEAN, CATEGORICAL, NUMERIC, TARGET, ColumnSpec, Dataset

PLAN_VERSION = "1"

# Stage numbering for tool availability: 1 define, 2 clean/EDA, 3 model, 4 evaluate.
STAGE_DEFINE, STAGE_CLEAN, STAGE_MODEL, STAGE_EVALUATE = 1, 2, 3, 4


@dataclass(frozen=True)
class PlanStep:
    index: int
    op: OpDescriptor


@dataclass(frozen=True)
class Plan:
    version: str
    task_label: str
    steps: tuple[PlanStep, ...]

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "task_label": self.task_label,
            "steps": [s.op.to_json() for s in self.steps],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def identity_plan(task_label: str = "identity") -> Plan:
    return Plan(PLAN_VERSION, task_label, ())


def plan_from_ops(ops: Sequence[OpDescriptor], task_label: str = "cleaning") -> Plan:
    steps = tuple(PlanStep(i, op) for i, op in enumerate(ops))
    return Plan(PLAN_VERSION, task_label, steps)


# --- tool registry ------------------------------------------------------------------


@dataclass(frozen=True)
class ToolEntry:
    name: str
    plannable: bool
    input_dtype: str  # "numeric" | "discrete" | "any"
    stages: frozenset[int]


class ToolRegistry:
    """Registered operations with stage availability flags."""

    def __init__(self, entries: Sequence[ToolEntry]):
        self._entries = {e.name: e for e in entries}
        if len(self._entries) != len(entries):
            raise ValueError("duplicate tool names")

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def entry(self, name: str) -> ToolEntry:
        return self._entries[name]

    def names(self) -> tuple[str, ...]:
        return tuple(self._entries)

    def is_plannable(self, name: str) -> bool:
        return name in self._entries and self._entries[name].plannable

    def available(self, name: str, stage: int) -> bool:
        return name in self._entries and stage in self._entries[name].stages


def default_registry() -> ToolRegistry:
    entries = [
        ToolEntry(op, True, op_input_dtype(op), frozenset({STAGE_CLEAN, STAGE_MODEL}))
        for op in OP_NAMES
    ]
    entries += [
        ToolEntry("split_train_test", False, "any", frozenset({STAGE_CLEAN, STAGE_MODEL})),
        ToolEntry("summarize", False, "any", frozenset({STAGE_DEFINE, STAGE_CLEAN})),
        ToolEntry("describe_column", False, "any", frozenset({STAGE_DEFINE, STAGE_CLEAN})),
    ]
    return ToolRegistry(entries)


REGISTRY = default_registry()


# --- parsing ------------------------------------------------------------------------

_TOP_LEVEL_KEYS = {"version", "task_label", "steps"}
_STEP_KEYS = {"op", "columns", "params"}
_SCALAR_TYPES = (str, int, float, bool)


def parse_plan(text: str, registry: ToolRegistry = REGISTRY) -> Plan:
    """Parse and schema-check a JSON plan document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlanSyntaxError(
            f"plan is not valid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc

    if not isinstance(doc, dict):
        raise PlanSchemaError("plan document must be a JSON object")
    unknown = set(doc) - _TOP_LEVEL_KEYS
    if unknown:
        raise PlanSchemaError(f"unknown top-level key(s): {sorted(unknown)}")
    version = doc.get("version")
    if version is None:
        raise PlanSchemaError("missing 'version'")
    if version != PLAN_VERSION:
        raise PlanSchemaError(f"unrecognized plan version {version!r}")
    if "steps" not in doc:
        raise PlanSchemaError("missing 'steps'")
    raw_steps = doc["steps"]
    if not isinstance(raw_steps, list):
        raise PlanSchemaError("'steps' must be a list")
    task_label = doc.get("task_label", "")
    if not isinstance(task_label, str):
        raise PlanSchemaError("'task_label' must be a string")

    steps = []
    for i, raw in enumerate(raw_steps):
        if not isinstance(raw, dict):
            raise PlanSchemaError(f"step {i} is not an object", step_index=i)
        extra = set(raw) - _STEP_KEYS
        if extra:
            raise PlanSchemaError(
                f"step {i} has unknown key(s) {sorted(extra)}", step_index=i
            )
        op = raw.get("op")
        if not isinstance(op, str):
            raise PlanSchemaError(f"step {i} missing 'op'", step_index=i)
        if not registry.is_plannable(op):
            raise PlanSchemaError(f"step {i}: unknown op {op!r}", step_index=i)
        columns = raw.get("columns", [])
        if not isinstance(columns, list) or not all(isinstance(c, str) for c in columns):
            raise PlanSchemaError(
                f"step {i}: 'columns' must be a list of strings", step_index=i
            )
        params = raw.get("params", {})
        if not isinstance(params, dict):
            raise PlanSchemaError(f"step {i}: 'params' must be an object", step_index=i)
        for key, value in params.items():
            if not isinstance(key, str) or not isinstance(value, _SCALAR_TYPES):
                raise PlanSchemaError(
                    f"step {i}: param {key!r} must map to a scalar", step_index=i
                )
        steps.append(PlanStep(i, OpDescriptor(op, tuple(columns), dict(params))))
    return Plan(PLAN_VERSION, task_label, tuple(steps))


# --- static validation ----------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    step: int
    message: str
    related_step: Optional[int] = None

    def to_json(self) -> dict:
        out = {"step": self.step, "message": self.message}
        if self.related_step is not None:
            out["related_step"] = self.related_step
        return out


def _required_dtype(op: OpDescriptor) -> str:
    base = op_input_dtype(op.op)
    if op.op == "fill_missing":
        strategy = op.params.get("strategy")
        if strategy in ("mean", "median", "knn"):
            return "numeric"
        if strategy == "group_wise" and op.params.get("agg", "mean") in ("mean", "median"):
            return "numeric"
        return "any"
    return base


def _dtype_ok(dtype: str, family: str) -> bool:
    if family == "numeric":
        return dtype == NUMERIC
    if family == "discrete":
        return dtype in (CATEGORICAL, BOOLEAN)
    return True


def validate_plan(plan: Plan, schema: Sequence[ColumnSpec]) -> list[Diagnostic]:
    """Static diagnostics: column existence and dtypes tracked step by step.

    Column sets that depend on data values (criterion-based removals, feature
    selection) are tracked pessimistically: later references to a column that
    may have been dropped yield a diagnostic pointing at both steps.
    """
    known: dict[str, str] = {c.name: c.dtype for c in schema}
    wildcards: list[tuple[str, str]] = []  # (prefix, dtype) for one-hot blocks
    uncertain: dict[str, int] = {}  # column -> step that made it uncertain
    target = next((c.name for c in schema if c.role == TARGET), None)
    diagnostics: list[Diagnostic] = []

    def resolve(name: str) -> Optional[str]:
        if name in known:
            return known[name]
        for prefix, dtype in wildcards:
            if name.startswith(prefix):
                return dtype
        return None

    for step in plan.steps:
        op = step.op
        try:
            op_param_checker(op.op)(op.params)
        except InvalidParam as exc:
            diagnostics.append(Diagnostic(step.index, str(exc)))
            continue

        family = _required_dtype(op)
        for col in op.columns:
            dtype = resolve(col)
            if dtype is None:
                if col in uncertain:
                    diagnostics.append(
                        Diagnostic(
                            step.index,
                            f"column {col!r} may have been removed by step {uncertain[col]}",
                            related_step=uncertain[col],
                        )
                    )
                else:
                    diagnostics.append(
                        Diagnostic(step.index, f"unknown column {col!r}")
                    )
                continue
            if not _dtype_ok(dtype, family):
                diagnostics.append(
                    Diagnostic(
                        step.index,
                        f"column {col!r} has dtype {dtype}, {op.op} needs {family}",
                    )
                )
        extra_refs = [
            op.params[k]
            for k in ("group_col", "target")
            if k in op.params and isinstance(op.params[k], str)
        ]
        for col in extra_refs:
            if resolve(col) is None and col not in uncertain:
                diagnostics.append(Diagnostic(step.index, f"unknown column {col!r}"))

        # schema effects
        name = op.op
        if name == "encode_categorical":
            scheme = op.params.get("scheme")
            if scheme in ("label", "frequency"):
                for col in op.columns:
                    if col in known:
                        known[col] = NUMERIC
            elif scheme == "one_hot":
                for col in op.columns:
                    known.pop(col, None)
                    wildcards.append((f"{col}=", NUMERIC))
        elif name == "discretize_features":
            for col in op.columns:
                if col in known:
                    known[col] = CATEGORICAL
        elif name == "remove_columns":
            if op.params.get("criterion") == "explicit":
                for col in op.columns:
                    known.pop(col, None)
            else:
                for col, dtype in list(known.items()):
                    if col == target:
                        continue
                    if op.columns and col not in op.columns:
                        continue
                    criterion = op.params.get("criterion")
                    if criterion in ("variance", "correlation") and dtype != NUMERIC:
                        continue
                    known.pop(col)
                    uncertain[col] = step.index
        elif name == "select_features":
            step_target = op.params.get("target") or target
            for col in list(known):
                if col == step_target:
                    continue
                if op.columns and col not in op.columns:
                    continue
                known.pop(col)
                uncertain[col] = step.index
        elif name == "create_polynomial_features":
            try:
                fitted_names = _static_polynomial_names(op)
            except InvalidParam:
                fitted_names = []
            for new in fitted_names:
                known[new] = NUMERIC
        elif name == "reduce_dimensions":
            for col in op.columns:
                known.pop(col, None)
            n = op.params.get("n_components")
            if isinstance(n, int):
                for j in range(1, n + 1):
                    known[f"pc_{j}"] = NUMERIC
    return diagnostics


def _static_polynomial_names(op: OpDescriptor) -> list[str]:
    from itertools import combinations, combinations_with_replacement

    from .mltools import _monomial_name

    degree = op.params["degree"]
    interactions_only = op.params.get("interactions_only", False)
    names = []
    for d in range(2, degree + 1):
        picker = combinations if interactions_only else combinations_with_replacement
        for combo in picker(range(len(op.columns)), d):
            exponents = [0] * len(op.columns)
            for i in combo:
                exponents[i] += 1
            names.append(_monomial_name(op.columns, exponents))
    return names


# --- execution -------------------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    index: int
    op: str
    outcome: str  # "ok" | "failed"
    error: Optional[str]
    input_id: str
    output_id: Optional[str]
    elapsed_s: float

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "op": self.op,
            "outcome": self.outcome,
            "error": self.error,
            "input_id": self.input_id,
            "output_id": self.output_id,
            "elapsed_s": self.elapsed_s,
        }


@dataclass(frozen=True)
class AttemptRecord:
    number: int  # 1-based execution count
    steps: tuple[StepRecord, ...]
    outcome: str  # "ok" | "failed" | "checks_failed"
    error: Optional[str]

    def to_json(self) -> dict:
        return {
            "number": self.number,
            "steps": [s.to_json() for s in self.steps],
            "outcome": self.outcome,
            "error": self.error,
        }


@dataclass(frozen=True)
class RepairAttempt:
    number: int  # 1-based repair round, <= n_max
    error_context: Mapping[str, Any]
    repaired_plan: Optional[dict]
    outcome: str  # "ok" | "backend_failure: ..." | "invalid_plan: ..."

    def to_json(self) -> dict:
        return {
            "number": self.number,
            "error_context": dict(self.error_context),
            "repaired_plan": self.repaired_plan,
            "outcome": self.outcome,
        }


@dataclass
class ExecutionTrace:
    attempts: list[AttemptRecord] = field(default_factory=list)
    repairs: list[RepairAttempt] = field(default_factory=list)
    fitted_steps: tuple[FittedStep, ...] = ()

    @property
    def steps(self) -> tuple[StepRecord, ...]:
        return self.attempts[-1].steps if self.attempts else ()

    def to_json(self) -> dict:
        return {
            "attempts": [a.to_json() for a in self.attempts],
            "repairs": [r.to_json() for r in self.repairs],
            "fitted_steps": [s.to_json() for s in self.fitted_steps],
        }


def _execute_once(
    plan: Plan, ds: Dataset, stage: Optional[int], registry: ToolRegistry
):
    records: list[StepRecord] = []
    fitted: list[FittedStep] = []
    current = ds
    for step in plan.steps:
        start = time.perf_counter()
        op = step.op
        if stage is not None and not registry.available(op.op, stage):
            error = f"op {op.op!r} not available in stage {stage}"
            records.append(
                StepRecord(
                    step.index, op.op, "failed", error, current.id, None,
                    time.perf_counter() - start,
                )
            )
            return None, records, fitted, error, step.index
        try:
            fit = fit_op(current, op.op, op.columns, op.params)
            nxt = apply_step(fit, current)
        except Exception as exc:  # recorded, not propagated: traces carry failures
            error = f"{type(exc).__name__}: {exc}"
            records.append(
                StepRecord(
                    step.index, op.op, "failed", error, current.id, None,
                    time.perf_counter() - start,
                )
            )
            return None, records, fitted, error, step.index
        fitted.append(fit)
        records.append(
            StepRecord(
                step.index, op.op, "ok", None, current.id, nxt.id,
                time.perf_counter() - start,
            )
        )
        current = nxt
    return current, records, fitted, None, None


def execute_plan(
    plan: Plan,
    ds: Dataset,
    stage: Optional[int] = None,
    registry: ToolRegistry = REGISTRY,
) -> tuple[Dataset, ExecutionTrace]:
    """Apply plan steps in order; stop at the first failure.

    Raises StepFailed (carrying the trace) when a step fails.
    """
    out, records, fitted, error, failed_idx = _execute_once(plan, ds, stage, registry)
    outcome = "ok" if error is None else "failed"
    trace = ExecutionTrace(
        attempts=[AttemptRecord(1, tuple(records), outcome, error)],
        fitted_steps=tuple(fitted) if error is None else (),
    )
    if error is not None:
        raise StepFailed(error, trace=trace, step_index=failed_idx)
    return out, trace


def replay_fitted(
    steps: Sequence[FittedStep], ds: Dataset, for_test: bool = True
) -> Dataset:
    """Replay fitted steps (training statistics frozen) on new data."""
    current = ds
    for step in steps:
        current = apply_step(step, current, for_test=for_test)
    return current


# --- repair loop -------------------------------------------------------------------------

DEFAULT_N_MAX = 3


@dataclass
class RepairResult:
    ok: bool
    dataset: Optional[Dataset]
    trace: ExecutionTrace
    plan: Plan
    error: Optional[str] = None
    needs_human_intervention: bool = False


def _schema_json(ds: Dataset) -> list[dict]:
    return [
        {"name": c.name, "dtype": c.dtype, "role": c.role} for c in ds.columns
    ]


def repair_error_context(
    plan: Plan, failed_step: Optional[int], error: str, ds: Dataset
) -> dict:
    return {
        "plan": plan.to_json(),
        "failed_step": failed_step,
        "error": error,
        "schema": _schema_json(ds),
    }


def _repair_messages(context: Mapping) -> list[dict]:
    return [
        {
            "role": "system",
            "content": (
                "You repair structured cleaning plans. Reply with a corrected "
                "plan as a JSON object with keys version, task_label, steps."
            ),
        },
        {"role": "user", "content": json.dumps(context, indent=2)},
    ]


def repair_loop(
    plan: Plan,
    ds: Dataset,
    backend,
    n_max: int = DEFAULT_N_MAX,
    gate: Optional[Callable[[Dataset], Optional[str]]] = None,
    stage: Optional[int] = None,
    registry: ToolRegistry = REGISTRY,
) -> RepairResult:
    """Execute with bounded self-repair.

    After a failed execution (or a failed gate, e.g. the dataset check suite)
    the backend is sent {plan, failed_step, error, schema} and asked for a
    revised plan. At most n_max repair rounds; transport failures and
    unparseable responses consume a round. On exhaustion the result is
    flagged as needing human intervention.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    attempts: list[AttemptRecord] = []
    repairs: list[RepairAttempt] = []
    current = plan
    while True:
        out, records, fitted, error, failed_idx = _execute_once(
            current, ds, stage, registry
        )
        gate_msg = None
        if error is None and gate is not None:
            gate_msg = gate(out)
        if error is None and gate_msg is None:
            attempts.append(AttemptRecord(len(attempts) + 1, tuple(records), "ok", None))
            trace = ExecutionTrace(attempts, repairs, tuple(fitted))
            return RepairResult(True, out, trace, current)
        outcome = "failed" if error is not None else "checks_failed"
        failure = error if error is not None else gate_msg
        attempts.append(
            AttemptRecord(len(attempts) + 1, tuple(records), outcome, failure)
        )

        context = repair_error_context(current, failed_idx, failure, ds)
        new_plan = None
        while len(repairs) < n_max and new_plan is None:
            number = len(repairs) + 1
            try:
                response = backend.respond(_repair_messages(context), "plan")
            except BackendFailure as exc:
                repairs.append(
                    RepairAttempt(number, context, None, f"backend_failure: {exc}")
                )
                continue
            try:
                candidate = parse_plan(response, registry)
            except (PlanSyntaxError, PlanSchemaError) as exc:
                repairs.append(
                    RepairAttempt(number, context, None, f"invalid_plan: {exc}")
                )
                continue
            repairs.append(RepairAttempt(number, context, candidate.to_json(), "ok"))
            new_plan = candidate
        if new_plan is None:
            trace = ExecutionTrace(attempts, repairs)
            return RepairResult(
                False,
                None,
                trace,
                current,
                error=failure,
                needs_human_intervention=True,
            )
        current = new_plan
