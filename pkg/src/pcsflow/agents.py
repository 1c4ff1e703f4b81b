"""Staged workflow orchestrator: define -> clean/EDA -> model -> evaluate.

Four stage agents each own one phase; a review agent audits every stage for
predictability, computability, and stability, eliciting the judgment calls
that drive perturbation. The orchestrator is a single-threaded state
machine over an append-only memory; all backend interaction goes through
the pluggable planner protocol, so a scripted table makes whole runs
deterministic.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Mapping, Optional, Sequence

from . import datacheck
from .backends import PlannerBackend, backend_remote, backend_scripted  # noqa: F401
from .config import RunConfig
from .datacheck import CheckResult, run_suite, suite_passed
from .errors import (
    BackendFailure,
    CleaningExhausted,
    EmptyFits,
    MissingBinding,
    NoSuccessfulFits,
    NoTargetIdentified,
    PcsflowError,
    PlanSchemaError,
    PlanSyntaxError,
    SchemaMismatchAfterReplay,
    StageFailed,
)
from .metrics import nps as compute_nps
from .mltools import FittedStep, OpDescriptor
from .models import (
    CLASSIFICATION,
    REGRESSION,
    ModelSpec,
    PredictiveFit,
    Predictions,
    TrainedModel,
    default_zoo,
    predict,
    select_top,
    train,
    train_grid,
)
from .perturb import (
    JudgmentCall,
    PerturbationSpec,
    StabilityReport,
    ensure_reference_spec,
    enumerate_specs,
    materialize_with_recipe,
    stability_report,
    validate_all,
)
from .plan import (
    STAGE_CLEAN,
    ExecutionTrace,
    Plan,
    parse_plan,
    repair_error_context,
    repair_loop,
    replay_fitted,
)
from .tabular import (
    BOOLEAN,
    CATEGORICAL,
    IDENTIFIER,
    NUMERIC,
    TARGET,
    TEXT,
    Dataset,
    describe_column,
    read_csv,
    split_train_test,
    summarize,
)
from .util import stable_seed

HOLDOUT_FRACTION = 0.2  # used when no test file is supplied


class StageId(IntEnum):
    DEFINE = 1
    CLEAN = 2
    MODEL = 3
    EVALUATE = 4


STAGE_NAMES = {
    StageId.DEFINE: "define",
    StageId.CLEAN: "clean",
    StageId.MODEL: "model",
    StageId.EVALUATE: "evaluate",
}

ROLE_DEFINE = "define"
ROLE_EXPLORE = "explore"
ROLE_MODEL = "model"
ROLE_EVALUATE = "evaluate"
ROLE_PCS = "pcs"


# --- prompt templates -----------------------------------------------------------------

_PLACEHOLDER_RE = re.compile(r"\{([a-z_][a-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    role: str
    system_text: str
    task_text: str
    placeholders: frozenset[str]
    response_shape: str

    def __post_init__(self):
        used = set(_PLACEHOLDER_RE.findall(self.system_text + self.task_text))
        undeclared = used - self.placeholders
        if undeclared:
            raise ValueError(f"undeclared placeholders: {sorted(undeclared)}")


def render_prompt(tpl: PromptTemplate, bindings: Mapping[str, str]) -> tuple[str, str]:
    """Single-pass literal substitution; inserted text is never re-expanded."""

    def expand(text: str) -> str:
        def sub(match: re.Match) -> str:
            name = match.group(1)
            if name not in tpl.placeholders:
                return match.group(0)
            if name not in bindings:
                raise MissingBinding(f"no binding for placeholder {name!r}")
            return str(bindings[name])

        return _PLACEHOLDER_RE.sub(sub, text)

    return expand(tpl.system_text), expand(tpl.task_text)


_COMMON_SYSTEM = (
    "Problem description: {problem_description}\n"
    "Data context: {context_description}\n"
)

TEMPLATES: dict[str, PromptTemplate] = {
    "problem_definition": PromptTemplate(
        role=ROLE_DEFINE,
        system_text=(
            "You formulate tabular prediction problems. Identify the response "
            "variable, the task type, and which variables matter.\n" + _COMMON_SYSTEM
        ),
        task_text=(
            "Given the column overview below, reply with a JSON object with "
            "optional keys: target, task (classification|regression), "
            "identifiers (list), excluded (list), relevance (object), "
            "observation_unit (string).\n\nColumn overview:\n{result}"
        ),
        placeholders=frozenset(
            {"problem_description", "context_description", "result"}
        ),
        response_shape="problem_definition",
    ),
    "cleaning_plan": PromptTemplate(
        role=ROLE_EXPLORE,
        system_text=(
            "You clean tabular datasets by composing registered operations "
            "into a structured plan. Plans are JSON: {\"version\":\"1\","
            "\"task_label\":\"cleaning\",\"steps\":[{\"op\":...,\"columns\":"
            "[...],\"params\":{...}}]}. Never invent operation names.\n"
            + _COMMON_SYSTEM
        ),
        task_text=(
            "Propose a cleaning plan for the dataset below. The cleaned data "
            "must pass the dataset checks (no missing values, sufficient row "
            "retention).\n\nSchema and summaries:\n{result}"
        ),
        placeholders=frozenset(
            {"problem_description", "context_description", "result"}
        ),
        response_shape="plan",
    ),
    "eda_questions": PromptTemplate(
        role=ROLE_EXPLORE,
        system_text=(
            "You drive exploratory analysis of a cleaned tabular dataset.\n"
            + _COMMON_SYSTEM
        ),
        task_text=(
            "Reply with a JSON list of short exploratory questions that the "
            "column summaries below can answer.\n\nSummaries:\n{result}"
        ),
        placeholders=frozenset(
            {"problem_description", "context_description", "result"}
        ),
        response_shape="eda_questions",
    ),
    "model_specs": PromptTemplate(
        role=ROLE_MODEL,
        system_text=(
            "You choose candidate model families for a prediction task from: "
            "mean_baseline, majority_baseline, linear_regression, "
            "logistic_regression, knn, decision_tree.\n" + _COMMON_SYSTEM
        ),
        task_text=(
            "Reply with a JSON list of model specs "
            "({\"family\":...,\"params\":{...}}) suited to the task below, or "
            "{\"use_default_zoo\": true} to accept the built-in zoo.\n\n"
            "Task context:\n{result}"
        ),
        placeholders=frozenset(
            {"problem_description", "context_description", "result"}
        ),
        response_shape="model_specs",
    ),
    "pcs_review": PromptTemplate(
        role=ROLE_PCS,
        system_text=(
            "You audit pipeline stage outputs for predictability (will "
            "conclusions generalize), stability (are results sensitive to "
            "reasonable alternative decisions), and computability (did the "
            "steps execute reliably). Issue critical, actionable feedback.\n"
            + _COMMON_SYSTEM
        ),
        task_text=(
            "Review this stage outcome.\n\nConclusion:\n{conclusion}\n\n"
            "Execution results:\n{result}\n\nReply with a JSON object: "
            "{\"predictability\": str, \"stability\": str, \"verdict\": "
            "\"accept\"|\"revise\", \"judgment_calls\": [...]} where each "
            "judgment call is {\"decision_point\": str, \"alternatives\": "
            "[{\"op\":...,\"columns\":[...],\"params\":{...}}]}."
        ),
        placeholders=frozenset(
            {"problem_description", "context_description", "conclusion", "result"}
        ),
        response_shape="pcs_review",
    ),
}


# --- state and report -------------------------------------------------------------------


@dataclass(frozen=True)
class MemoryEntry:
    stage: str
    role: str
    direction: str  # "request" | "response" | "note"
    content: str

    def to_json(self) -> dict:
        return {
            "stage": self.stage,
            "role": self.role,
            "direction": self.direction,
            "content": self.content,
        }


@dataclass
class SystemState:
    problem_description: str
    seed: int
    config: dict
    target: Optional[str] = None
    task_type: Optional[str] = None
    stage_outputs: dict = field(default_factory=dict)
    memory: list[MemoryEntry] = field(default_factory=list)

    def add_memory(self, stage: StageId, role: str, direction: str, content: str) -> None:
        self.memory.append(
            MemoryEntry(STAGE_NAMES[stage], role, direction, content)
        )

    def memory_json(self) -> list[dict]:
        return [m.to_json() for m in self.memory]


@dataclass(frozen=True)
class PcsReview:
    predictability: str
    stability: str
    verdict: str  # "accept" | "revise"
    suggested_calls: tuple[JudgmentCall, ...] = ()

    def to_json(self) -> dict:
        return {
            "predictability": self.predictability,
            "stability": self.stability,
            "verdict": self.verdict,
            "judgment_calls": [c.to_json() for c in self.suggested_calls],
        }


@dataclass(frozen=True)
class EdaReport:
    questions: tuple[str, ...]
    answers: tuple[dict, ...]
    column_summaries: tuple[dict, ...]
    text_summaries: tuple[dict, ...]

    def to_json(self) -> dict:
        return {
            "questions": list(self.questions),
            "answers": list(self.answers),
            "column_summaries": list(self.column_summaries),
            "text_summaries": list(self.text_summaries),
        }


@dataclass
class RunReport:
    """Structured record of one workflow run; serializes to report.json."""

    config: dict
    seed: int
    created_at: str
    stages_completed: list[str] = field(default_factory=list)
    problem: Optional[dict] = None
    cleaning: Optional[dict] = None
    eda: Optional[dict] = None
    perturbation: Optional[dict] = None
    fits: Optional[list] = None
    stability: Optional[dict] = None
    selected_fit: Optional[dict] = None
    final: Optional[dict] = None
    pcs_reviews: dict = field(default_factory=dict)
    checks: Optional[list] = None
    memory: list = field(default_factory=list)
    failure: Optional[dict] = None

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "created_at": self.created_at,
            "stages_completed": self.stages_completed,
            "problem": self.problem,
            "cleaning": self.cleaning,
            "eda": self.eda,
            "perturbation": self.perturbation,
            "fits": self.fits,
            "stability": self.stability,
            "selected_fit": self.selected_fit,
            "final": self.final,
            "pcs_reviews": self.pcs_reviews,
            "checks": self.checks,
            "memory": self.memory,
            "failure": self.failure,
        }


# --- backend plumbing --------------------------------------------------------------------


def _ask(
    state: SystemState,
    backend: PlannerBackend,
    purpose: str,
    stage: StageId,
    context_description: str,
    result: str,
    conclusion: str = "",
) -> str:
    tpl = TEMPLATES[purpose]
    bindings = {
        "problem_description": state.problem_description,
        "context_description": context_description,
        "result": result,
        "conclusion": conclusion,
    }
    system_text, task_text = render_prompt(tpl, bindings)
    messages = [
        {"role": "system", "content": system_text},
        {"role": "user", "content": task_text},
    ]
    state.add_memory(stage, tpl.role, "request", task_text)
    response = backend.respond(
        messages, tpl.response_shape, agent=tpl.role, stage=int(stage)
    )
    state.add_memory(stage, tpl.role, "response", response)
    return response


def _parse_json_or_none(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return None


def _context_description(ds: Dataset) -> str:
    cols = ", ".join(f"{c.name}:{c.dtype}" for c in ds.columns)
    return f"{ds.n_rows} rows x {ds.n_cols} columns ({cols})"


def _summaries_json(ds: Dataset) -> str:
    return json.dumps([s.to_json() for s in summarize(ds)], indent=2)


# --- stage 1: define -----------------------------------------------------------------------


def _looks_like_identifier(ds: Dataset, name: str) -> bool:
    spec = ds.column(name)
    values = ds.observed(name)
    if len(values) != ds.n_rows or len(set(values)) != ds.n_rows:
        return False
    if spec.dtype == TEXT:
        return True
    lowered = name.lower()
    return lowered == "id" or lowered.endswith("_id") or lowered.endswith("id")


def define_stage(
    raw: Dataset, state: SystemState, backend: PlannerBackend, cfg: RunConfig
) -> tuple[dict, Dataset]:
    """Problem formulation: target, task type, variable relevance, roles."""
    response = _ask(
        state,
        backend,
        "problem_definition",
        StageId.DEFINE,
        _context_description(raw),
        _summaries_json(raw),
    )
    doc = _parse_json_or_none(response)
    if not isinstance(doc, dict):
        state.add_memory(
            StageId.DEFINE, ROLE_DEFINE, "note", "unparseable problem definition; using heuristics"
        )
        doc = {}

    target = cfg.target or doc.get("target")
    if not target:
        raise NoTargetIdentified("no target column from config or backend")
    if target not in raw.column_names:
        raise NoTargetIdentified(f"target column {target!r} not in dataset")

    target_dtype = raw.column(target).dtype
    heuristic_task = (
        CLASSIFICATION if target_dtype in (CATEGORICAL, BOOLEAN) else REGRESSION
    )
    if cfg.task != "auto":
        task = cfg.task
    elif doc.get("task") in (CLASSIFICATION, REGRESSION):
        task = doc["task"]
    else:
        task = heuristic_task

    def name_list(key: str) -> list[str]:
        raw_value = doc.get(key, [])
        if not isinstance(raw_value, list):
            return []
        return [
            c
            for c in raw_value
            if isinstance(c, str) and c in raw.column_names and c != target
        ]

    identifiers = name_list("identifiers")
    for c in raw.column_names:
        if c != target and c not in identifiers and _looks_like_identifier(raw, c):
            identifiers.append(c)
    excluded = name_list("excluded")

    roles = {target: TARGET}
    roles.update({c: IDENTIFIER for c in identifiers})
    roles.update({c: "excluded" for c in excluded})
    annotated = raw.with_roles(roles)

    raw_relevance = doc.get("relevance", {})
    relevance = (
        {c: note for c, note in raw_relevance.items() if isinstance(note, str)}
        if isinstance(raw_relevance, dict)
        else {}
    )
    for c in identifiers:
        relevance.setdefault(c, "unique per row; treated as identifier")

    record = {
        "target": target,
        "task": task,
        "task_heuristic": heuristic_task,
        "identifiers": identifiers,
        "excluded": excluded,
        "relevance": relevance,
        "observation_unit": doc.get(
            "observation_unit", f"one row per observation ({raw.n_rows} rows)"
        ),
    }
    state.target = target
    state.task_type = task
    review = pcs_review(record, state, backend, StageId.DEFINE)
    record["pcs_review"] = review.to_json()
    state.stage_outputs["define"] = record
    return record, annotated


# --- stage 2: explore (clean + EDA + perturb) -----------------------------------------------

DEFAULT_EDA_QUESTIONS = (
    "Which columns have missing values, and in what proportion?",
    "What are the ranges and central tendencies of the numeric columns?",
    "Which categories dominate the discrete columns?",
    "Which numeric columns contain IQR-rule outliers?",
)


def _answer_question(question: str, ds: Dataset, summaries) -> dict:
    """Answer an exploratory question from computed summaries only."""
    stats: list[dict] = []
    q = question.lower()
    if "missing" in q:
        rows = [
            {"column": s.name, "missing_fraction": s.missing_fraction}
            for s in summaries
            if s.missing_fraction > 0
        ]
        answer = (
            "no missing values remain"
            if not rows
            else f"{len(rows)} column(s) contain missing values"
        )
        stats = rows
    elif "outlier" in q:
        rows = []
        for s in summaries:
            if s.dtype != NUMERIC or s.count == 0:
                continue
            described = describe_column(ds, s.name)
            flagged = [e for e in described.elements if "outlier" in e]
            if flagged:
                rows.append({"column": s.name, "note": flagged[0]})
        answer = (
            "no IQR-rule outliers detected"
            if not rows
            else f"{len(rows)} numeric column(s) contain IQR-rule outliers"
        )
        stats = rows
    elif "categor" in q or "dominate" in q:
        rows = [
            {
                "column": s.name,
                "top_value": s.top_value,
                "top_count": s.top_count,
                "cardinality": s.cardinality,
            }
            for s in summaries
            if s.cardinality is not None
        ]
        answer = f"{len(rows)} discrete column(s) summarized"
        stats = rows
    else:
        rows = [
            {"column": s.name, "min": s.min, "max": s.max, "mean": s.mean}
            for s in summaries
            if s.dtype == NUMERIC and s.count
        ]
        answer = f"{len(rows)} numeric column(s) summarized"
        stats = rows
    return {"question": question, "answer": answer, "statistics": stats}


def _build_eda(
    clean: Dataset, state: SystemState, backend: PlannerBackend
) -> EdaReport:
    response = _ask(
        state,
        backend,
        "eda_questions",
        StageId.CLEAN,
        _context_description(clean),
        _summaries_json(clean),
    )
    doc = _parse_json_or_none(response)
    questions = tuple(
        q for q in (doc if isinstance(doc, list) else []) if isinstance(q, str)
    ) or DEFAULT_EDA_QUESTIONS

    summaries = summarize(clean)
    answers = tuple(_answer_question(q, clean, summaries) for q in questions)
    text_summaries = tuple(
        describe_column(clean, s.name).to_json()
        for s in summaries
        if s.dtype in (NUMERIC, CATEGORICAL, BOOLEAN) and s.count
    )
    return EdaReport(
        questions=questions,
        answers=answers,
        column_summaries=tuple(s.to_json() for s in summaries),
        text_summaries=text_summaries,
    )


# Alternative cleaning decisions worth perturbing, per operation kind.
def _derived_alternatives(op: OpDescriptor) -> list[OpDescriptor]:
    alts = [op]
    if op.op == "fill_missing" and op.params.get("strategy") in ("mean", "median", "knn"):
        for strategy in ("mean", "median"):
            candidate = OpDescriptor("fill_missing", op.columns, {"strategy": strategy})
            if candidate.params != dict(op.params):
                alts.append(candidate)
    elif op.op == "handle_outliers":
        action = op.params.get("action", "clip")
        for params in (
            {"method": "iqr", "action": action, "multiplier": 1.5},
            {"method": "quantile", "action": action, "lo": 0.05, "hi": 0.95},
        ):
            if params != dict(op.params):
                alts.append(OpDescriptor("handle_outliers", op.columns, params))
    elif op.op == "transform_features":
        for transform in ("standard", "minmax"):
            candidate = OpDescriptor(
                "transform_features", op.columns, {"transform": transform}
            )
            if candidate.params != dict(op.params):
                alts.append(candidate)
    return alts


def derive_judgment_calls(plan: Plan) -> list[JudgmentCall]:
    """One decision point per plan step; alternative 0 is the original op."""
    calls = []
    for step in plan.steps:
        calls.append(
            JudgmentCall(
                decision_point=f"step_{step.index}_{step.op.op}",
                alternatives=tuple(_derived_alternatives(step.op)),
            )
        )
    return calls


def merge_suggested_calls(
    derived: list[JudgmentCall], suggested: Sequence[JudgmentCall]
) -> tuple[list[JudgmentCall], list[JudgmentCall]]:
    """Fold reviewer-suggested alternatives into matching decision points.

    A suggestion matches a derived call when its alternatives name the same
    op and columns as the call's reference alternative. Non-matching
    suggestions are returned separately (reported, not perturbed).
    """
    merged = list(derived)
    unmatched = []
    for suggestion in suggested:
        hit = None
        for i, call in enumerate(merged):
            ref = call.alternatives[0]
            if any(
                alt.op == ref.op and tuple(alt.columns) == tuple(ref.columns)
                for alt in suggestion.alternatives
            ):
                hit = i
                break
        if hit is None:
            unmatched.append(suggestion)
            continue
        call = merged[hit]
        existing = {(a.op, a.columns, tuple(sorted(a.params.items()))) for a in call.alternatives}
        extra = [
            a
            for a in suggestion.alternatives
            if (a.op, a.columns, tuple(sorted(a.params.items()))) not in existing
        ]
        if extra:
            merged[hit] = JudgmentCall(
                call.decision_point, call.alternatives + tuple(extra)
            )
    return merged, unmatched


@dataclass
class ExploreOutcome:
    clean: Dataset
    plan: Plan
    trace: ExecutionTrace
    checks: list[CheckResult]
    eda: EdaReport
    judgment_calls: list[JudgmentCall]
    specs: list[PerturbationSpec]
    perturbed: list[Dataset]
    recipes: dict[str, tuple[FittedStep, ...]]
    validation: dict[str, list[CheckResult]]
    materialize_errors: dict[str, str]
    review: PcsReview
    unmatched_suggestions: list[JudgmentCall]


def explore_stage(
    raw: Dataset, state: SystemState, backend: PlannerBackend, cfg: RunConfig
) -> ExploreOutcome:
    """Clean under check gating with bounded re-planning, then EDA and perturbation."""
    check_cfg = cfg.check_config()
    response = _ask(
        state,
        backend,
        "cleaning_plan",
        StageId.CLEAN,
        _context_description(raw),
        _summaries_json(raw),
    )

    # an unparseable initial plan consumes repair budget like any failure
    budget = cfg.n_max
    plan0: Optional[Plan] = None
    retry_system, _ = render_prompt(
        TEMPLATES["cleaning_plan"],
        {
            "problem_description": state.problem_description,
            "context_description": _context_description(raw),
            "result": "",
        },
    )
    while plan0 is None:
        try:
            plan0 = parse_plan(response)
        except (PlanSyntaxError, PlanSchemaError) as exc:
            if budget == 0:
                raise CleaningExhausted(f"initial plan unusable: {exc}") from exc
            budget -= 1
            context = repair_error_context(
                Plan("1", "cleaning", ()), None, f"plan did not parse: {exc}", raw
            )
            state.add_memory(StageId.CLEAN, ROLE_EXPLORE, "note", f"plan parse failure: {exc}")
            response = backend.respond(
                [
                    {"role": "system", "content": retry_system},
                    {"role": "user", "content": json.dumps(context)},
                ],
                "plan",
                agent=ROLE_EXPLORE,
                stage=int(StageId.CLEAN),
            )
            state.add_memory(StageId.CLEAN, ROLE_EXPLORE, "response", response)

    def gate(candidate: Dataset) -> Optional[str]:
        results = run_suite(candidate, raw, check_cfg)
        failed = datacheck.failures(results)
        if failed:
            return "; ".join(f"{r.name}: {r.message}" for r in failed)
        return None

    result = repair_loop(
        plan0, raw, backend, n_max=budget, gate=gate, stage=STAGE_CLEAN
    )
    state.add_memory(
        StageId.CLEAN,
        ROLE_EXPLORE,
        "note",
        f"cleaning finished after {len(result.trace.attempts)} attempt(s), "
        f"{len(result.trace.repairs)} repair(s)",
    )
    if not result.ok:
        raise CleaningExhausted(
            f"cleaning failed after {len(result.trace.attempts)} attempts: {result.error}"
        )
    clean = result.dataset
    checks = run_suite(clean, raw, check_cfg)

    eda = _build_eda(clean, state, backend)

    cleaning_summary = {
        "plan": result.plan.to_json(),
        "checks": [c.to_json() for c in checks],
        "rows_before": raw.n_rows,
        "rows_after": clean.n_rows,
    }
    review = pcs_review(cleaning_summary, state, backend, StageId.CLEAN)

    derived = derive_judgment_calls(result.plan)
    calls, unmatched = merge_suggested_calls(derived, review.suggested_calls)
    for suggestion in unmatched:
        state.add_memory(
            StageId.CLEAN,
            ROLE_PCS,
            "note",
            f"suggested judgment call {suggestion.decision_point!r} matches no plan step; recorded only",
        )

    specs: list[PerturbationSpec] = []
    perturbed: list[Dataset] = []
    recipes: dict[str, tuple[FittedStep, ...]] = {}
    materialize_errors: dict[str, str] = {}
    if calls:
        specs = enumerate_specs(calls, cfg.k, state.seed)
        specs = ensure_reference_spec(specs, calls)
        for spec in specs:
            try:
                ds, fitted = materialize_with_recipe(raw, spec, calls)
            except PcsflowError as exc:
                materialize_errors[spec.id] = str(exc)
                continue
            perturbed.append(ds)
            recipes[ds.id] = fitted
    else:
        # degenerate grid: the cleaned dataset is the single (reference) member
        reference = clean.renamed("p_000", dataset_id="p_000")
        specs = [PerturbationSpec("p_000", (), stable_seed(state.seed, "p_000"))]
        perturbed = [reference]
        recipes[reference.id] = result.trace.fitted_steps

    validation = validate_all(perturbed, raw, check_cfg)

    outcome = ExploreOutcome(
        clean=clean,
        plan=result.plan,
        trace=result.trace,
        checks=checks,
        eda=eda,
        judgment_calls=calls,
        specs=specs,
        perturbed=perturbed,
        recipes=recipes,
        validation=validation,
        materialize_errors=materialize_errors,
        review=review,
        unmatched_suggestions=unmatched,
    )
    state.stage_outputs["clean"] = cleaning_summary
    return outcome


# --- stage 3: model ---------------------------------------------------------------------


def _parse_model_specs(doc, task: str) -> tuple[list[ModelSpec], list[tuple[str, str]]]:
    """Returns (valid specs, [(spec id, error)] for incompatible entries)."""
    if isinstance(doc, dict) and doc.get("use_default_zoo"):
        return default_zoo(task), []
    if not isinstance(doc, list):
        return default_zoo(task), []
    specs: list[ModelSpec] = []
    bad: list[tuple[str, str]] = []
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict) or "family" not in entry:
            bad.append((f"spec_{i}", "not a model spec object"))
            continue
        try:
            specs.append(
                ModelSpec(
                    family=entry["family"],
                    task=entry.get("task", task),
                    params=dict(entry.get("params", {})),
                    id=entry.get("id", ""),
                )
            )
        except ValueError as exc:
            bad.append((entry.get("id") or entry["family"], str(exc)))
    if not specs and not bad:
        return default_zoo(task), []
    return specs, bad


@dataclass
class ModelOutcome:
    model_specs: list[ModelSpec]
    fits: list[PredictiveFit]
    stability: StabilityReport
    selected: PredictiveFit
    review: PcsReview


def model_stage(
    clean: Dataset,
    perturbed: Sequence[Dataset],
    state: SystemState,
    backend: PlannerBackend,
    cfg: RunConfig,
) -> ModelOutcome:
    """Propose model specs, run the fit grid over valid perturbed datasets,
    aggregate stability, and select the fit carried to evaluation."""
    task = state.task_type or REGRESSION
    context = {
        "task": task,
        "target": state.target,
        "n_datasets": len(perturbed),
        "columns": [
            {"name": c.name, "dtype": c.dtype, "role": c.role} for c in clean.columns
        ],
    }
    response = _ask(
        state,
        backend,
        "model_specs",
        StageId.MODEL,
        _context_description(clean),
        json.dumps(context, indent=2),
    )
    specs, bad = _parse_model_specs(_parse_json_or_none(response), task)

    fits = train_grid(
        list(perturbed),
        specs,
        state.target,
        seed=state.seed,
        jobs=cfg.jobs,
    )
    for spec_id, error in bad:
        for ds in perturbed:
            fits.append(
                PredictiveFit(ds.id, spec_id, None, None, error=f"incompatible spec: {error}")
            )
    fits.sort(key=lambda f: (f.dataset_id, f.model_id))

    try:
        stability = stability_report(fits)
    except EmptyFits as exc:
        raise NoSuccessfulFits(str(exc)) from exc
    selected = select_top(fits, 1)[0]

    summary = {
        "n_fits": len(fits),
        "n_failed": sum(1 for f in fits if not f.ok),
        "stability": stability.to_json(),
        "selected": selected.to_json(),
    }
    review = pcs_review(summary, state, backend, StageId.MODEL)
    state.stage_outputs["model"] = summary
    return ModelOutcome(specs, fits, stability, selected, review)


# --- stage 4: evaluate ------------------------------------------------------------------


@dataclass
class EvaluateOutcome:
    model: TrainedModel
    predictions: Predictions
    scores: Optional[dict]


def evaluate_stage(
    selected: PredictiveFit,
    winning_dataset: Dataset,
    recipe: Sequence[FittedStep],
    model_spec: ModelSpec,
    test_raw: Dataset,
    state: SystemState,
) -> EvaluateOutcome:
    """Replay the winning cleaning recipe on test rows (training statistics
    frozen), retrain the selected spec on the full winning dataset, predict."""
    try:
        test_clean = replay_fitted(recipe, test_raw, for_test=True)
    except PcsflowError as exc:
        raise SchemaMismatchAfterReplay(f"replay on test data failed: {exc}") from exc

    final_seed = stable_seed(state.seed, "final", selected.dataset_id, selected.model_id)
    model = train(winning_dataset, state.target, model_spec, final_seed)
    try:
        predictions = predict(model, test_clean)
    except PcsflowError as exc:
        raise SchemaMismatchAfterReplay(str(exc)) from exc

    scores_json: Optional[dict] = None
    if state.target in test_clean.column_names:
        target_missing = test_clean.column(state.target).missing_count
        if target_missing == 0 and test_clean.n_rows > 0:
            from .models import extract_targets, score_predictions

            y_true = extract_targets(test_clean, state.target, model_spec.task)
            scores = score_predictions(y_true, predictions, model_spec.task)
            scores_json = {"scores": scores.to_json(), "nps": compute_nps(scores)}

    state.stage_outputs["evaluate"] = {
        "n_predictions": len(predictions.values),
        "scored": scores_json is not None,
    }
    return EvaluateOutcome(model, predictions, scores_json)


# --- review agent ------------------------------------------------------------------------


def _parse_pcs_review(text: str) -> Optional[PcsReview]:
    doc = _parse_json_or_none(text)
    if isinstance(doc, list) and doc and isinstance(doc[0], dict):
        doc = doc[0]
    if not isinstance(doc, dict):
        return None
    lowered = {str(k).lower(): v for k, v in doc.items()}
    verdict = str(lowered.get("verdict", "accept")).lower()
    if verdict not in ("accept", "revise"):
        return None
    try:
        calls = tuple(
            JudgmentCall.from_json(c) for c in lowered.get("judgment_calls", [])
        )
    except (KeyError, TypeError, ValueError):
        return None
    predictability = lowered.get("predictability", "")
    stability = lowered.get("stability", "")
    if not isinstance(predictability, str) or not isinstance(stability, str):
        return None
    if verdict == "revise" and not (calls or predictability or stability):
        return None
    return PcsReview(predictability, stability, verdict, calls)


def pcs_review(
    stage_output: Mapping,
    state: SystemState,
    backend: PlannerBackend,
    stage: StageId,
) -> PcsReview:
    """Advisory review; one retry on unparseable responses, never blocks."""
    conclusion = json.dumps(stage_output, indent=2, default=str)
    upstream = json.dumps(state.stage_outputs, indent=2, default=str)
    last_response = ""
    for _ in range(2):
        try:
            last_response = _ask(
                state,
                backend,
                "pcs_review",
                stage,
                "stage output under review",
                result=upstream,
                conclusion=conclusion,
            )
        except BackendFailure as exc:
            last_response = f"backend failure: {exc}"
            continue
        review = _parse_pcs_review(last_response)
        if review is not None:
            return review
    # recorded verbatim, never blocking
    return PcsReview(
        predictability=f"unparseable review: {last_response[:500]}",
        stability="",
        verdict="accept",
    )


# --- full workflow -----------------------------------------------------------------------


def run_workflow(
    raw_path,
    test_path,
    cfg: RunConfig,
    backend: PlannerBackend,
) -> tuple[RunReport, Optional[Predictions], dict]:
    """Execute stages 1-4 in order; returns (report, predictions, artifacts).

    Artifacts carry in-memory objects (datasets, model, traces) for the CLI
    to write into the run directory. Any unrecoverable stage error raises
    StageFailed carrying the partial report; such a run counts as an invalid
    submission.
    """
    created = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    state = SystemState(
        problem_description=(
            f"predict {cfg.target!r} from {raw_path}" if cfg.target else f"analyze {raw_path}"
        ),
        seed=cfg.seed,
        config=cfg.to_json(),
    )
    report = RunReport(config=cfg.to_json(), seed=cfg.seed, created_at=created)
    artifacts: dict[str, Any] = {}

    def fail(stage: StageId, exc: Exception):
        report.failure = {"stage": STAGE_NAMES[stage], "error": str(exc)}
        report.memory = state.memory_json()
        raise StageFailed(STAGE_NAMES[stage], exc, report=report)

    # stage 1: define
    try:
        raw_full = read_csv(raw_path)
    except PcsflowError as exc:
        report.checks = [datacheck.file_readable_failure(raw_path, exc).to_json()]
        fail(StageId.DEFINE, exc)
    try:
        if test_path is not None:
            work = raw_full
            test_raw = read_csv(test_path)
        else:
            work, test_raw = split_train_test(
                raw_full, HOLDOUT_FRACTION, stable_seed(cfg.seed, "holdout")
            )
        problem, annotated = define_stage(work, state, backend, cfg)
    except PcsflowError as exc:
        fail(StageId.DEFINE, exc)
    report.problem = problem
    report.pcs_reviews["define"] = problem.pop("pcs_review")
    report.stages_completed.append("define")

    # carry roles onto test rows for the columns both sides share
    roles = {c.name: c.role for c in annotated.columns if c.name in test_raw.column_names}
    test_annotated = test_raw.with_roles(roles)

    # stage 2: clean / EDA / perturb
    try:
        explored = explore_stage(annotated, state, backend, cfg)
    except PcsflowError as exc:
        fail(StageId.CLEAN, exc)
    report.cleaning = {
        "plan": explored.plan.to_json(),
        "trace": explored.trace.to_json(),
        "attempts": len(explored.trace.attempts),
        "repairs": len(explored.trace.repairs),
    }
    report.checks = [c.to_json() for c in explored.checks]
    report.eda = explored.eda.to_json()
    excluded = sorted(
        [
            ds.name
            for ds in explored.perturbed
            if not suite_passed(explored.validation[ds.name])
        ]
        + list(explored.materialize_errors)
    )
    report.perturbation = {
        "judgment_calls": [c.to_json() for c in explored.judgment_calls],
        "specs": [s.to_json() for s in explored.specs],
        "validation": {
            name: [c.to_json() for c in results]
            for name, results in sorted(explored.validation.items())
        },
        "materialize_errors": explored.materialize_errors,
        "excluded": excluded,
        "unmatched_suggestions": [c.to_json() for c in explored.unmatched_suggestions],
    }
    report.pcs_reviews["clean"] = explored.review.to_json()
    report.stages_completed.append("clean")

    valid = [
        ds for ds in explored.perturbed if suite_passed(explored.validation[ds.name])
    ]

    # stage 3: model
    try:
        if not valid:
            raise NoSuccessfulFits("no perturbed dataset passed validation")
        modeled = model_stage(explored.clean, valid, state, backend, cfg)
    except PcsflowError as exc:
        fail(StageId.MODEL, exc)
    report.fits = [f.to_json() for f in modeled.fits]
    report.stability = modeled.stability.to_json()
    report.selected_fit = modeled.selected.to_json()
    report.pcs_reviews["model"] = modeled.review.to_json()
    report.stages_completed.append("model")

    # stage 4: evaluate on held-out data
    try:
        by_id = {ds.id: ds for ds in valid}
        by_spec = {s.id: s for s in modeled.model_specs}
        if modeled.selected.dataset_id not in by_id or modeled.selected.model_id not in by_spec:
            raise SchemaMismatchAfterReplay(
                f"selected fit ({modeled.selected.dataset_id}, "
                f"{modeled.selected.model_id}) is not resolvable"
            )
        winning = by_id[modeled.selected.dataset_id]
        spec = by_spec[modeled.selected.model_id]
        recipe = explored.recipes[winning.id]
        evaluated = evaluate_stage(
            modeled.selected, winning, recipe, spec, test_annotated, state
        )
    except PcsflowError as exc:
        fail(StageId.EVALUATE, exc)
    report.final = {
        "model": modeled.selected.model_id,
        "dataset": modeled.selected.dataset_id,
        "n_predictions": len(evaluated.predictions.values),
        **(evaluated.scores or {"scores": None, "nps": None}),
    }
    report.stages_completed.append("evaluate")
    report.memory = state.memory_json()

    artifacts.update(
        {
            "clean": explored.clean,
            "perturbed": explored.perturbed,
            "plan": explored.plan,
            "trace": explored.trace,
            "model": evaluated.model,
            "recipe": recipe,
            "predictions": evaluated.predictions,
            "test_dataset": test_annotated,
        }
    )
    return report, evaluated.predictions, artifacts
