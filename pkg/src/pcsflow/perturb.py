"""Perturbation engine: enumerate alternative cleaning stacks, materialize
perturbed datasets, validate them, and aggregate result stability.

A judgment call is one cleaning decision with several defensible
alternatives; the cartesian grid over all calls is the perturbation space.
Perturbed datasets are produced by applying a chosen alternative per call to
the raw data, so alternative imputations and outlier treatments act on the
values they were designed for.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from itertools import product
from typing import Mapping, Optional, Sequence

from .datacheck import CheckConfig, CheckResult, run_suite, suite_passed
from .errors import EmptyFits, MaterializeFailed, NoAlternatives, PcsflowError
from .mltools import OpDescriptor
from .models import PredictiveFit
from .plan import execute_plan, plan_from_ops
from .tabular import Dataset
from .util import stable_seed


@dataclass(frozen=True)
class JudgmentCall:
    """One decision point with alternative operations targeting the same columns."""

    decision_point: str
    alternatives: tuple[OpDescriptor, ...]

    def __post_init__(self):
        if not self.alternatives:
            raise ValueError(f"judgment call {self.decision_point!r} has no alternatives")
        column_sets = {tuple(alt.columns) for alt in self.alternatives}
        if len(column_sets) > 1:
            raise ValueError(
                f"judgment call {self.decision_point!r}: alternatives target different columns"
            )

    def to_json(self) -> dict:
        return {
            "decision_point": self.decision_point,
            "alternatives": [a.to_json() for a in self.alternatives],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "JudgmentCall":
        return cls(
            decision_point=doc["decision_point"],
            alternatives=tuple(
                OpDescriptor.from_json(a) for a in doc["alternatives"]
            ),
        )


@dataclass(frozen=True)
class PerturbationSpec:
    """One grid cell: a chosen alternative index per decision point."""

    id: str
    choices: tuple[int, ...]
    seed: int

    def to_json(self) -> dict:
        return {"id": self.id, "choices": list(self.choices), "seed": self.seed}


def grid_size(calls: Sequence[JudgmentCall]) -> int:
    size = 1
    for call in calls:
        size *= len(call.alternatives)
    return size


def _cell_at(index: int, sizes: Sequence[int]) -> tuple[int, ...]:
    """Grid cell at a linear index, in itertools.product order."""
    cell = []
    for size in reversed(sizes):
        cell.append(index % size)
        index //= size
    return tuple(reversed(cell))


def enumerate_specs(
    calls: Sequence[JudgmentCall], k: int, seed: int
) -> list[PerturbationSpec]:
    """All grid cells when the grid fits in k, else k distinct sampled cells.

    Deterministic: full grids enumerate in product order; sampling uses the
    given seed and returns cells in ascending grid order. Spec seeds derive
    from (seed, spec id) so downstream randomness is splittable.
    """
    if not calls:
        raise NoAlternatives("no judgment calls to perturb")
    if k < 1:
        raise ValueError("k must be >= 1")
    sizes = [len(call.alternatives) for call in calls]
    total = grid_size(calls)
    if total <= k:
        cells = list(product(*(range(s) for s in sizes)))
    else:
        rng = random.Random(seed)
        picked = sorted(rng.sample(range(total), k))
        cells = [_cell_at(i, sizes) for i in picked]
    width = max(3, len(str(len(cells) - 1)))
    specs = []
    for i, cell in enumerate(cells):
        spec_id = f"p_{i:0{width}d}"
        specs.append(
            PerturbationSpec(spec_id, tuple(cell), stable_seed(seed, spec_id))
        )
    return specs


def reference_spec_present(specs: Sequence[PerturbationSpec]) -> bool:
    return any(all(c == 0 for c in spec.choices) for spec in specs)


def ensure_reference_spec(
    specs: list[PerturbationSpec], calls: Sequence[JudgmentCall]
) -> list[PerturbationSpec]:
    """Force the all-reference cell into a sampled grid, replacing the last cell."""
    if reference_spec_present(specs) or not specs:
        return specs
    last = specs[-1]
    return specs[:-1] + [
        PerturbationSpec(last.id, tuple(0 for _ in calls), last.seed)
    ]


def materialize_with_recipe(
    raw: Dataset, spec: PerturbationSpec, calls: Sequence[JudgmentCall]
):
    """Apply the chosen alternative per decision point, in declared order.

    Returns (dataset, fitted steps); the fitted steps freeze the training
    statistics so the same stack can be replayed on held-out data.
    """
    if len(spec.choices) != len(calls):
        raise MaterializeFailed(
            spec.id, ValueError("spec choices do not match judgment calls")
        )
    ops = []
    for choice, call in zip(spec.choices, calls):
        if not 0 <= choice < len(call.alternatives):
            raise MaterializeFailed(
                spec.id,
                ValueError(f"choice {choice} out of range for {call.decision_point!r}"),
            )
        ops.append(call.alternatives[choice])
    plan = plan_from_ops(ops, task_label=f"perturbation {spec.id}")
    try:
        out, trace = execute_plan(plan, raw)
    except PcsflowError as exc:
        raise MaterializeFailed(spec.id, exc) from exc
    return out.renamed(spec.id, dataset_id=spec.id), trace.fitted_steps


def materialize(
    raw: Dataset, spec: PerturbationSpec, calls: Sequence[JudgmentCall]
) -> Dataset:
    return materialize_with_recipe(raw, spec, calls)[0]


def validate_all(
    perturbed: Sequence[Dataset],
    raw: Dataset,
    cfg: Optional[CheckConfig] = None,
) -> dict[str, list[CheckResult]]:
    """Run the check suite per perturbed dataset, keyed by its name (spec id)."""
    return {ds.name: run_suite(ds, raw, cfg) for ds in perturbed}


def passing_datasets(
    perturbed: Sequence[Dataset], validation: Mapping[str, list[CheckResult]]
) -> list[Dataset]:
    return [ds for ds in perturbed if suite_passed(validation[ds.name])]


# --- stability aggregation ----------------------------------------------------------


@dataclass(frozen=True)
class ModelStability:
    model_id: str
    n_fits: int
    min: float
    max: float
    mean: float
    sd: float

    @property
    def spread(self) -> float:
        return self.max - self.min

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "n_fits": self.n_fits,
            "min": self.min,
            "max": self.max,
            "mean": self.mean,
            "sd": self.sd,
            "spread": self.spread,
        }


@dataclass(frozen=True)
class StabilityReport:
    per_model: tuple[ModelStability, ...]
    best_model_id: str
    best_fit: PredictiveFit

    def to_json(self) -> dict:
        return {
            "per_model": [m.to_json() for m in self.per_model],
            "best_model_id": self.best_model_id,
            "best_fit": self.best_fit.to_json(),
        }


def stability_report(fits: Sequence[PredictiveFit]) -> StabilityReport:
    """Aggregate NPS per model across perturbed datasets.

    Best model: highest mean NPS, ties by lower SD then lexicographic id;
    its best fit is the highest-NPS cell (ties by dataset id).
    """
    successful = [f for f in fits if f.ok]
    if not successful:
        raise EmptyFits("no successful fits to aggregate")
    by_model: dict[str, list[PredictiveFit]] = {}
    for f in successful:
        by_model.setdefault(f.model_id, []).append(f)

    per_model = []
    for model_id in sorted(by_model):
        values = [f.nps for f in by_model[model_id]]
        mean = sum(values) / len(values)
        sd = math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))
        per_model.append(
            ModelStability(model_id, len(values), min(values), max(values), mean, sd)
        )

    best = min(per_model, key=lambda m: (-m.mean, m.sd, m.model_id))
    best_fit = min(
        by_model[best.model_id], key=lambda f: (-f.nps, f.dataset_id)
    )
    return StabilityReport(tuple(per_model), best.model_id, best_fit)
