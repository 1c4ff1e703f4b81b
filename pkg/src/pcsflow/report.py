"""Run-report rendering: JSON to Markdown plus figures, and the run
directory layout.

The Markdown and figure outputs are pure functions of report.json, so
re-rendering is idempotent and byte-stable apart from image encoding.
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from .errors import IoFailure
from .tabular import Dataset, write_csv

# keys whose values vary run to run without changing results
VOLATILE_KEYS = {"created_at", "elapsed_s"}


def normalized_report(doc: Any) -> Any:
    """Copy of a report dict with volatile (timing) values pinned.

    Lets two runs of the same seeded configuration be compared exactly.
    """
    if isinstance(doc, dict):
        return {
            k: ("<normalized>" if k in VOLATILE_KEYS else normalized_report(v))
            for k, v in doc.items()
        }
    if isinstance(doc, list):
        return [normalized_report(v) for v in doc]
    return doc


def _fmt(value, digits: int = 4) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def _check_table(checks: Sequence[Mapping]) -> list[str]:
    lines = ["| check | passed | message |", "|---|---|---|"]
    for c in checks:
        status = "pass" if c["passed"] else "FAIL"
        lines.append(f"| {c['name']} | {status} | {c['message']} |")
    return lines


def render_markdown(doc: Mapping) -> str:
    """Deterministic human-readable rendering of a report dict."""
    lines: list[str] = ["# Run report", ""]
    lines.append(f"- created: {doc.get('created_at', '-')}")
    lines.append(f"- seed: {doc.get('seed', '-')}")
    stages = doc.get("stages_completed") or []
    lines.append(f"- stages completed: {', '.join(stages) if stages else 'none'}")
    failure = doc.get("failure")
    if failure:
        lines.append(f"- **failed at stage {failure['stage']}**: {failure['error']}")
    lines.append("")

    problem = doc.get("problem")
    if problem:
        lines += ["## Problem definition", ""]
        lines.append(f"- target: `{problem.get('target')}`")
        lines.append(f"- task: {problem.get('task')}")
        if problem.get("identifiers"):
            lines.append(f"- identifiers: {', '.join(problem['identifiers'])}")
        lines.append(f"- observation unit: {problem.get('observation_unit')}")
        lines.append("")

    cleaning = doc.get("cleaning")
    if cleaning:
        lines += ["## Cleaning", ""]
        steps = cleaning.get("plan", {}).get("steps", [])
        lines.append(
            f"- plan: {len(steps)} step(s), "
            f"{cleaning.get('attempts', 1)} attempt(s), "
            f"{cleaning.get('repairs', 0)} repair(s)"
        )
        for i, s in enumerate(steps):
            cols = ", ".join(s.get("columns", []))
            lines.append(f"  {i}. `{s['op']}` on [{cols}] params={json.dumps(s.get('params', {}))}")
        lines.append("")
    checks = doc.get("checks")
    if checks:
        lines += ["## Dataset checks", ""]
        lines += _check_table(checks)
        lines.append("")

    eda = doc.get("eda")
    if eda:
        lines += ["## Exploratory analysis", ""]
        for qa in eda.get("answers", []):
            lines.append(f"- **{qa['question']}** {qa['answer']}")
        lines.append("")

    perturbation = doc.get("perturbation")
    if perturbation:
        lines += ["## Perturbation audit", ""]
        calls = perturbation.get("judgment_calls", [])
        lines.append(f"- judgment calls: {len(calls)}")
        for call in calls:
            lines.append(
                f"  - {call['decision_point']}: {len(call['alternatives'])} alternative(s)"
            )
        n_specs = len(perturbation.get("specs", []))
        excluded = perturbation.get("excluded", [])
        lines.append(f"- perturbed datasets: {n_specs}, excluded: {len(excluded)}")
        if excluded:
            lines.append(f"  - excluded: {', '.join(excluded)}")
        lines.append("")

    fits = doc.get("fits")
    if fits:
        lines += ["## Fit grid", ""]
        lines.append("| dataset | model | NPS | error |")
        lines.append("|---|---|---|---|")
        for f in fits:
            lines.append(
                f"| {f['dataset_id']} | {f['model_id']} | {_fmt(f['nps'])} | {f.get('error') or '-'} |"
            )
        lines.append("")

    stability = doc.get("stability")
    if stability:
        lines += ["## Stability", ""]
        lines.append("| model | fits | min | mean | max | SD | spread |")
        lines.append("|---|---|---|---|---|---|---|")
        for m in stability.get("per_model", []):
            lines.append(
                f"| {m['model_id']} | {m['n_fits']} | {_fmt(m['min'])} | {_fmt(m['mean'])} "
                f"| {_fmt(m['max'])} | {_fmt(m['sd'])} | {_fmt(m['spread'])} |"
            )
        lines.append("")
        lines.append(f"- most stable high performer: `{stability.get('best_model_id')}`")
        lines.append("")

    final = doc.get("final")
    if final:
        lines += ["## Final evaluation", ""]
        lines.append(f"- model: `{final.get('model')}` on dataset `{final.get('dataset')}`")
        lines.append(f"- predictions: {final.get('n_predictions')}")
        scores = final.get("scores")
        if scores:
            parts = ", ".join(
                f"{k}={_fmt(v)}" for k, v in scores.items() if k != "task"
            )
            lines.append(f"- held-out scores: {parts}")
            lines.append(f"- held-out NPS: {_fmt(final.get('nps'))}")
        else:
            lines.append("- held-out labels absent; predictions only")
        lines.append("")

    figures = doc.get("_figures") or []
    if figures:
        lines += ["## Figures", ""]
        for fig in figures:
            lines.append(f"![{Path(fig).stem}]({fig})")
        lines.append("")
    return "\n".join(lines) + "\n"


# --- figures ---------------------------------------------------------------------------


def render_figures(doc: Mapping, fig_dir: Path) -> list[str]:
    """Render stability and fit-grid figures; returns run-dir-relative paths."""
    stability = doc.get("stability")
    fits = [f for f in (doc.get("fits") or []) if f.get("nps") is not None]
    if not stability and not fits:
        return []

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_dir.mkdir(parents=True, exist_ok=True)
    written: list[str] = []

    if stability and stability.get("per_model"):
        rows = stability["per_model"]
        names = [m["model_id"] for m in rows]
        means = [m["mean"] for m in rows]
        sds = [m["sd"] for m in rows]
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.bar(range(len(names)), means, yerr=sds, capsize=4, color="#4878d0")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
        ax.set_ylabel("NPS (mean ± SD)")
        ax.set_title("Per-model stability across perturbed datasets")
        fig.tight_layout()
        path = fig_dir / "stability_nps.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(f"figures/{path.name}")

    if fits:
        datasets = sorted({f["dataset_id"] for f in fits})
        models = sorted({f["model_id"] for f in fits})
        fig, ax = plt.subplots(figsize=(7, 3.5))
        for model in models:
            ys = []
            for ds in datasets:
                match = [
                    f["nps"]
                    for f in fits
                    if f["dataset_id"] == ds and f["model_id"] == model
                ]
                ys.append(match[0] if match else None)
            xs = [i for i, y in enumerate(ys) if y is not None]
            ax.plot(xs, [ys[i] for i in xs], marker="o", label=model)
        ax.set_xticks(range(len(datasets)))
        ax.set_xticklabels(datasets, rotation=30, ha="right", fontsize=8)
        ax.set_ylabel("NPS")
        ax.set_title("Fit grid: NPS per perturbed dataset")
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = fig_dir / "fit_grid.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(f"figures/{path.name}")
    return written


# --- run directory -----------------------------------------------------------------------


def make_run_dir(parent: Path) -> Path:
    parent = Path(parent)
    parent.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d_%H%M%S", time.gmtime())
    candidate = parent / f"run_{stamp}"
    suffix = 0
    while candidate.exists():
        suffix += 1
        candidate = parent / f"run_{stamp}_{suffix}"
    candidate.mkdir()
    return candidate


def write_predictions_csv(path: Path, predictions, test_ds: Optional[Dataset], target: str) -> None:
    """Delimited predictions: identifier column when one exists, then target."""
    id_col = None
    id_values: Sequence = ()
    if test_ds is not None:
        for spec in test_ds.columns:
            if spec.role == "identifier":
                id_col = spec.name
                id_values = test_ds.values(spec.name)
                break
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ([id_col] if id_col else []) + [target]
        writer.writerow(header)
        for i, value in enumerate(predictions.values):
            rendered = repr(float(value)) if isinstance(value, float) else str(value)
            row = []
            if id_col:
                iv = id_values[i]
                row.append("" if iv is None else (repr(float(iv)) if isinstance(iv, float) else str(iv)))
            row.append(rendered)
            writer.writerow(row)


def write_run_dir(
    run_dir: Path,
    report,
    predictions=None,
    artifacts: Optional[Mapping] = None,
) -> None:
    """Materialize the run directory: datasets/, plans/, traces/, model/,
    figures/, report.{json,md} and predictions.csv."""
    run_dir = Path(run_dir)
    artifacts = artifacts or {}
    doc = report.to_json()

    try:
        for sub in ("datasets", "plans", "traces", "model"):
            (run_dir / sub).mkdir(parents=True, exist_ok=True)

        for ds in artifacts.get("perturbed", []):
            write_csv(ds, run_dir / "datasets" / f"{ds.name}.csv")
        if artifacts.get("clean") is not None:
            write_csv(artifacts["clean"], run_dir / "datasets" / "clean.csv")

        if artifacts.get("plan") is not None:
            (run_dir / "plans" / "cleaning_plan.json").write_text(
                artifacts["plan"].dumps(), encoding="utf-8"
            )
        if artifacts.get("trace") is not None:
            (run_dir / "traces" / "cleaning_trace.json").write_text(
                json.dumps(artifacts["trace"].to_json(), indent=2), encoding="utf-8"
            )
        if artifacts.get("model") is not None:
            (run_dir / "model" / "best_model.json").write_text(
                json.dumps(artifacts["model"].to_json(), indent=2), encoding="utf-8"
            )
        if artifacts.get("recipe"):
            (run_dir / "model" / "replay_recipe.json").write_text(
                json.dumps([s.to_json() for s in artifacts["recipe"]], indent=2),
                encoding="utf-8",
            )

        if predictions is not None:
            target = doc.get("problem", {}).get("target") or "prediction"
            write_predictions_csv(
                run_dir / "predictions.csv",
                predictions,
                artifacts.get("test_dataset"),
                target,
            )

        figures = render_figures(doc, run_dir / "figures")
        doc["_figures"] = figures

        (run_dir / "report.json").write_text(
            json.dumps(doc, indent=2), encoding="utf-8"
        )
        (run_dir / "report.md").write_text(render_markdown(doc), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write run directory {run_dir}: {exc}") from exc
