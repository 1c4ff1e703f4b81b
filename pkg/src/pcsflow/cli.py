"""Command-line surface: end-to-end runs, standalone perturbation audits,
metric computation, and report re-rendering.

Exit codes: 0 complete, 1 usage/config errors, 2 workflow stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backends import backend_remote, backend_scripted
from .config import RunConfig
from .datacheck import CheckConfig, suite_passed
from .errors import ConfigError, PcsflowError, StageFailed
from .metrics import SubmissionTally, anps, cs, vs
from .perturb import (
    JudgmentCall,
    ensure_reference_spec,
    enumerate_specs,
    materialize,
    validate_all,
)
from .report import make_run_dir, render_figures, render_markdown, write_run_dir
from .tabular import read_csv, write_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STAGE_FAILED = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract reserves 2 for stage failures
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="pcsflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full staged workflow")
    run.add_argument("--data", help="training CSV path")
    run.add_argument("--test", help="held-out test CSV path (optional)")
    run.add_argument("--target", help="target column name")
    run.add_argument("--task", choices=["classification", "regression", "auto"])
    run.add_argument("--k", type=int, help="number of perturbed datasets")
    run.add_argument("--n-max", type=int, dest="n_max", help="self-repair budget")
    run.add_argument("--seed", type=int)
    run.add_argument("--backend", help="scripted[:scenario.json] or remote")
    run.add_argument("--endpoint", help="chat-completions endpoint URL")
    run.add_argument("--model", help="remote model name")
    run.add_argument("--api-key-env", dest="api_key_env", help="env var holding the API key")
    run.add_argument("--out-dir", dest="out_dir", help="parent directory for run output")
    run.add_argument("--config", help="JSON config file (flags win)")
    run.add_argument("--jobs", type=int, help="worker concurrency")
    run.add_argument(
        "--retention-threshold", type=float, dest="retention_threshold"
    )

    audit = sub.add_parser("audit", help="perturbation audit without modeling")
    audit.add_argument("--data", required=True, help="cleaned CSV path")
    audit.add_argument("--calls", required=True, help="judgment-call JSON file")
    audit.add_argument("--k", type=int, default=50)
    audit.add_argument("--seed", type=int, default=0)
    audit.add_argument("--out-dir", dest="out_dir", default="audit_out")
    audit.add_argument(
        "--retention-threshold", type=float, dest="retention_threshold", default=0.85
    )

    met = sub.add_parser("metrics", help="compute VS/ANPS/CS from a metrics file")
    met.add_argument("--input", required=True, help="JSON: {nps: [...], tally: {successes, attempts}}")
    met.add_argument(
        "--check-against",
        type=float,
        dest="check_against",
        help="exit nonzero when |CS - value| > 0.001",
    )

    rep = sub.add_parser("report", help="re-render report.md from report.json")
    rep.add_argument("--run-dir", dest="run_dir", required=True)
    return parser


def _resolve_config(args) -> RunConfig:
    flag_fields = (
        "data", "test", "target", "task", "k", "n_max", "seed", "backend",
        "endpoint", "model", "api_key_env", "out_dir", "jobs",
        "retention_threshold",
    )
    overrides = {f: getattr(args, f) for f in flag_fields if getattr(args, f) is not None}
    if args.config:
        return RunConfig.from_file(args.config, overrides)
    return RunConfig(**overrides)


def _make_backend(cfg: RunConfig, run_dir: Path):
    kind, _, detail = cfg.backend.partition(":")
    if kind == "scripted":
        return backend_scripted(detail) if detail else backend_scripted({})
    if kind == "remote":
        if not cfg.endpoint or not cfg.model:
            raise ConfigError("remote backend needs --endpoint and --model")
        return backend_remote(
            cfg.endpoint,
            cfg.model,
            api_key_env=cfg.api_key_env,
            log_dir=run_dir / "backend_logs",
        )
    raise ConfigError(f"unknown backend {cfg.backend!r}")


def cmd_run(args) -> int:
    from .agents import run_workflow

    cfg = _resolve_config(args)
    if not cfg.data:
        raise ConfigError("run requires --data")
    if not Path(cfg.data).exists():
        raise ConfigError(f"data file not found: {cfg.data}")
    if cfg.test and not Path(cfg.test).exists():
        raise ConfigError(f"test file not found: {cfg.test}")

    run_dir = make_run_dir(Path(cfg.out_dir))
    backend = _make_backend(cfg, run_dir)
    try:
        report, predictions, artifacts = run_workflow(cfg.data, cfg.test, cfg, backend)
    except StageFailed as exc:
        if exc.report is not None:
            write_run_dir(run_dir, exc.report)
        print(f"stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        print(f"failure report written to {run_dir}")
        return EXIT_STAGE_FAILED
    write_run_dir(run_dir, report, predictions, artifacts)
    final = report.final or {}
    nps_txt = f", held-out NPS {final['nps']:.4f}" if final.get("nps") is not None else ""
    print(
        f"run complete: {len(report.stages_completed)} stages, "
        f"best model {final.get('model')}{nps_txt}"
    )
    print(f"report written to {run_dir}")
    return EXIT_OK


def cmd_audit(args) -> int:
    try:
        with open(args.calls, "r", encoding="utf-8") as fh:
            calls_doc = json.load(fh)
        calls = [JudgmentCall.from_json(c) for c in calls_doc]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot load judgment calls from {args.calls}: {exc}")

    try:
        raw = read_csv(args.data)
    except PcsflowError as exc:
        raise ConfigError(str(exc))

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = CheckConfig(retention_threshold=args.retention_threshold)

    # the reference stack (first alternative everywhere) is always audited
    specs = ensure_reference_spec(enumerate_specs(calls, args.k, args.seed), calls)
    perturbed = []
    errors = {}
    for spec in specs:
        try:
            ds = materialize(raw, spec, calls)
        except PcsflowError as exc:
            errors[spec.id] = str(exc)
            continue
        perturbed.append(ds)
        write_csv(ds, out_dir / f"{ds.name}.csv")
    validation = validate_all(perturbed, raw, cfg)

    excluded = sorted(
        [name for name, results in validation.items() if not suite_passed(results)]
        + list(errors)
    )
    print(f"grid: {len(specs)} spec(s), materialized {len(perturbed)}, wrote {out_dir}/")
    for name in sorted(validation):
        results = validation[name]
        status = "pass" if suite_passed(results) else "FAIL"
        failed = [r.name for r in results if not r.passed]
        suffix = f" ({', '.join(failed)})" if failed else ""
        print(f"  {name}: {status}{suffix}")
    for spec_id, message in sorted(errors.items()):
        print(f"  {spec_id}: materialize error: {message}")
    if excluded:
        print(f"excluded: {', '.join(excluded)}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    try:
        with open(args.input, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        nps_values = doc["nps"]
        tally = SubmissionTally(
            successes=doc["tally"]["successes"], attempts=doc["tally"]["attempts"]
        )
        if not isinstance(nps_values, list) or not all(
            isinstance(v, (int, float)) for v in nps_values
        ):
            raise ValueError("nps must be a list of numbers")
        if not nps_values:
            raise ValueError("nps list is empty")
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad metrics input {args.input}: {exc}")

    vs_value = vs(tally)
    aggregate = anps(nps_values)
    cs_value = cs(vs_value, aggregate.anps)
    print(f"VS   {vs_value:.4f}  ({tally.successes}/{tally.attempts})")
    print(f"ANPS {aggregate.anps:.4f} ± {aggregate.sd:.4f}  (n={aggregate.n_runs})")
    print(f"CS   {cs_value:.4f}")
    if args.check_against is not None:
        delta = abs(cs_value - args.check_against)
        if delta > 0.001:
            print(f"check failed: |CS - {args.check_against}| = {delta:.4f} > 0.001")
            return EXIT_USAGE
        print(f"check passed: |CS - {args.check_against}| = {delta:.4f} <= 0.001")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    report_path = run_dir / "report.json"
    try:
        doc = json.loads(report_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {report_path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"corrupt report file {report_path}: {exc}")
    doc["_figures"] = render_figures(doc, run_dir / "figures")
    (run_dir / "report.md").write_text(render_markdown(doc), encoding="utf-8")
    print(f"rendered {run_dir / 'report.md'}")
    return EXIT_OK


_COMMANDS = {
    "run": cmd_run,
    "audit": cmd_audit,
    "metrics": cmd_metrics,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PcsflowError as exc:
        # StageFailed is handled inside cmd_run; anything else reaching here
        # is an environment problem (unwritable output, bad input file)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
