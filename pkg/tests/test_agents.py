import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from pcsflow.agents import (
    PromptTemplate,
    StageId,
    SystemState,
    TEMPLATES,
    define_stage,
    derive_judgment_calls,
    explore_stage,
    merge_suggested_calls,
    model_stage,
    pcs_review,
    render_prompt,
    run_workflow,
)
from pcsflow.backends import ScriptedBackend, backend_remote, backend_scripted
from pcsflow.config import RunConfig
from pcsflow.errors import (
    BackendFailure,
    ConfigError,
    MissingBinding,
    NoTargetIdentified,
    StageFailed,
)
from pcsflow.metrics import SubmissionTally, vs
from pcsflow.mltools import OpDescriptor
from pcsflow.perturb import JudgmentCall
from pcsflow.plan import parse_plan
from pcsflow.tabular import Dataset, read_csv

from conftest import TOY_CLEANING_PLAN, toy_scenario


def make_state(seed=7):
    return SystemState(problem_description="predict churn", seed=seed, config={})


def make_cfg(**kw):
    defaults = dict(data="toy.csv", target="churn", k=6, seed=7)
    defaults.update(kw)
    return RunConfig(**defaults)


class TestRenderPrompt:
    def test_literal_substitution(self):
        tpl = TEMPLATES["problem_definition"]
        system, task = render_prompt(
            tpl,
            {
                "problem_description": "predict churn",
                "context_description": "40 rows",
                "result": "{}",
            },
        )
        assert "predict churn" in system
        assert "40 rows" in system

    def test_missing_binding_names_placeholder(self):
        with pytest.raises(MissingBinding) as err:
            render_prompt(TEMPLATES["problem_definition"], {"result": "x"})
        assert "problem_description" in str(err.value)

    def test_binding_with_braces_not_reexpanded(self):
        tpl = TEMPLATES["problem_definition"]
        system, _ = render_prompt(
            tpl,
            {
                "problem_description": "{context_description} literal",
                "context_description": "REAL",
                "result": "",
            },
        )
        assert "{context_description} literal" in system
        assert system.count("REAL") == 1

    def test_undeclared_placeholder_rejected_at_construction(self):
        with pytest.raises(ValueError):
            PromptTemplate(
                role="pcs",
                system_text="{mystery}",
                task_text="",
                placeholders=frozenset(),
                response_shape="x",
            )


class TestDefineStage:
    def test_boolean_target_classified(self, toy_path):
        raw = read_csv(toy_path)
        record, annotated = define_stage(
            raw, make_state(), ScriptedBackend(), make_cfg()
        )
        assert record["target"] == "churn"
        assert record["task"] == "classification"
        assert annotated.column("churn").role == "target"

    def test_numeric_target_regression(self, toy_path):
        raw = read_csv(toy_path)
        record, _ = define_stage(
            raw, make_state(), ScriptedBackend(), make_cfg(target="income")
        )
        assert record["task"] == "regression"

    def test_backend_overrides_dtype_heuristic(self):
        # integer-coded 3-class label: heuristic says regression, backend says otherwise
        raw = Dataset.from_columns(
            "d", {"x": [1.0, 2.0, 3.0], "label": [0.0, 1.0, 2.0]}
        )
        backend = ScriptedBackend(
            {"responses": [{"shape": "problem_definition", "body": {"task": "classification"}}]}
        )
        record, _ = define_stage(raw, make_state(), backend, make_cfg(target="label", task="auto"))
        assert record["task"] == "classification"
        assert record["task_heuristic"] == "regression"

    def test_no_target_identified(self, toy_path):
        raw = read_csv(toy_path)
        with pytest.raises(NoTargetIdentified):
            define_stage(raw, make_state(), ScriptedBackend(), make_cfg(target=None))

    def test_missing_target_column(self, toy_path):
        raw = read_csv(toy_path)
        with pytest.raises(NoTargetIdentified):
            define_stage(raw, make_state(), ScriptedBackend(), make_cfg(target="ghost"))

    def test_pcs_review_attached(self, toy_path):
        raw = read_csv(toy_path)
        record, _ = define_stage(raw, make_state(), ScriptedBackend(), make_cfg())
        assert record["pcs_review"]["verdict"] == "accept"


class TestJudgmentDerivation:
    def test_one_decision_point_per_step(self):
        plan = parse_plan(json.dumps(TOY_CLEANING_PLAN))
        calls = derive_judgment_calls(plan)
        assert [c.decision_point for c in calls] == [
            "step_0_fill_missing",
            "step_1_handle_outliers",
            "step_2_encode_categorical",
        ]
        assert [len(c.alternatives) for c in calls] == [2, 2, 1]
        # alternative 0 is always the original op
        assert calls[0].alternatives[0].params["strategy"] == "mean"

    def test_merge_matching_suggestion(self):
        plan = parse_plan(json.dumps(TOY_CLEANING_PLAN))
        derived = derive_judgment_calls(plan)
        suggestion = JudgmentCall(
            "outlier treatment",
            (
                OpDescriptor(
                    "handle_outliers",
                    ("age",),
                    {"method": "zscore", "threshold": 3.0, "action": "clip"},
                ),
            ),
        )
        merged, unmatched = merge_suggested_calls(derived, [suggestion])
        assert unmatched == []
        assert len(merged[1].alternatives) == 3

    def test_unmatched_suggestion_reported(self):
        plan = parse_plan(json.dumps(TOY_CLEANING_PLAN))
        derived = derive_judgment_calls(plan)
        stranger = JudgmentCall(
            "unrelated",
            (OpDescriptor("discretize_features", ("income",), {"method": "equal_width", "n": 3}),),
        )
        merged, unmatched = merge_suggested_calls(derived, [stranger])
        assert unmatched == [stranger]
        assert [len(c.alternatives) for c in merged] == [2, 2, 1]


def run_explore(toy_path, scenario, cfg=None):
    cfg = cfg or make_cfg()
    raw = read_csv(toy_path)
    state = make_state()
    backend = backend_scripted(scenario)
    _, annotated = define_stage(raw, state, backend, cfg)
    return explore_stage(annotated, state, backend, cfg), state, backend


class TestExploreStage:
    def test_scripted_plan_passes_first_try(self, toy_path):
        outcome, state, _ = run_explore(toy_path, toy_scenario(with_review=False))
        assert len(outcome.trace.attempts) == 1
        assert outcome.clean.column("age").missing_count == 0
        assert all(r.passed for r in outcome.checks)

    def test_review_widens_grid_to_six(self, toy_path):
        outcome, _, _ = run_explore(toy_path, toy_scenario(with_review=True))
        assert [len(c.alternatives) for c in outcome.judgment_calls] == [2, 3, 1]
        assert len(outcome.specs) == 6
        assert len(outcome.perturbed) == 6
        assert all(
            all(r.passed for r in results) for results in outcome.validation.values()
        )

    def test_failing_plan_replanned_with_check_context(self, toy_path):
        # first plan drops too many rows (retention fails), repair fixes it
        bad_plan = {
            "version": "1",
            "task_label": "cleaning",
            "steps": [
                {
                    "op": "handle_outliers",
                    "columns": ["age"],
                    "params": {"method": "quantile", "lo": 0.3, "hi": 0.6, "action": "remove_row"},
                }
            ],
        }
        scenario = {
            "responses": [
                {"shape": "plan", "agent": "explore", "body": bad_plan},
                {"shape": "plan", "body": TOY_CLEANING_PLAN},
            ]
        }
        outcome, _, _ = run_explore(toy_path, scenario)
        assert len(outcome.trace.attempts) == 2
        assert outcome.trace.attempts[0].outcome == "checks_failed"
        assert "retention" in outcome.trace.attempts[0].error
        assert all(r.passed for r in outcome.checks)

    def test_unparseable_initial_plan_consumes_budget_then_recovers(self, toy_path):
        scenario = {
            "responses": [
                {"shape": "plan", "agent": "explore", "body": "this is not a plan {"},
                {"shape": "plan", "body": TOY_CLEANING_PLAN},
            ]
        }
        outcome, state, _ = run_explore(toy_path, scenario, make_cfg(n_max=2))
        assert all(r.passed for r in outcome.checks)
        notes = [m.content for m in state.memory if m.direction == "note"]
        assert any("parse failure" in n for n in notes)

    def test_unparseable_plans_exhaust_budget(self, toy_path):
        from pcsflow.errors import CleaningExhausted

        scenario = {
            "responses": [
                {"shape": "plan", "body": "junk one"},
                {"shape": "plan", "body": "junk two"},
            ]
        }
        with pytest.raises(CleaningExhausted):
            run_explore(toy_path, scenario, make_cfg(n_max=1))

    def test_cleaning_exhausted_after_budget(self, toy_path):
        from pcsflow.errors import CleaningExhausted

        # identity plans never clear the missing-value check
        scenario = {"responses": []}
        with pytest.raises(CleaningExhausted):
            run_explore(toy_path, scenario, make_cfg(n_max=2))

    def test_eda_answers_reference_summaries(self, toy_path):
        outcome, _, _ = run_explore(toy_path, toy_scenario())
        assert outcome.eda.questions
        assert all(
            isinstance(a["statistics"], list) for a in outcome.eda.answers
        )
        assert outcome.eda.column_summaries

    def test_reference_spec_reproduces_clean_dataset(self, toy_path):
        outcome, _, _ = run_explore(toy_path, toy_scenario())
        reference = next(
            ds
            for ds, spec in zip(outcome.perturbed, outcome.specs)
            if all(c == 0 for c in spec.choices)
        )
        assert reference.rows == outcome.clean.rows


class TestModelStage:
    def run_model(self, toy_path, model_body=None, k=3):
        responses = [{"shape": "plan", "agent": "explore", "body": TOY_CLEANING_PLAN}]
        if model_body is not None:
            responses.append({"shape": "model_specs", "body": model_body})
        scenario = {"responses": responses}
        cfg = make_cfg(k=k)
        raw = read_csv(toy_path)
        state = make_state()
        backend = backend_scripted(scenario)
        _, annotated = define_stage(raw, state, backend, cfg)
        outcome = explore_stage(annotated, state, backend, cfg)
        from pcsflow.datacheck import suite_passed

        valid = [
            ds for ds in outcome.perturbed if suite_passed(outcome.validation[ds.name])
        ]
        return model_stage(outcome.clean, valid, state, backend, cfg), valid

    def test_grid_cardinality(self, toy_path):
        body = [
            {"family": "majority_baseline"},
            {"family": "knn", "params": {"k": 3}},
        ]
        modeled, valid = self.run_model(toy_path, body, k=3)
        assert len(valid) == 3
        assert len(modeled.fits) == 6

    def test_incompatible_spec_becomes_failed_fits(self, toy_path):
        body = [
            {"family": "majority_baseline"},
            {"family": "linear_regression", "id": "wrong_task"},
        ]
        modeled, valid = self.run_model(toy_path, body, k=3)
        failed = [f for f in modeled.fits if f.error]
        assert len(failed) == len(valid)
        assert all("incompatible spec" in f.error for f in failed)

    def test_selected_matches_independent_recompute(self, toy_path):
        modeled, _ = self.run_model(toy_path, None, k=3)
        successful = [f for f in modeled.fits if f.ok]
        by_model = {}
        for f in successful:
            by_model.setdefault(f.model_id, []).append(f.nps)
        sds = {
            m: (sum((v - sum(vs_) / len(vs_)) ** 2 for v in vs_) / len(vs_)) ** 0.5
            for m, vs_ in by_model.items()
        }
        expected = min(
            successful, key=lambda f: (-f.nps, sds[f.model_id], f.dataset_id, f.model_id)
        )
        assert modeled.selected == expected

    def test_stability_best_is_argmax_mean_nps(self, toy_path):
        modeled, _ = self.run_model(toy_path, None, k=3)
        by_model = {}
        for f in modeled.fits:
            if f.ok:
                by_model.setdefault(f.model_id, []).append(f.nps)
        means = {m: sum(v) / len(v) for m, v in by_model.items()}
        best_mean = max(means.values())
        assert means[modeled.stability.best_model_id] == pytest.approx(best_mean)


class TestEvaluateStage:
    def full_run(self, toy_path, test_path=None, cfg=None):
        cfg = cfg or make_cfg()
        return run_workflow(str(toy_path), test_path, cfg, backend_scripted(toy_scenario()))

    def test_labeled_holdout_scores_present(self, toy_path):
        report, predictions, artifacts = self.full_run(toy_path)
        assert report.final["scores"] is not None
        assert report.final["nps"] is not None
        assert len(predictions.values) == 8  # 20% of 40

    def test_unlabeled_test_predictions_only(self, toy_path, tmp_path):
        # strip the target column from the test file
        raw = read_csv(toy_path)
        lines = toy_path.read_text().splitlines()
        header = lines[0].rsplit(",", 1)[0]
        rows = [line.rsplit(",", 1)[0] for line in lines[1:8]]
        test_file = tmp_path / "unlabeled.csv"
        test_file.write_text("\n".join([header] + rows) + "\n")
        report, predictions, _ = self.full_run(toy_path, str(test_file))
        assert report.final["scores"] is None
        assert len(predictions.values) == 7

    def test_test_missing_feature_column_fails_stage(self, toy_path, tmp_path):
        test_file = tmp_path / "narrow.csv"
        test_file.write_text("age,churn\n30,true\n40,false\n")
        with pytest.raises(StageFailed) as err:
            self.full_run(toy_path, str(test_file))
        assert err.value.stage == "evaluate"
        assert err.value.report.failure["stage"] == "evaluate"


class TestPcsReview:
    def test_well_formed_review_parsed(self):
        backend = ScriptedBackend(
            {
                "responses": [
                    {
                        "shape": "pcs_review",
                        "body": {
                            "predictability": "fine",
                            "stability": "stable",
                            "verdict": "accept",
                            "judgment_calls": [],
                        },
                    }
                ]
            }
        )
        review = pcs_review({"x": 1}, make_state(), backend, StageId.DEFINE)
        assert review.predictability == "fine"
        assert review.verdict == "accept"

    def test_malformed_then_valid_takes_two_calls(self):
        backend = ScriptedBackend(
            {
                "responses": [
                    {"shape": "pcs_review", "body": "not json {"},
                    {
                        "shape": "pcs_review",
                        "body": {"predictability": "ok", "stability": "ok", "verdict": "accept"},
                    },
                ]
            }
        )
        review = pcs_review({}, make_state(), backend, StageId.DEFINE)
        assert review.predictability == "ok"
        assert len(backend.calls) == 2

    def test_twice_malformed_recorded_verbatim_accept(self):
        backend = ScriptedBackend(
            {
                "responses": [
                    {"shape": "pcs_review", "body": "garbage one"},
                    {"shape": "pcs_review", "body": "garbage two"},
                ]
            }
        )
        review = pcs_review({}, make_state(), backend, StageId.DEFINE)
        assert review.verdict == "accept"
        assert "garbage two" in review.predictability

    def test_revise_with_judgment_call_forwarded(self, toy_path):
        outcome, _, _ = run_explore(toy_path, toy_scenario(with_review=True))
        assert any(len(c.alternatives) == 3 for c in outcome.judgment_calls)


class TestRunWorkflow:
    def test_golden_scenario_completes_four_stages(self, toy_path):
        cfg = make_cfg()
        report, predictions, artifacts = run_workflow(
            str(toy_path), None, cfg, backend_scripted(toy_scenario())
        )
        assert report.stages_completed == ["define", "clean", "model", "evaluate"]
        assert report.failure is None
        assert len(report.fits) == 24  # 6 datasets x 4 models
        assert artifacts["model"] is not None

    def test_permanent_cleaning_failure_reports_stage(self, toy_path):
        with pytest.raises(StageFailed) as err:
            run_workflow(
                str(toy_path), None, make_cfg(n_max=1), backend_scripted({})
            )
        assert err.value.stage == "clean"
        report = err.value.report
        assert report.failure["stage"] == "clean"
        assert report.stages_completed == ["define"]
        # no later-stage output without the earlier stages
        assert report.fits is None and report.stability is None

    def test_deterministic_reports(self, toy_path):
        from pcsflow.report import normalized_report

        runs = []
        for _ in range(2):
            report, predictions, _ = run_workflow(
                str(toy_path), None, make_cfg(), backend_scripted(toy_scenario())
            )
            runs.append((normalized_report(report.to_json()), predictions.values))
        assert runs[0][0] == runs[1][0]
        assert runs[0][1] == runs[1][1]

    def test_memory_ordered_by_stage(self, toy_path):
        report, _, _ = run_workflow(
            str(toy_path), None, make_cfg(), backend_scripted(toy_scenario())
        )
        stage_order = {"define": 1, "clean": 2, "model": 3, "evaluate": 4}
        seen = [stage_order[m["stage"]] for m in report.memory]
        assert seen == sorted(seen)
        assert len(seen) > 0

    def test_regression_task_end_to_end(self, toy_path):
        # income target: churn becomes a boolean feature and must be encoded
        plan = {
            "version": "1",
            "task_label": "cleaning",
            "steps": [
                {"op": "fill_missing", "columns": ["age"], "params": {"strategy": "mean"}},
                {"op": "handle_outliers", "columns": ["age"],
                 "params": {"method": "iqr", "multiplier": 1.5, "action": "clip"}},
                {"op": "encode_categorical", "columns": ["tier", "churn"],
                 "params": {"scheme": "one_hot"}},
            ],
        }
        scenario = {"responses": [{"shape": "plan", "agent": "explore", "body": plan}]}
        cfg = make_cfg(target="income", k=4, seed=11)
        report, predictions, _ = run_workflow(
            str(toy_path), None, cfg, backend_scripted(scenario)
        )
        assert report.problem["task"] == "regression"
        assert report.stages_completed == ["define", "clean", "model", "evaluate"]
        assert sum(1 for f in report.fits if f["error"]) == 0
        assert {f["model_id"] for f in report.fits} == {
            "mean_baseline", "linear_regression", "knn", "decision_tree"
        }
        scores = report.final["scores"]
        assert scores["task"] == "regression"
        assert scores["rmse"] >= 0 and scores["mae"] >= 0
        assert all(isinstance(v, float) for v in predictions.values)

    def test_unencoded_boolean_feature_fails_model_stage_with_reason(self, toy_path):
        # same regression target but the plan leaves churn un-encoded: every
        # fit fails with NonNumericFeature and the stage reports it
        scenario = {"responses": [{"shape": "plan", "agent": "explore", "body": TOY_CLEANING_PLAN}]}
        with pytest.raises(StageFailed) as err:
            run_workflow(
                str(toy_path), None, make_cfg(target="income"), backend_scripted(scenario)
            )
        assert err.value.stage == "model"

    def test_vs_accounting_over_batch(self, toy_path):
        outcomes = []
        for scenario in (toy_scenario(), {}, toy_scenario()):
            try:
                run_workflow(
                    str(toy_path), None, make_cfg(n_max=1), backend_scripted(scenario)
                )
                outcomes.append(True)
            except StageFailed:
                outcomes.append(False)
        tally = SubmissionTally(successes=sum(outcomes), attempts=len(outcomes))
        assert vs(tally) == pytest.approx(2 / 3)

    def test_excluded_perturbation_never_reaches_the_fit_grid(self, toy_path):
        # one alternative drops ~40% of rows; its spec fails retention and
        # must be absent from the fit grid
        review = {
            "predictability": "row-dropping rule is aggressive",
            "stability": "compare against clipping",
            "verdict": "revise",
            "judgment_calls": [
                {
                    "decision_point": "outlier treatment",
                    "alternatives": [
                        {
                            "op": "handle_outliers",
                            "columns": ["age"],
                            "params": {"method": "quantile", "lo": 0.3, "hi": 0.6, "action": "remove_row"},
                        }
                    ],
                }
            ],
        }
        scenario = {
            "responses": [
                {"shape": "plan", "agent": "explore", "body": TOY_CLEANING_PLAN},
                {"shape": "pcs_review", "agent": "pcs", "stage": 2, "body": review},
            ]
        }
        report, _, _ = run_workflow(
            str(toy_path), None, make_cfg(), backend_scripted(scenario)
        )
        excluded = set(report.perturbation["excluded"])
        assert excluded, "expected the row-dropping specs to be excluded"
        fit_datasets = {f["dataset_id"] for f in report.fits}
        assert not fit_datasets & excluded
        valid = {
            name
            for name, results in report.perturbation["validation"].items()
            if all(c["passed"] for c in results)
        }
        assert fit_datasets == valid

    def test_unreadable_data_fails_at_define_with_check(self, tmp_path):
        with pytest.raises(StageFailed) as err:
            run_workflow(
                str(tmp_path / "ghost.csv"), None, make_cfg(), backend_scripted({})
            )
        assert err.value.stage == "define"
        checks = err.value.report.checks
        assert checks[0]["name"] == "test_file_readable"
        assert not checks[0]["passed"]


class TestScriptedBackend:
    def test_same_plan_each_run(self):
        for _ in range(2):
            backend = ScriptedBackend(toy_scenario())
            text = backend.respond([], "plan", agent="explore", stage=2)
            assert json.loads(text) == TOY_CLEANING_PLAN

    def test_per_attempt_sequencing(self):
        backend = ScriptedBackend(
            {
                "responses": [
                    {"shape": "plan", "body": {"version": "1", "task_label": "a", "steps": []}},
                    {"shape": "plan", "body": {"version": "1", "task_label": "b", "steps": []}},
                ]
            }
        )
        first = json.loads(backend.respond([], "plan"))
        second = json.loads(backend.respond([], "plan"))
        assert (first["task_label"], second["task_label"]) == ("a", "b")

    def test_exhausted_script_falls_back(self):
        backend = ScriptedBackend()
        assert json.loads(backend.respond([], "plan"))["steps"] == []
        assert json.loads(backend.respond([], "model_specs")) == {"use_default_zoo": True}
        review = json.loads(backend.respond([], "pcs_review"))
        assert review["verdict"] == "accept"

    def test_stage_filter_respected(self):
        backend = ScriptedBackend(
            {"responses": [{"shape": "pcs_review", "stage": 2, "body": {"verdict": "revise", "stability": "s"}}]}
        )
        stage1 = json.loads(backend.respond([], "pcs_review", stage=1))
        assert stage1["verdict"] == "accept"  # fallback; entry reserved for stage 2
        stage2 = json.loads(backend.respond([], "pcs_review", stage=2))
        assert stage2["verdict"] == "revise"


class _ChatHandler(BaseHTTPRequestHandler):
    status = 200
    payload: dict = {}
    requests: list = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        _ChatHandler.requests.append(json.loads(self.rfile.read(length)))
        self.send_response(self.status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        if self.status == 200:
            self.wfile.write(json.dumps(self.payload).encode())

    def log_message(self, *args):
        pass


@pytest.fixture
def chat_server():
    server = HTTPServer(("127.0.0.1", 0), _ChatHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _ChatHandler.requests = []
    yield server
    server.shutdown()


class TestRemoteBackend:
    def test_plan_round_trip(self, chat_server, tmp_path):
        plan_text = json.dumps({"version": "1", "task_label": "c", "steps": []})
        _ChatHandler.status = 200
        _ChatHandler.payload = {"choices": [{"message": {"content": plan_text}}]}
        endpoint = f"http://127.0.0.1:{chat_server.server_port}/v1/chat/completions"
        backend = backend_remote(endpoint, "test-model", log_dir=tmp_path / "logs")
        out = backend.respond([{"role": "user", "content": "hi"}], "plan")
        assert json.loads(out)["version"] == "1"
        assert _ChatHandler.requests[0]["model"] == "test-model"
        logs = list((tmp_path / "logs").iterdir())
        assert logs, "request/response logged"
        assert "Authorization" not in logs[0].read_text()

    def test_http_500_becomes_backend_failure_after_retries(self, chat_server):
        _ChatHandler.status = 500
        endpoint = f"http://127.0.0.1:{chat_server.server_port}/"
        backend = backend_remote(endpoint, "m", max_transport_retries=2)
        before = len(_ChatHandler.requests)
        with pytest.raises(BackendFailure):
            backend.respond([], "plan")
        assert len(_ChatHandler.requests) - before == 3  # initial + 2 retries
        _ChatHandler.status = 200

    def test_missing_credential_env_fails_before_any_call(self, monkeypatch):
        monkeypatch.delenv("PCSFLOW_TEST_KEY", raising=False)
        with pytest.raises(ConfigError):
            backend_remote("http://example.invalid", "m", api_key_env="PCSFLOW_TEST_KEY")

    def test_malformed_response_is_backend_failure(self, chat_server):
        _ChatHandler.status = 200
        _ChatHandler.payload = {"unexpected": True}
        endpoint = f"http://127.0.0.1:{chat_server.server_port}/"
        backend = backend_remote(endpoint, "m")
        with pytest.raises(BackendFailure):
            backend.respond([], "plan")
