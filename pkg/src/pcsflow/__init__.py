"""pcsflow: deterministic, auditable staged data-science pipelines.

Cleaning and modeling decisions are expressed as verifiable structured
plans; an auditing layer perturbs those decisions, gates datasets through
unit-style checks, repairs failing plans under a bounded budget, and scores
outcome stability.
"""

from .agents import (
    EdaReport,
    PcsReview,
    RunReport,
    StageId,
    SystemState,
    run_workflow,
)
from .backends import PlannerBackend, RemoteBackend, ScriptedBackend, backend_remote, backend_scripted
from .config import RunConfig
from .datacheck import CheckConfig, CheckResult, run_suite
from .metrics import (
    ClassificationScores,
    RegressionScores,
    RunAggregate,
    SubmissionTally,
    anps,
    classification_scores,
    cs,
    nps,
    regression_scores,
    vs,
)
from .mltools import FittedStep, OpDescriptor
from .models import ModelSpec, PredictiveFit, Predictions, TrainedModel, default_zoo
from .perturb import JudgmentCall, PerturbationSpec, StabilityReport, enumerate_specs, materialize, stability_report, validate_all
from .plan import ExecutionTrace, Plan, PlanStep, ToolRegistry, execute_plan, parse_plan, repair_loop, validate_plan
from .tabular import (
    ColumnSpec,
    ColumnSummary,
    Dataset,
    TextSummary,
    describe_column,
    read_csv,
    split_train_test,
    summarize,
    write_csv,
)

__version__ = "0.1.0"
