"""Exception hierarchy shared across the engine.

Every raisable condition has its own class so callers (and the repair loop)
can react to the failure kind rather than parse messages.
"""

from __future__ import annotations


class PcsflowError(Exception):
    """Base class for all engine errors."""


# --- tabular -----------------------------------------------------------------

class FileUnreadable(PcsflowError):
    """Input file is missing or cannot be opened."""


class MalformedCsv(PcsflowError):
    """Ragged or otherwise unparseable CSV row."""

    def __init__(self, message: str, row_index: int | None = None):
        super().__init__(message)
        self.row_index = row_index


class EmptyFile(PcsflowError):
    """File contains no header row at all."""


class DegenerateSplit(PcsflowError):
    """A train/test split would leave one side empty."""


class IoFailure(PcsflowError):
    """Write-side I/O error."""


class UnknownColumn(PcsflowError):
    """Referenced column does not exist in the dataset."""


class UnsupportedDtype(PcsflowError):
    """Operation does not apply to the column's dtype."""


# --- mltools -----------------------------------------------------------------

class DtypeMismatch(PcsflowError):
    """Column dtype incompatible with the requested operation."""


class InvalidParam(PcsflowError):
    """Operation parameter missing, unknown, or out of range."""


class AllMissing(PcsflowError):
    """Imputation target has no observed value and no constant fallback."""


class CardinalityExceeded(PcsflowError):
    """One-hot encoding would produce more indicators than allowed."""


class WouldDropTarget(PcsflowError):
    """Column removal would delete the target column."""


class DomainError(PcsflowError):
    """Value outside the mathematical domain of the transform."""


class TooFewDistinct(PcsflowError):
    """Not enough distinct values to form the requested bins."""


class TooManyColumns(PcsflowError):
    """Feature generation would exceed the output column cap."""


class MissingValuesPresent(PcsflowError):
    """Operation requires fully observed values."""


# --- models ------------------------------------------------------------------

class NonNumericFeature(PcsflowError):
    """Model training requires numeric feature columns."""


class SingularSystem(PcsflowError):
    """Normal equations are singular (collinear features, no ridge)."""


class MissingFeatureColumn(PcsflowError):
    """Scoring dataset lacks a column the model was trained on."""


class NoSuccessfulFits(PcsflowError):
    """Every (dataset, model) cell of the fit grid failed."""


# --- metrics -----------------------------------------------------------------

class LengthMismatch(PcsflowError):
    """Truth and prediction sequences differ in length."""


class EmptyInput(PcsflowError):
    """Metric input sequence is empty."""


class EmptyFits(PcsflowError):
    """Stability aggregation received no usable fits."""


# --- perturb -----------------------------------------------------------------

class NoAlternatives(PcsflowError):
    """Perturbation requested with no judgment calls to vary."""


class MaterializeFailed(PcsflowError):
    """A perturbation spec could not be applied; carries the spec id."""

    def __init__(self, spec_id: str, cause: Exception):
        super().__init__(f"[{spec_id}] {cause}")
        self.spec_id = spec_id
        self.cause = cause


# --- plan --------------------------------------------------------------------

class PlanSyntaxError(PcsflowError):
    """Plan document is not well-formed JSON."""


class PlanSchemaError(PcsflowError):
    """Plan document violates the plan schema; names the offending step."""

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


class StepFailed(PcsflowError):
    """Plan execution stopped at a failing step; carries the trace."""

    def __init__(self, message: str, trace=None, step_index: int | None = None):
        super().__init__(message)
        self.trace = trace
        self.step_index = step_index


class BackendFailure(PcsflowError):
    """Planner backend transport or protocol failure."""


# --- agents / cli ------------------------------------------------------------

class MissingBinding(PcsflowError):
    """Prompt template placeholder lacks a binding."""


class NoTargetIdentified(PcsflowError):
    """Neither configuration nor backend named a target column."""


class CleaningExhausted(PcsflowError):
    """Repair budget spent without a check-passing cleaned dataset."""


class SchemaMismatchAfterReplay(PcsflowError):
    """Test data does not match the training schema after plan replay."""


class StageFailed(PcsflowError):
    """A workflow stage failed unrecoverably; carries the partial report."""

    def __init__(self, stage: str, cause: Exception, report=None):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.report = report


class ConfigError(PcsflowError):
    """Invalid run configuration or CLI usage."""
