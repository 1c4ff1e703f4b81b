"""Evaluation stack: base scores, normalized performance, run aggregates.

Classification uses macro averaging over the union of observed classes;
regression r-squared is taken about the truth mean of the evaluated split.
All aggregates use population (1/N) standard deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

from .errors import EmptyInput, LengthMismatch

# r2 for a constant-truth split with imperfect predictions; large negative
# sentinel rather than -inf so downstream arithmetic stays finite.
R2_UNDEFINED_SENTINEL = -1e9


@dataclass(frozen=True)
class ClassificationScores:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def to_json(self) -> dict:
        return {
            "task": "classification",
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


@dataclass(frozen=True)
class RegressionScores:
    rmse: float
    mae: float
    r2: float

    def to_json(self) -> dict:
        return {"task": "regression", "rmse": self.rmse, "mae": self.mae, "r2": self.r2}


Scores = Union[ClassificationScores, RegressionScores]


@dataclass(frozen=True)
class RunAggregate:
    anps: float
    sd: float
    n_runs: int

    def to_json(self) -> dict:
        return {"anps": self.anps, "sd": self.sd, "n_runs": self.n_runs}


@dataclass(frozen=True)
class SubmissionTally:
    successes: int
    attempts: int

    def __post_init__(self):
        if self.attempts <= 0:
            raise ValueError("attempts must be positive")
        if not 0 <= self.successes <= self.attempts:
            raise ValueError("successes must be in [0, attempts]")


def _check_lengths(y_true: Sequence, y_pred: Sequence) -> None:
    if len(y_true) == 0:
        raise EmptyInput("no samples to score")
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"{len(y_true)} truths vs {len(y_pred)} predictions")


def classification_scores(y_true: Sequence, y_pred: Sequence) -> ClassificationScores:
    """Accuracy plus macro precision/recall/F1 over observed classes.

    A class with an empty denominator (never predicted, or never present)
    scores 0 for that component.
    """
    _check_lengths(y_true, y_pred)
    classes = sorted({str(v) for v in y_true} | {str(v) for v in y_pred})
    yt = [str(v) for v in y_true]
    yp = [str(v) for v in y_pred]

    correct = sum(1 for t, p in zip(yt, yp) if t == p)
    precisions, recalls, f1s = [], [], []
    for c in classes:
        tp = sum(1 for t, p in zip(yt, yp) if t == c and p == c)
        fp = sum(1 for t, p in zip(yt, yp) if t != c and p == c)
        fn = sum(1 for t, p in zip(yt, yp) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        precisions.append(prec)
        recalls.append(rec)
        f1s.append(f1)

    k = len(classes)
    return ClassificationScores(
        accuracy=correct / len(yt),
        precision=sum(precisions) / k,
        recall=sum(recalls) / k,
        f1=sum(f1s) / k,
    )


def regression_scores(
    y_true: Sequence[float], y_pred: Sequence[float]
) -> RegressionScores:
    _check_lengths(y_true, y_pred)
    n = len(y_true)
    errs = [float(t) - float(p) for t, p in zip(y_true, y_pred)]
    rmse = math.sqrt(sum(e * e for e in errs) / n)
    mae = sum(abs(e) for e in errs) / n
    mean = sum(float(t) for t in y_true) / n
    ss_tot = sum((float(t) - mean) ** 2 for t in y_true)
    ss_res = sum(e * e for e in errs)
    if ss_tot == 0:
        r2 = 0.0 if ss_res == 0 else R2_UNDEFINED_SENTINEL
    else:
        r2 = 1.0 - ss_res / ss_tot
    return RegressionScores(rmse=rmse, mae=mae, r2=r2)


def nps(scores: Scores) -> float:
    """Normalized performance score for one run.

    Classification: mean of accuracy, F1, precision, recall (always in [0,1]).
    Regression: mean of 1/(1+RMSE), 1/(1+MAE), r2 (negative when r2 is).
    """
    if isinstance(scores, ClassificationScores):
        return (scores.accuracy + scores.f1 + scores.precision + scores.recall) / 4
    return (1.0 / (1.0 + scores.rmse) + 1.0 / (1.0 + scores.mae) + scores.r2) / 3


def anps(nps_values: Sequence[float]) -> RunAggregate:
    """Mean and population SD of per-run scores."""
    if not nps_values:
        raise EmptyInput("no run scores")
    n = len(nps_values)
    mean = sum(nps_values) / n
    sd = math.sqrt(sum((v - mean) ** 2 for v in nps_values) / n)
    return RunAggregate(anps=mean, sd=sd, n_runs=n)


def vs(tally: SubmissionTally) -> float:
    """Valid-submission rate: successes over attempts."""
    return tally.successes / tally.attempts


def cs(vs_value: float, anps_value: float) -> float:
    """Comprehensive score: equal-weight blend of validity and quality."""
    return 0.5 * vs_value + 0.5 * anps_value
