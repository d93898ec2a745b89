"""Scoring trained models against the Godunov reference field."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .godunov import DensityField
from .stacked import StackedPinn, evaluate_grid


@dataclass(frozen=True)
class ErrorReport:
    relative_l2: float
    min: float
    q1: float
    median: float
    q3: float
    max: float
    n_eval_points: int

    def as_text(self) -> str:
        return "\n".join(f"{k} = {v!r}" for k, v in asdict(self).items()) + "\n"

    @staticmethod
    def csv_header() -> str:
        return "relative_l2,min,q1,median,q3,max,n_eval_points"

    def csv_row(self) -> str:
        vals = [self.relative_l2, self.min, self.q1, self.median, self.q3, self.max]
        return ",".join(f"{v:.17g}" for v in vals) + f",{self.n_eval_points}"


def relative_l2_arrays(truth: np.ndarray, pred: np.ndarray) -> float:
    """``||truth - pred||_2 / ||truth||_2`` over all entries."""
    truth = np.asarray(truth, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    norm = np.linalg.norm(truth)
    if norm == 0:
        raise ValueError("reference field has zero norm")
    return float(np.linalg.norm(truth - pred) / norm)


def quantile_summary(errors: np.ndarray) -> tuple[float, float, float, float, float]:
    q = np.quantile(np.asarray(errors, dtype=np.float64).ravel(), [0.0, 0.25, 0.5, 0.75, 1.0])
    return tuple(float(v) for v in q)


def predict(truth: DensityField, model: StackedPinn, stage: int) -> np.ndarray:
    """Stage ``stage`` evaluated on the reference grid nodes."""
    T, X = truth.mesh()
    return evaluate_grid(model, T, X, stage)


def relative_l2(truth: DensityField, model: StackedPinn, stage: int) -> float:
    return relative_l2_arrays(truth.values, predict(truth, model, stage))


def error_report(truth: np.ndarray, pred: np.ndarray) -> ErrorReport:
    rel = relative_l2_arrays(truth, pred)
    abs_err = np.abs(np.asarray(pred) - np.asarray(truth))
    return ErrorReport(rel, *quantile_summary(abs_err), int(abs_err.size))


def error_distribution(truth: DensityField, model: StackedPinn, stage: int) -> ErrorReport:
    return error_report(truth.values, predict(truth, model, stage))


def stage_error_table(truth: DensityField, model: StackedPinn) -> list[tuple[int, float]]:
    return [(i, relative_l2(truth, model, i)) for i in range(model.n + 1)]
