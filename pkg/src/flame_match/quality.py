"""Match-quality scoring: hold-out prediction error, balancing factor, MQ.

The prediction error fits one outcome model per treatment arm on the holdout,
restricted to the active covariates, and sums the two arms' mean squared
residuals. The default model is linear least squares on the raw codes with an
intercept and a tiny ridge term; anything satisfying :class:`OutcomePredictor`
can be plugged in instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .dataset import Dataset
from .errors import DegenerateHoldoutError
from .grouper import check_active

DEFAULT_RIDGE = 1e-6


class OutcomePredictor(Protocol):
    """Per-arm outcome model contract: fit on (X, y), then predict."""

    def fit(self, X: np.ndarray, y: np.ndarray): ...

    def predict(self, model, X: np.ndarray) -> np.ndarray: ...


class LinearRidgePredictor:
    """Least squares with intercept; ridge on non-intercept weights only.

    The ridge keeps the normal equations solvable after covariate drops leave
    an arm with fewer units than coefficients.
    """

    def __init__(self, ridge: float = DEFAULT_RIDGE):
        self.ridge = ridge

    def fit(self, X, y):
        n, m = X.shape
        Z = np.column_stack([np.ones(n), X.astype(np.float64)])
        G = Z.T @ Z
        G[1:, 1:] += self.ridge * np.eye(m)
        return np.linalg.solve(G, Z.T @ y)

    def predict(self, coeffs, X):
        return coeffs[0] + X.astype(np.float64) @ coeffs[1:]


@dataclass(frozen=True)
class PredictorPair:
    """Fitted per-arm coefficients: intercept followed by one weight per active covariate."""

    model_control: np.ndarray
    model_treatment: np.ndarray


@dataclass(frozen=True)
class LevelQuality:
    pe: float
    bf: float
    mq: float
    c_param: float


def _arm_rows(holdout: Dataset):
    control = np.flatnonzero(holdout.treatment == 0)
    treated = np.flatnonzero(holdout.treatment == 1)
    if control.size == 0 or treated.size == 0:
        raise DegenerateHoldoutError("holdout must contain at least one treated and one control unit")
    return control, treated


def _check_quality_active(active, p) -> tuple[int, ...]:
    # unlike grouping, an empty active set is meaningful here: the model
    # degenerates to a per-arm intercept
    return check_active(active, p) if len(tuple(active)) else ()


def fit_predictor(holdout: Dataset, active, ridge: float = DEFAULT_RIDGE) -> PredictorPair:
    """Fit the default linear model per arm on the active covariate codes."""
    active = _check_quality_active(active, holdout.n_covariates)
    control, treated = _arm_rows(holdout)
    X = holdout.covariates[:, list(active)]
    predictor = LinearRidgePredictor(ridge)
    return PredictorPair(
        model_control=predictor.fit(X[control], holdout.outcome[control]),
        model_treatment=predictor.fit(X[treated], holdout.outcome[treated]),
    )


def arm_prediction_errors(holdout: Dataset, active, predictor: OutcomePredictor | None = None):
    """Mean squared residual of each arm's own model: (control, treated)."""
    active = _check_quality_active(active, holdout.n_covariates)
    control, treated = _arm_rows(holdout)
    predictor = predictor or LinearRidgePredictor()
    X = holdout.covariates[:, list(active)]
    y = holdout.outcome
    out = []
    for rows in (control, treated):
        model = predictor.fit(X[rows], y[rows])
        resid = y[rows] - predictor.predict(model, X[rows])
        out.append(float(np.mean(resid**2)))
    return tuple(out)


def prediction_error(holdout: Dataset, active, predictor: OutcomePredictor | None = None) -> float:
    """Sum of the two arms' mean squared residuals on the holdout."""
    pe_control, pe_treated = arm_prediction_errors(holdout, active, predictor)
    return pe_control + pe_treated


def pooled_prediction_error(holdout: Dataset, active, predictor: OutcomePredictor | None = None) -> float:
    """Single mean squared residual over all holdout units, per-arm models.

    This is the squared-error risk of the best per-arm fit, the quantity that
    is additive in the squared weights of dropped covariates for a linear
    outcome model (each dropped covariate j adds w_j^2 on symmetric +/-1
    covariates). The per-arm-normalized :func:`prediction_error` equals twice
    this value on a balanced holdout.
    """
    active = _check_quality_active(active, holdout.n_covariates)
    control, treated = _arm_rows(holdout)
    predictor = predictor or LinearRidgePredictor()
    X = holdout.covariates[:, list(active)]
    y = holdout.outcome
    total = 0.0
    for rows in (control, treated):
        model = predictor.fit(X[rows], y[rows])
        resid = y[rows] - predictor.predict(model, X[rows])
        total += float(np.sum(resid**2))
    return total / holdout.n_units


def balancing_factor(matched_control: int, available_control: int, matched_treated: int, available_treated: int) -> float:
    """Fraction of each arm's available pool that got matched, summed over arms.

    An arm with nothing available contributes 0, keeping the factor defined
    at boundary levels.
    """
    for matched, available, arm in (
        (matched_control, available_control, "control"),
        (matched_treated, available_treated, "treated"),
    ):
        if matched < 0 or available < 0 or matched > available:
            raise ValueError(f"{arm}: matched={matched} must lie in [0, available={available}]")
    bf = 0.0
    if available_control > 0:
        bf += matched_control / available_control
    if available_treated > 0:
        bf += matched_treated / available_treated
    return bf


def match_quality(pe: float, bf: float, c: float) -> LevelQuality:
    """Combine prediction error and balancing factor: mq = c * bf - pe."""
    if c < 0:
        raise ValueError(f"trade-off parameter must be >= 0, got {c}")
    return LevelQuality(pe=float(pe), bf=float(bf), mq=c * bf - pe, c_param=float(c))
