"""Prediction inversion and goodness-of-fit metrics.

CV(RMSE) and NMBE follow the ASHRAE Guideline 14 form with an ``n - par``
denominator.  NMBE uses the ``actual - predicted`` numerator, so a model that
over-predicts has a *negative* NMBE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .error_model import ErrorParameters
from .exceptions import DomainError, SingularityError

DEFAULT_PAR = 3


@dataclass(frozen=True)
class FitMetrics:
    cv_rmse: float  # percent
    nmbe: float  # percent
    n: int
    par: int = DEFAULT_PAR


def invert_prediction(y_star, phi, params: ErrorParameters) -> np.ndarray:
    """Recover true power from UUT readings: ``(y* - eps) / ((1 + alpha) cos(phi + phi_c))``."""
    y_star = np.asarray(y_star, dtype=float)
    denom = (1.0 + params.alpha) * np.cos(np.asarray(phi, dtype=float) + params.phi_c)
    denom = np.broadcast_to(denom, y_star.shape)
    bad = np.flatnonzero(np.abs(denom) < 1e-9)
    if bad.size:
        raise SingularityError(f"inversion denominator vanishes at sample {bad[0]}", index=int(bad[0]))
    return (y_star - params.epsilon) / denom


def _check(actual, predicted, par):
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.shape != predicted.shape or actual.ndim != 1:
        raise DomainError("actual and predicted must be equal-length 1-D arrays")
    if actual.size <= par:
        raise DomainError(f"need more than par={par} samples, got {actual.size}")
    mean = actual.mean()
    if mean == 0:
        raise DomainError("mean of actual series is zero")
    return actual, predicted, mean


def cv_rmse(actual, predicted, par: int = DEFAULT_PAR) -> float:
    actual, predicted, mean = _check(actual, predicted, par)
    resid = actual - predicted
    return float(100.0 * np.sqrt(resid @ resid / (actual.size - par)) / mean)


def nmbe(actual, predicted, par: int = DEFAULT_PAR) -> float:
    actual, predicted, mean = _check(actual, predicted, par)
    return float(100.0 * np.sum(actual - predicted) / ((actual.size - par) * mean))


def fit_metrics(actual, predicted, par: int = DEFAULT_PAR) -> FitMetrics:
    return FitMetrics(cv_rmse(actual, predicted, par), nmbe(actual, predicted, par), int(np.size(actual)), par)


def parameter_error(true_params: ErrorParameters, estimate: ErrorParameters) -> np.ndarray:
    """Percent error ``(true - estimate) / true * 100`` for alpha, phi_c, epsilon.

    For a distributed bias pass its mean as ``true_params.epsilon``.
    """
    truth = true_params.as_array()
    zero = np.flatnonzero(truth == 0)
    if zero.size:
        name = ("alpha", "phi_c", "epsilon")[zero[0]]
        raise DomainError(f"true {name} is zero; relative error undefined", index=int(zero[0]))
    return (truth - estimate.as_array()) / truth * 100.0
