"""Scikit-learn style front end.

:class:`BorrowingEstimator` wraps the full pipeline behind ``fit`` with
constructor-only hyperparameters, so it composes with sklearn tooling
(``get_params``/``set_params``, ``clone``).  :class:`OutcomeCalibrator`
exposes the EC outcome calibration as a transformer.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .calibration import apply_calibration, calibrate, fit_bias
from .data import Dataset
from .nuisance import expand_features
from .simulation import run_method
from .validation import (
    as_binary_vector,
    as_float_matrix,
    as_float_vector,
    check_consistent_rows,
    check_is_fitted,
)

__all__ = ["BorrowingEstimator", "OutcomeCalibrator"]


def _build_dataset(X, a, y, r) -> Dataset:
    X = as_float_matrix(X, "X")
    a = as_binary_vector(a, "a")
    y = as_float_vector(y, "y")
    r = as_binary_vector(r, "r")
    check_consistent_rows(X, a, y, r, names=("X", "a", "y", "r"))
    return Dataset(covariates=X, treatment=a, outcome=y, source=r)


class BorrowingEstimator(BaseEstimator):
    """ATE estimator with adaptive external-control borrowing.

    Parameters
    ----------
    method : one of ``nb``, ``fb``, ``fcb``, ``alb``, ``aib``, ``acib``.
    grid_step : subset-size grid step for the scan methods (None = N_E/20).
    lam : bias-fit ridge weight, or ``"cv"`` for 5-fold selection.
    nu_exp : adaptive-lasso exponent for ``alb``.
    e1_mode : ``"known"`` (constant treated share) or ``"fitted"``.
    features : optional basis expansion (``"linear"`` or ``"quadratic"``).
    smooth_argmin : smooth the MSE curve before taking its argmin.

    Attributes (after ``fit``)
    --------------------------
    estimate_ : point estimate of the ATE.
    se_ : plug-in standard error.
    report_ : full :class:`~ecborrow.estimators.EstimateReport`.
    n_borrowed_ : number of external controls used.
    """

    def __init__(self, method: str = "aib", grid_step: int | None = None,
                 lam="cv", nu_exp: float = 2.0, e1_mode: str = "known",
                 features: str = "linear", smooth_argmin: bool = False):
        self.method = method
        self.grid_step = grid_step
        self.lam = lam
        self.nu_exp = nu_exp
        self.e1_mode = e1_mode
        self.features = features
        self.smooth_argmin = smooth_argmin

    def fit(self, X, a, y, r):
        ds = _build_dataset(X, a, y, r)
        if self.features != "linear":
            ds = ds.with_covariates(expand_features(ds.covariates,
                                                    self.features))
        report = run_method(self.method, ds, grid_step=self.grid_step,
                            lam=self.lam, nu_exp=self.nu_exp,
                            e1_mode=self.e1_mode,
                            smooth_argmin=self.smooth_argmin)
        self.report_ = report
        self.estimate_ = report.tau_hat
        self.se_ = report.se_hat
        self.n_borrowed_ = report.k_borrowed
        return self

    def predict(self):
        """Return the fitted ATE estimate."""
        check_is_fitted(self, "report_")
        return self.estimate_

    def confidence_interval(self, level: float = 0.95):
        check_is_fitted(self, "report_")
        z = {0.95: 1.96, 0.9: 1.645, 0.99: 2.576}.get(level)
        if z is None:
            raise ValueError("level must be one of 0.9, 0.95, 0.99")
        return (self.estimate_ - z * self.se_, self.estimate_ + z * self.se_)


class OutcomeCalibrator(BaseEstimator):
    """Transformer that aligns EC outcomes with the trial-control law.

    ``fit`` estimates the linear bias function on all control rows;
    ``transform`` returns the outcome vector with the estimated bias
    subtracted from every EC row.
    """

    def __init__(self, lam="cv"):
        self.lam = lam

    def fit(self, X, a, y, r):
        ds = _build_dataset(X, a, y, r)
        self.bias_fit_ = fit_bias(ds, lam=self.lam)
        self.theta_b_ = self.bias_fit_.theta_b
        return self

    def transform(self, X, a, y, r) -> np.ndarray:
        check_is_fitted(self, "bias_fit_")
        ds = _build_dataset(X, a, y, r)
        cal = calibrate(ds, self.bias_fit_)
        return apply_calibration(ds, cal).outcome.copy()

    def fit_transform(self, X, a, y, r) -> np.ndarray:
        return self.fit(X, a, y, r).transform(X, a, y, r)
