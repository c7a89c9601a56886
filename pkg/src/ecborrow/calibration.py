"""Outcome calibration of external controls before adaptive borrowing.

The conditional-mean gap between EC and trial-control outcomes is estimated
by a residual-on-residual regression over all control rows: with
``m(X) = E[Y | X, A=0]`` pooled over sources and ``pi0(X) = E[R | X, A=0]``,
the residuals ``U = Y - m(X)`` and ``V = pi0(X) - R`` satisfy
``U = b(X) V + noise``, so a linear bias function ``b(X; theta)`` is fitted
by penalized least squares on design rows ``V_i * (1, X_i)``.  Fitting on
products of residuals makes the slope estimate insensitive to error in the
pooled outcome model as long as the sampling score is consistent.

Calibrated ECs replace outcomes by ``Y - b_hat(X)``; the adaptive borrowing
scan is then rerun from scratch on the calibrated data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .borrowing import BorrowResult, KGrid, scan
from .data import Dataset, split
from .nuisance import (
    DEFAULT_CLIP,
    LinearFit,
    LogisticFit,
    add_intercept,
    cho_solve_spd,
    fit_linear,
    fit_logistic,
)
from .validation import NumericalError, ValidationError, readonly

__all__ = [
    "BiasFit",
    "CalibratedEcs",
    "fit_bias",
    "calibrate",
    "acib",
    "calibration_distance",
    "DEFAULT_LAMBDA_FRACTIONS",
]

# candidate penalty weights as fractions of the control-row count
DEFAULT_LAMBDA_FRACTIONS = (0.0, 1e-3, 1e-2, 1e-1)


@dataclass(frozen=True)
class BiasFit:
    """Fitted linear bias function with its first-stage nuisances."""

    theta_b: np.ndarray
    lam: float
    m_all: LinearFit
    pi0: LogisticFit

    def __post_init__(self):
        object.__setattr__(self, "theta_b",
                           readonly(np.asarray(self.theta_b, float)))

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.theta_b[0] + X @ self.theta_b[1:]

    def to_dict(self) -> dict:
        return {"theta_b": self.theta_b.tolist(), "lambda": self.lam}


@dataclass(frozen=True)
class CalibratedEcs:
    """Calibrated EC outcomes: original minus the estimated bias."""

    ec_indices: np.ndarray
    y_tilde: np.ndarray
    bias_at_ec: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ec_indices",
                           readonly(np.asarray(self.ec_indices, int)))
        object.__setattr__(self, "y_tilde",
                           readonly(np.asarray(self.y_tilde, float)))
        object.__setattr__(self, "bias_at_ec",
                           readonly(np.asarray(self.bias_at_ec, float)))


def _solve_bias(design: np.ndarray, u: np.ndarray, lam: float) -> np.ndarray:
    p = design.shape[1]
    D = np.eye(p)
    D[0, 0] = 0.0  # intercept unpenalized
    A = design.T @ design + lam * D
    A[np.diag_indices_from(A)] += 1e-10 * max(1.0, np.trace(A) / p)
    return cho_solve_spd(A, design.T @ u)


def _cv_lambda(design: np.ndarray, u: np.ndarray, lambdas,
               n_folds: int = 5) -> float:
    n = len(u)
    folds = np.arange(n) % n_folds  # deterministic, order-based folds
    losses = []
    for lam in lambdas:
        total = 0.0
        for f in range(n_folds):
            test = folds == f
            theta = _solve_bias(design[~test], u[~test], lam)
            resid = u[test] - design[test] @ theta
            total += float(resid @ resid)
        losses.append(total)
    return float(lambdas[int(np.argmin(losses))])


def fit_bias(ds: Dataset, lam: float | str = "cv",
             clip: float = DEFAULT_CLIP, ridge: float | None = None,
             m_model=None, pi0_model=None) -> BiasFit:
    """Estimate the linear EC outcome-bias function on all control rows.

    ``lam`` is the ridge weight on the non-intercept coefficients; ``"cv"``
    picks it from ``DEFAULT_LAMBDA_FRACTIONS`` times the control-row count
    by 5-fold cross-validation on the penalized-regression objective.
    ``m_model`` and ``pi0_model`` override the first-stage fits (callables
    ``X -> prediction``), which is how oracle tests inject true nuisances.
    """
    sp = split(ds)
    if sp.n_ec < 1:
        raise ValidationError("bias fit needs at least one EC row")
    controls = np.where(ds.treatment == 0)[0]
    X = ds.covariates[controls]
    y = ds.outcome[controls]
    r = ds.source[controls]

    if m_model is None:
        m_all = fit_linear(X, y, ridge=ridge)
        m_pred = m_all.predict(X)
    else:
        m_all = m_model if isinstance(m_model, LinearFit) else None
        m_pred = np.asarray(m_model.predict(X) if hasattr(m_model, "predict")
                            else m_model(X), dtype=float)
    if pi0_model is None:
        pi0 = fit_logistic(X, r, clip=clip)
        pi0_pred = pi0.predict_proba(X)
    else:
        pi0 = pi0_model if isinstance(pi0_model, LogisticFit) else None
        pi0_pred = np.asarray(
            pi0_model.predict_proba(X) if hasattr(pi0_model, "predict_proba")
            else pi0_model(X), dtype=float)

    u = y - m_pred
    v = pi0_pred - r
    if np.max(np.abs(v)) < 1e-8:
        raise NumericalError(
            "sampling-score residuals are all ~0; the bias function is "
            "not identified"
        )
    design = v[:, None] * add_intercept(X)
    if lam == "cv":
        lambdas = [f * len(controls) for f in DEFAULT_LAMBDA_FRACTIONS]
        lam_value = _cv_lambda(design, u, lambdas)
    else:
        lam_value = float(lam)
        if lam_value < 0:
            raise ValidationError("lambda must be nonnegative")
    theta_b = _solve_bias(design, u, lam_value)

    if m_all is None:
        m_all = fit_linear(X, y, ridge=ridge)  # stored for audit only
    if pi0 is None:
        pi0 = fit_logistic(X, r, clip=clip)
    return BiasFit(theta_b=theta_b, lam=lam_value, m_all=m_all, pi0=pi0)


def calibrate(ds: Dataset, fit: BiasFit) -> CalibratedEcs:
    """Subtract the estimated bias from every EC outcome."""
    sp = split(ds)
    ec = sp.ec_indices
    b = fit.predict(ds.covariates[ec])
    return CalibratedEcs(ec_indices=ec, y_tilde=ds.outcome[ec] - b,
                         bias_at_ec=b)


def apply_calibration(ds: Dataset, cal: CalibratedEcs) -> Dataset:
    """Dataset copy whose EC outcomes are replaced by calibrated values."""
    y = ds.outcome.copy()
    y[cal.ec_indices] = cal.y_tilde
    return ds.with_outcome(y)


def acib(ds: Dataset, lam: float | str = "cv", grid: KGrid | None = None,
         e1_mode: str = "known", clip: float = DEFAULT_CLIP,
         ridge: float | None = None, smooth_argmin: bool = False) -> BorrowResult:
    """Calibrate all ECs, re-rank, rescan: the calibrated pipeline.

    Covariates, treatment and source flags are untouched; only EC outcomes
    change.  The returned result is flagged ``calibrated``.
    """
    bias = fit_bias(ds, lam=lam, clip=clip, ridge=ridge)
    cal = calibrate(ds, bias)
    ds_cal = apply_calibration(ds, cal)
    return scan(ds_cal, grid=grid, e1_mode=e1_mode, clip=clip, ridge=ridge,
                smooth_argmin=smooth_argmin, calibrated=True)


def calibration_distance(ds: Dataset, y_tilde: np.ndarray | None = None,
                         lam: float | str = "cv",
                         mu0: LinearFit | None = None) -> tuple[float, float]:
    """Euclidean distances of raw and calibrated EC outcomes to the ideal.

    The ideal EC outcome is the trial-control model prediction at each EC
    covariate vector.  Returns ``(d_raw, d_calibrated)``.
    """
    sp = split(ds)
    if mu0 is None:
        mu0 = fit_linear(ds.covariates[sp.rct_control_indices],
                         ds.outcome[sp.rct_control_indices])
    ideal = mu0.predict(ds.covariates[sp.ec_indices])
    if y_tilde is None:
        cal = calibrate(ds, fit_bias(ds, lam=lam))
        y_tilde = cal.y_tilde
    d_raw = float(np.sqrt(np.sum((ideal - ds.outcome[sp.ec_indices]) ** 2)))
    d_cal = float(np.sqrt(np.sum((ideal - np.asarray(y_tilde)) ** 2)))
    return d_raw, d_cal
