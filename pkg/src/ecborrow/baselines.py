"""Reference estimators: no borrowing, full borrowing, full calibrated
borrowing, and the adaptive-lasso borrowing baseline.

The adaptive-lasso baseline scores each EC by the gap between two outcome
models (one fit on ECs, one on trial controls), shrinks those gaps with a
per-sample adaptive-lasso penalty under a diagonal variance approximation,
and borrows exactly the samples whose shrunken gap is zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import apply_calibration, calibrate, fit_bias
from .data import Dataset, split
from .estimators import EstimateReport, tau_aipw, tau_combined
from .nuisance import DEFAULT_CLIP, add_intercept, assemble_nuisances, fit_linear
from .validation import ValidationError, readonly

__all__ = ["AlbFit", "nb", "fb", "fcb", "alb", "soft_threshold",
           "DEFAULT_ALB_LAMBDA_FRACTIONS"]

DEFAULT_ALB_LAMBDA_FRACTIONS = (0.01, 0.1, 1.0, 10.0)


def nb(ds: Dataset, e1_mode: str = "known", clip: float = DEFAULT_CLIP,
       ridge: float | None = None) -> EstimateReport:
    """No borrowing: trial-only AIPW."""
    nu = assemble_nuisances(ds, borrow_set=(), e1_mode=e1_mode, clip=clip,
                            ridge=ridge)
    return tau_aipw(ds, nu=nu, method="nb")


def fb(ds: Dataset, e1_mode: str = "known", clip: float = DEFAULT_CLIP,
       ridge: float | None = None) -> EstimateReport:
    """Full borrowing: combined estimator over the trial and all ECs."""
    sp = split(ds)
    rct_report = nb(ds, e1_mode=e1_mode, clip=clip, ridge=ridge)
    if sp.n_ec == 0:
        return rct_report
    nu = assemble_nuisances(ds, sp.ec_indices, e1_mode=e1_mode, clip=clip,
                            ridge=ridge)
    rep = tau_combined(ds, nu, sp.ec_indices, tau_rct=rct_report.tau_hat,
                       method="fb")
    return rep


def fcb(ds: Dataset, lam: float | str = "cv", e1_mode: str = "known",
        clip: float = DEFAULT_CLIP,
        ridge: float | None = None) -> EstimateReport:
    """Full calibrated borrowing: calibrate all ECs, then full borrowing."""
    bias = fit_bias(ds, lam=lam, clip=clip, ridge=ridge)
    ds_cal = apply_calibration(ds, calibrate(ds, bias))
    rep = fb(ds_cal, e1_mode=e1_mode, clip=clip, ridge=ridge)
    return EstimateReport(
        tau_hat=rep.tau_hat, se_hat=rep.se_hat, bias_hat=rep.bias_hat,
        mse_hat=rep.mse_hat, n_used=rep.n_used, k_borrowed=rep.k_borrowed,
        phi_values=rep.phi_values, n_clipped=rep.n_clipped, method="fcb",
    )


def soft_threshold(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


@dataclass(frozen=True)
class AlbFit:
    """Adaptive-lasso borrowing state: raw gaps, shrunken gaps, borrow set."""

    b_hat: np.ndarray
    sigma_diag: np.ndarray
    b_tilde: np.ndarray
    lam: float
    nu: float
    borrowed: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "b_hat", readonly(np.asarray(self.b_hat, float)))
        object.__setattr__(self, "sigma_diag",
                           readonly(np.asarray(self.sigma_diag, float)))
        object.__setattr__(self, "b_tilde",
                           readonly(np.asarray(self.b_tilde, float)))
        object.__setattr__(self, "borrowed",
                           readonly(np.asarray(self.borrowed, int)))


def _prediction_variance(X1: np.ndarray, gram_inv: np.ndarray,
                         sigma2: float) -> np.ndarray:
    lev = np.einsum("ij,jk,ik->i", X1, gram_inv, X1)
    return sigma2 * lev


def _alb_threshold(b_hat: np.ndarray, sigma_diag: np.ndarray, lam: float,
                   nu_exp: float) -> np.ndarray:
    if lam == 0.0:
        return np.zeros_like(b_hat)
    with np.errstate(divide="ignore"):
        return lam * sigma_diag / (2.0 * np.abs(b_hat) ** nu_exp)


def alb_solve(b_hat: np.ndarray, sigma_diag: np.ndarray, lam: float,
              nu_exp: float = 2.0) -> np.ndarray:
    """Closed-form adaptive-lasso solution under a diagonal variance.

    The objective separates per sample into
    ``(b_hat_j - b)^2 / sigma_j + lam * |b| / |b_hat_j|^nu`` whose minimizer
    is a soft threshold at ``lam * sigma_j / (2 |b_hat_j|^nu)``.  A zero raw
    gap yields an infinite threshold, hence an exact zero (borrowed).
    """
    t = _alb_threshold(b_hat, sigma_diag, lam, nu_exp)
    return soft_threshold(b_hat, t)


def alb(ds: Dataset, lambda_grid=None, nu_exp: float = 2.0,
        e1_mode: str = "known", clip: float = DEFAULT_CLIP,
        ridge: float | None = None) -> tuple[AlbFit, EstimateReport]:
    """Adaptive-lasso borrowing baseline.

    Raw per-EC gaps are ``b_hat_j = mu0_ec(X_j) - mu0(X_j)`` from outcome
    models fit separately on ECs and trial controls; their variance proxy
    is the sum of the two homoscedastic prediction variances.  The penalty
    weight is chosen from ``lambda_grid`` (default fractions of sqrt(N_E))
    by minimizing the plug-in MSE of the downstream combined estimator.
    """
    sp = split(ds)
    if sp.n_ec < 1:
        raise ValidationError("ALB needs at least one EC row")
    X = ds.covariates
    y = ds.outcome

    fit_c = fit_linear(X[sp.rct_control_indices], y[sp.rct_control_indices],
                       ridge=ridge)
    fit_e = fit_linear(X[sp.ec_indices], y[sp.ec_indices], ridge=ridge)
    Xe = X[sp.ec_indices]
    b_hat = fit_e.predict(Xe) - fit_c.predict(Xe)

    X1e = add_intercept(Xe)
    X1c = add_intercept(X[sp.rct_control_indices])
    p = X1e.shape[1]
    resid_e = y[sp.ec_indices] - fit_e.predict(Xe)
    resid_c = (y[sp.rct_control_indices]
               - fit_c.predict(X[sp.rct_control_indices]))
    dof_e = max(sp.n_ec - p, 1)
    dof_c = max(sp.n_control - p, 1)
    s2_e = float(resid_e @ resid_e) / dof_e
    s2_c = float(resid_c @ resid_c) / dof_c
    gram_e_inv = np.linalg.inv(X1e.T @ X1e + 1e-10 * np.eye(p))
    gram_c_inv = np.linalg.inv(X1c.T @ X1c + 1e-10 * np.eye(p))
    sigma_diag = (_prediction_variance(X1e, gram_e_inv, s2_e)
                  + _prediction_variance(X1e, gram_c_inv, s2_c))
    sigma_diag = np.maximum(sigma_diag, 1e-12)

    if lambda_grid is None:
        lambda_grid = [f * np.sqrt(sp.n_ec) for f in
                       DEFAULT_ALB_LAMBDA_FRACTIONS]

    rct_report = nb(ds, e1_mode=e1_mode, clip=clip)
    best: tuple[float, AlbFit, EstimateReport] | None = None
    for lam in lambda_grid:
        b_tilde = alb_solve(b_hat, sigma_diag, float(lam), nu_exp)
        borrowed = sp.ec_indices[b_tilde == 0.0]
        if borrowed.size == 0:
            rep = EstimateReport(
                tau_hat=rct_report.tau_hat, se_hat=rct_report.se_hat,
                bias_hat=0.0, mse_hat=rct_report.mse_hat,
                n_used=rct_report.n_used, k_borrowed=0,
                phi_values=rct_report.phi_values, method="alb")
        else:
            nu_set = assemble_nuisances(ds, borrowed, e1_mode=e1_mode,
                                        clip=clip, ridge=ridge)
            rep = tau_combined(ds, nu_set, borrowed,
                               tau_rct=rct_report.tau_hat, method="alb")
        fit = AlbFit(b_hat=b_hat, sigma_diag=sigma_diag, b_tilde=b_tilde,
                     lam=float(lam), nu=nu_exp, borrowed=borrowed)
        if best is None or rep.mse_hat < best[0]:
            best = (rep.mse_hat, fit, rep)
    assert best is not None
    return best[1], best[2]
