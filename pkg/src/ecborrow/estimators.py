"""Treatment-effect estimators: trial-only AIPW and the semiparametric
combined estimator over trial plus borrowed external controls, together
with the plug-in bias/variance/MSE estimates used for subset selection.

The combined estimator averages, over the pooled rows, the non-centralized
efficient influence function

    phi_i = (pi(X_i)/q) * ( R_i A_i (Y_i - m1(X_i)) / e_S(X_i)
                            - (1 - A_i)(Y_i - m0(X_i)) / (1 - e_S(X_i)) )
            + (R_i/q) * (m1(X_i) - m0(X_i))

with e_S = e1 * pi and q the exact trial fraction of the pool.  Its plug-in
variance is the sample variance of the phi values over n pooled rows; the
plug-in bias is the gap to the trial-only AIPW estimate, and the estimated
MSE is bias^2 plus variance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset, split
from .nuisance import NuisanceSet, assemble_nuisances
from .validation import NumericalError, ValidationError, readonly

__all__ = ["EstimateReport", "tau_aipw", "tau_combined", "bias_hat", "mse_hat"]


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate with plug-in uncertainty and audit trail.

    ``phi_values`` are the per-row influence-function evaluations backing
    ``se_hat``; ``n_clipped`` counts rows where a propensity hit the clip
    bounds (positivity diagnostics).
    """

    tau_hat: float
    se_hat: float
    bias_hat: float
    mse_hat: float
    n_used: int
    k_borrowed: int
    phi_values: np.ndarray
    n_clipped: int = 0
    method: str = ""

    def __post_init__(self):
        object.__setattr__(self, "phi_values",
                           readonly(np.asarray(self.phi_values, float)))

    @classmethod
    def from_phi(cls, phi: np.ndarray, tau_rct: float | None = None,
                 k_borrowed: int = 0, n_clipped: int = 0,
                 method: str = "") -> "EstimateReport":
        phi = np.asarray(phi, dtype=float)
        n = len(phi)
        tau = float(phi.mean())
        se = float(np.sqrt(phi.var(ddof=1) / n))
        bias = 0.0 if tau_rct is None else tau - tau_rct
        return cls(
            tau_hat=tau,
            se_hat=se,
            bias_hat=bias,
            mse_hat=bias * bias + se * se,
            n_used=n,
            k_borrowed=k_borrowed,
            phi_values=phi,
            n_clipped=n_clipped,
            method=method,
        )

    def summary(self) -> str:
        return (
            f"est={self.tau_hat:.4f} se={self.se_hat:.4f} "
            f"bias_hat={self.bias_hat:.4f} mse_hat={self.mse_hat:.5f} "
            f"n_ecs={self.k_borrowed}"
        )

    def to_dict(self) -> dict:
        return {
            "tau_hat": self.tau_hat,
            "se_hat": self.se_hat,
            "bias_hat": self.bias_hat,
            "mse_hat": self.mse_hat,
            "n_used": self.n_used,
            "k_borrowed": self.k_borrowed,
            "n_clipped": self.n_clipped,
            "method": self.method,
            "ci95": [self.tau_hat - 1.96 * self.se_hat,
                     self.tau_hat + 1.96 * self.se_hat],
            "phi_values": self.phi_values.tolist(),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def tau_aipw(ds: Dataset, nu: NuisanceSet | None = None,
             e1_mode: str = "known", method: str = "nb") -> EstimateReport:
    """Doubly robust AIPW estimate of the ATE on the trial rows only."""
    if nu is None:
        nu = assemble_nuisances(ds, borrow_set=(), e1_mode=e1_mode)
    sp = split(ds)
    rct = sp.rct_indices
    X = ds.covariates[rct]
    a = ds.treatment[rct]
    y = ds.outcome[rct]
    e1 = nu.e1.predict_proba(X)
    if np.any(e1 <= 0.0) or np.any(e1 >= 1.0):
        raise NumericalError("propensity e1 outside (0, 1)")
    mu1 = nu.mu1.predict(X)
    mu0 = nu.mu0.predict(X)
    phi = a * (y - mu1) / e1 - (1 - a) * (y - mu0) / (1 - e1) + mu1 - mu0
    return EstimateReport.from_phi(phi, tau_rct=None, k_borrowed=0,
                                   method=method)


def tau_combined(ds: Dataset, nu: NuisanceSet, borrow_set,
                 tau_rct: float | None = None,
                 method: str = "combined") -> EstimateReport:
    """Efficient combined estimate over trial rows plus ``borrow_set`` ECs.

    ``nu`` must have been assembled on exactly this pool.  ``tau_rct``
    seeds the plug-in bias estimate (gap to the trial-only estimate).
    """
    sp = split(ds)
    borrow = np.asarray(borrow_set, dtype=int)
    if borrow.size != nu.n_borrowed:
        raise ValidationError(
            f"nuisances were assembled for {nu.n_borrowed} borrowed rows, "
            f"got {borrow.size}"
        )
    comb = np.concatenate([sp.rct_indices, borrow]) if borrow.size else sp.rct_indices
    X = ds.covariates[comb]
    a = ds.treatment[comb]
    y = ds.outcome[comb]
    r = ds.source[comb]
    q = nu.q_hat
    pi = nu.pi.predict_proba(X)
    e1 = nu.e1.predict_proba(X)
    e_s = e1 * pi
    lo, hi = nu.clip, 1.0 - nu.clip
    n_clipped = int(np.count_nonzero((e_s < lo) | (e_s > hi) |
                                     (pi < lo) | (pi > hi)))
    e_s = np.clip(e_s, lo, hi)
    if np.any(e_s <= 0.0) or np.any(e_s >= 1.0):
        raise NumericalError(
            "pooled propensity collapsed to 0 or 1 after clipping "
            "(positivity failure)"
        )
    m1 = nu.m1.predict(X)
    m0 = nu.m0.predict(X)
    phi = (pi / q) * (r * a * (y - m1) / e_s - (1 - a) * (y - m0) / (1 - e_s))
    phi += (r / q) * (m1 - m0)
    return EstimateReport.from_phi(phi, tau_rct=tau_rct,
                                   k_borrowed=int(borrow.size),
                                   n_clipped=n_clipped, method=method)


def bias_hat(tau_s: EstimateReport, tau_rct: EstimateReport) -> float:
    """Plug-in borrowing bias: combined estimate minus trial-only estimate."""
    return tau_s.tau_hat - tau_rct.tau_hat


def mse_hat(report: EstimateReport) -> float:
    """Estimated MSE: squared plug-in bias plus plug-in variance."""
    return report.bias_hat**2 + report.se_hat**2
