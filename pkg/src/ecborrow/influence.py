"""Per-sample influence scores of external controls on the trial-control
outcome model, and the nested candidate subsets they induce.

The score of a candidate ``z = (x, y)`` aggregates, over every trial
control, the first-order change in that control's loss when ``z`` is
infinitesimally upweighted in the fit:

    score(z) = sum_i | g_i' H^{-1} g_z |

with per-sample squared-loss gradients ``g`` and the averaged Hessian ``H``
of the fitted model.  For the linear model the gradient is
``-2 * residual * (1, x)`` and ``H`` is outcome-free, so the whole matrix
``M = [g_i' H^{-1}]_i`` is precomputed once and each candidate costs one
matrix-vector product: ``score(z) = || M g_z ||_1``.

Smaller scores mean the candidate barely perturbs the trial-control fit;
ranking ascending yields nested borrow sets (prefixes of one permutation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, split
from .nuisance import LinearFit, add_intercept, cho_solve_spd, fit_linear
from .validation import ValidationError, readonly

__all__ = [
    "InfluenceRanking",
    "InfluenceScorer",
    "gradient_at",
    "influence_score",
    "rank_and_nest",
]


def gradient_at(fit: LinearFit, z: tuple) -> np.ndarray:
    """Gradient of the squared loss at sample ``z = (x, y)``."""
    x, y = z
    x = np.asarray(x, dtype=float).ravel()
    residual = y - (fit.theta[0] + fit.theta[1:] @ x)
    return -2.0 * residual * np.concatenate([[1.0], x])


@dataclass(frozen=True)
class InfluenceRanking:
    """Scores for every EC row and the ascending-score borrow order.

    ``order`` is a permutation of the EC row indices (into the full
    dataset); its length-k prefix is the k-th nested candidate subset.
    Ties are broken by ascending EC index so the ranking is deterministic.
    """

    scores: np.ndarray
    order: np.ndarray
    ec_indices: np.ndarray
    model_hash: str

    def __post_init__(self):
        object.__setattr__(self, "scores", readonly(np.asarray(self.scores, float)))
        object.__setattr__(self, "order", readonly(np.asarray(self.order, int)))
        object.__setattr__(self, "ec_indices",
                           readonly(np.asarray(self.ec_indices, int)))

    def prefix(self, k: int) -> np.ndarray:
        if not 0 <= k <= len(self.order):
            raise ValidationError(f"k={k} outside [0, {len(self.order)}]")
        return self.order[:k]


class InfluenceScorer:
    """Precomputed scoring kernel for one control-model fit.

    Builds ``M = G_c H^{-1}`` once (N_C x (d+1)); scoring a batch of
    candidates is then a single GEMM.
    """

    def __init__(self, fit: LinearFit, control_X: np.ndarray,
                 control_y: np.ndarray):
        control_X = np.atleast_2d(np.asarray(control_X, dtype=float))
        control_y = np.asarray(control_y, dtype=float).ravel()
        X1 = add_intercept(control_X)
        residuals = control_y - X1 @ fit.theta
        _check_fit_matches(fit, X1, control_y, residuals)
        grads = -2.0 * residuals[:, None] * X1
        # H is SPD by the LinearFit invariant; apply H^{-1} via Cholesky
        self._M = cho_solve_spd(fit.hessian, grads.T).T
        self._fit = fit
        self._hash = _data_hash(fit, control_X, control_y)

    @property
    def model_hash(self) -> str:
        return self._hash

    @property
    def fit(self) -> LinearFit:
        return self._fit

    def score_batch(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        X1 = add_intercept(X)
        residuals = np.asarray(y, dtype=float).ravel() - X1 @ self._fit.theta
        grads = -2.0 * residuals[:, None] * X1
        return np.abs(self._M @ grads.T).sum(axis=0)

    def score_one(self, z: tuple) -> float:
        g = gradient_at(self._fit, z)
        return float(np.abs(self._M @ g).sum())


def _check_fit_matches(fit: LinearFit, X1: np.ndarray, y: np.ndarray,
                       residuals: np.ndarray) -> None:
    # the normal-equation gradient vanishes only on the fit's own data
    n = len(y)
    D = np.eye(len(fit.theta))
    D[0, 0] = 0.0
    grad = -2.0 * (X1.T @ residuals) + 2.0 * n * fit.ridge * (D @ fit.theta)
    scale = 1.0 + float(np.abs(y).mean()) * (1.0 + float(np.abs(X1).mean()))
    if np.linalg.norm(grad) > 1e-6 * n * scale:
        raise ValidationError(
            "influence fit does not match the supplied RCT controls"
        )


def _data_hash(fit: LinearFit, X: np.ndarray, y: np.ndarray) -> str:
    import hashlib

    h = hashlib.sha256()
    h.update(fit.fingerprint().encode())
    h.update(np.ascontiguousarray(X, dtype=float).tobytes())
    h.update(np.ascontiguousarray(y, dtype=float).tobytes())
    return h.hexdigest()[:16]


def influence_score(fit: LinearFit, rct_controls: Dataset, z: tuple,
                    scorer: InfluenceScorer | None = None) -> float:
    """Score a single candidate against the trial-control fit.

    ``fit`` must have been produced from exactly these control rows; the
    check goes through the scorer's data fingerprint.
    """
    if scorer is None:
        scorer = InfluenceScorer(fit, rct_controls.covariates,
                                 rct_controls.outcome)
    elif scorer.fit.fingerprint() != fit.fingerprint():
        raise ValidationError("scorer was built from a different fit")
    expected = _data_hash(fit, rct_controls.covariates, rct_controls.outcome)
    if scorer.model_hash != expected:
        raise ValidationError(
            "influence fit does not match the supplied RCT controls"
        )
    return scorer.score_one(z)


def rank_and_nest(ds: Dataset, fit: LinearFit | None = None,
                  ridge: float | None = None) -> InfluenceRanking:
    """Score every EC row of ``ds`` and rank ascending (ties by EC index)."""
    sp = split(ds)
    if sp.n_ec < 1:
        raise ValidationError("dataset has no EC rows to rank")
    ctrl_X = ds.covariates[sp.rct_control_indices]
    ctrl_y = ds.outcome[sp.rct_control_indices]
    if fit is None:
        fit = fit_linear(ctrl_X, ctrl_y, ridge=ridge)
    scorer = InfluenceScorer(fit, ctrl_X, ctrl_y)
    scores = scorer.score_batch(ds.covariates[sp.ec_indices],
                                ds.outcome[sp.ec_indices])
    # lexsort: primary key scores, secondary key EC index for determinism
    perm = np.lexsort((sp.ec_indices, scores))
    return InfluenceRanking(
        scores=scores,
        order=sp.ec_indices[perm],
        ec_indices=sp.ec_indices,
        model_hash=scorer.model_hash,
    )
