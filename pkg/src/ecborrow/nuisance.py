"""Nuisance models: squared-loss linear outcome regressions and logistic
propensity/sampling scores, plus the bundle used by the combined estimator.

The outcome model is the empirical risk minimizer of the squared loss over
an intercept-augmented design, optionally ridge-stabilized.  Its averaged
Hessian is stored because the influence scorer needs it.  Propensity and
sampling scores are logistic fits via Newton/IRLS with probability clipping.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .data import Dataset, split
from .validation import (
    NumericalError,
    ValidationError,
    as_binary_vector,
    as_float_matrix,
    as_float_vector,
    check_consistent_rows,
    readonly,
)

__all__ = [
    "LinearFit",
    "LogisticFit",
    "ConstantProbability",
    "NuisanceSet",
    "fit_linear",
    "fit_logistic",
    "predict_outcome",
    "assemble_nuisances",
    "add_intercept",
    "expand_features",
    "DEFAULT_CLIP",
]

DEFAULT_CLIP = 0.01
MAX_LOGISTIC_ITER = 200
SEPARATION_NORM = 1e4


def add_intercept(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.column_stack([np.ones(X.shape[0]), X])


def expand_features(X: np.ndarray, kind: str = "linear") -> np.ndarray:
    """Basis expansion applied before any model fit.

    ``linear`` is the identity; ``quadratic`` appends per-column squares,
    a cheap stand-in for a curved (exponential-type) response surface.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if kind == "linear":
        return X
    if kind == "quadratic":
        return np.column_stack([X, X**2])
    raise ValidationError(f"unknown feature expansion {kind!r}")


@dataclass(frozen=True)
class LinearFit:
    """Fitted squared-loss linear outcome model.

    ``theta`` holds intercept-first coefficients; ``hessian`` is the averaged
    loss Hessian (2/N) X'X + 2*ridge*D with D the identity minus its
    intercept entry.  ``ridge`` of 0 means plain OLS.
    """

    theta: np.ndarray
    hessian: np.ndarray
    ridge: float
    n_fit: int

    def __post_init__(self):
        object.__setattr__(self, "theta", readonly(np.asarray(self.theta, float)))
        object.__setattr__(self, "hessian", readonly(np.asarray(self.hessian, float)))

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.theta[0] + X @ self.theta[1:]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.theta.tobytes())
        h.update(self.hessian.tobytes())
        h.update(np.float64(self.ridge).tobytes())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "model": "linear",
            "theta": self.theta.tolist(),
            "ridge": self.ridge,
            "n_fit": self.n_fit,
        }


@dataclass(frozen=True)
class LogisticFit:
    """Fitted logistic model with clipped probability predictions."""

    beta: np.ndarray
    converged: bool
    iterations: int
    clip: float

    def __post_init__(self):
        object.__setattr__(self, "beta", readonly(np.asarray(self.beta, float)))

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        eta = self.beta[0] + X @ self.beta[1:]
        p = _sigmoid(eta)
        return np.clip(p, self.clip, 1.0 - self.clip)

    def to_dict(self) -> dict:
        return {
            "model": "logistic",
            "beta": self.beta.tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
            "clip": self.clip,
        }


@dataclass(frozen=True)
class ConstantProbability:
    """Degenerate propensity evaluator returning a fixed probability.

    Used for the known randomization ratio and for the sampling score when
    no externals are borrowed (probability one by convention).
    """

    p: float

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.full(X.shape[0], self.p)

    def to_dict(self) -> dict:
        return {"model": "constant", "p": self.p}


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


def default_ridge(X1: np.ndarray) -> float:
    # 1e-6 * trace(H) / p with H = (2/N) X'X; numerical stabilizer only
    n, p = X1.shape
    tr = 2.0 * np.einsum("ij,ij->", X1, X1) / n
    return 1e-6 * tr / p


def fit_linear(X, y, ridge: float | None = None) -> LinearFit:
    """Squared-loss ERM with intercept; ridge excludes the intercept.

    The objective is mean squared error plus ``ridge * ||theta[1:]||^2``.
    Raises :class:`NumericalError` on a rank-deficient design with ridge=0.
    """
    X = as_float_matrix(X, "X")
    y = as_float_vector(y, "y")
    n = check_consistent_rows(X, y, names=("X", "y"))
    p = X.shape[1] + 1
    if n < p + 1:
        raise ValidationError(f"need at least d+2={p + 1} rows to fit, got {n}")
    X1 = add_intercept(X)
    if ridge is None:
        ridge = default_ridge(X1)
    if ridge < 0:
        raise ValidationError("ridge must be nonnegative")
    D = np.eye(p)
    D[0, 0] = 0.0
    gram = X1.T @ X1
    A = gram + n * ridge * D
    try:
        theta = cho_solve_spd(A, X1.T @ y)
    except np.linalg.LinAlgError:
        raise NumericalError(
            "rank-deficient design; supply a positive ridge"
        ) from None
    hessian = (2.0 / n) * gram + 2.0 * ridge * D
    return LinearFit(theta=theta, hessian=hessian, ridge=float(ridge), n_fit=n)


def cho_solve_spd(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve A X = B for symmetric positive definite A via Cholesky.

    Raises ``LinAlgError`` when A is numerically singular, which plain
    Cholesky can miss through rounding.
    """
    c = np.linalg.cholesky(A)
    diag = np.diag(c)
    if diag.min() <= np.sqrt(np.finfo(float).eps) * diag.max():
        raise np.linalg.LinAlgError("matrix is numerically singular")
    return np.linalg.solve(c.T, np.linalg.solve(c, B))


def fit_logistic(X, labels, clip: float = DEFAULT_CLIP,
                 beta0: np.ndarray | None = None) -> LogisticFit:
    """Logistic regression by Newton/IRLS, capped at 200 iterations.

    Both classes must be present.  Perfect separation is reported through
    ``converged=False`` (detected via a diverging coefficient norm); the fit
    is still usable because predictions are clipped.
    """
    X = as_float_matrix(X, "X")
    labels = as_binary_vector(labels, "labels")
    check_consistent_rows(X, labels, names=("X", "labels"))
    if labels.min() == labels.max():
        raise ValidationError("labels contain a single class")
    if not 0.0 < clip < 0.5:
        raise ValidationError("clip must lie in (0, 0.5)")
    X1 = add_intercept(X)
    p = X1.shape[1]
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, float).copy()
    converged = False
    it = 0
    for it in range(1, MAX_LOGISTIC_ITER + 1):
        mu = _sigmoid(X1 @ beta)
        grad = X1.T @ (labels - mu)
        if np.linalg.norm(grad) < 1e-6:
            converged = True
            break
        w = np.maximum(mu * (1.0 - mu), 1e-10)
        H = X1.T @ (w[:, None] * X1)
        H[np.diag_indices_from(H)] += 1e-10
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
        beta += step
        if np.linalg.norm(beta) > SEPARATION_NORM:
            break
    if converged:
        # a vanishing gradient with numerically saturated fitted
        # probabilities is separation, not a valid interior optimum
        p = _sigmoid(X1 @ beta)
        if p[labels == 1].min() > 1 - 1e-4 and p[labels == 0].max() < 1e-4:
            converged = False
    return LogisticFit(beta=beta, converged=converged, iterations=it, clip=clip)


def predict_outcome(fit: LinearFit, x) -> float:
    """Evaluate a fitted outcome model at a single covariate vector."""
    x = np.asarray(x, dtype=float).ravel()
    if len(x) != len(fit.theta) - 1:
        raise ValidationError(
            f"covariate length {len(x)} does not match fit dimension "
            f"{len(fit.theta) - 1}"
        )
    return float(fit.theta[0] + fit.theta[1:] @ x)


@dataclass(frozen=True)
class NuisanceSet:
    """All fitted nuisances needed by the combined estimator.

    ``mu0``/``mu1`` are trial-arm outcome models, ``m0`` pools trial controls
    with the borrowed externals, ``m1`` coincides with ``mu1`` by definition.
    ``pi`` is the sampling score on trial plus borrowed rows and ``q_hat``
    the exact trial fraction of that pool.
    """

    mu0: LinearFit
    mu1: LinearFit
    m0: LinearFit
    m1: LinearFit
    e1: LogisticFit | ConstantProbability
    pi: LogisticFit | ConstantProbability
    q_hat: float
    n_rct: int
    n_borrowed: int
    clip: float

    def to_dict(self) -> dict:
        return {
            "mu0": self.mu0.to_dict(),
            "mu1": self.mu1.to_dict(),
            "m0": self.m0.to_dict(),
            "e1": self.e1.to_dict(),
            "pi": self.pi.to_dict(),
            "q_hat": self.q_hat,
            "n_rct": self.n_rct,
            "n_borrowed": self.n_borrowed,
        }


def assemble_nuisances(
    ds: Dataset,
    borrow_set,
    e1_mode: str = "known",
    clip: float = DEFAULT_CLIP,
    ridge: float | None = None,
    base: NuisanceSet | None = None,
    pi_warm_start: np.ndarray | None = None,
) -> NuisanceSet:
    """Fit every nuisance for the trial combined with ``borrow_set`` ECs.

    ``e1_mode`` is ``"known"`` (constant treated share, exact under complete
    randomization) or ``"fitted"`` (logistic on trial rows).  With an empty
    borrow set the sampling score is identically one, the pooled control
    model equals the trial-control model and ``q_hat`` is one, which makes
    the combined estimator collapse to the trial-only AIPW estimator.

    ``base`` reuses the trial-only fits (mu0, mu1, e1) from a previous call
    on the same dataset; only the borrow-set-dependent pieces are refit.
    """
    sp = split(ds)
    borrow = np.asarray(borrow_set, dtype=int)
    if borrow.size and not np.isin(borrow, sp.ec_indices).all():
        raise ValidationError("borrow_set must be a subset of the EC indices")

    X = ds.covariates
    y = ds.outcome

    if base is not None:
        mu0, mu1, e1 = base.mu0, base.mu1, base.e1
    else:
        mu0 = fit_linear(X[sp.rct_control_indices], y[sp.rct_control_indices],
                         ridge=ridge)
        treated = np.setdiff1d(sp.rct_indices, sp.rct_control_indices)
        mu1 = fit_linear(X[treated], y[treated], ridge=ridge)
        if e1_mode == "known":
            e1 = ConstantProbability(len(treated) / sp.n_rct)
        elif e1_mode == "fitted":
            e1 = fit_logistic(X[sp.rct_indices],
                              ds.treatment[sp.rct_indices], clip=clip)
        else:
            raise ValidationError(f"unknown e1_mode {e1_mode!r}")

    if borrow.size == 0:
        m0 = mu0
        pi = ConstantProbability(1.0)
        q_hat = 1.0
    else:
        pooled = np.concatenate([sp.rct_control_indices, borrow])
        m0 = fit_linear(X[pooled], y[pooled], ridge=ridge)
        comb = np.concatenate([sp.rct_indices, borrow])
        pi = fit_logistic(X[comb], ds.source[comb], clip=clip,
                          beta0=pi_warm_start)
        q_hat = sp.n_rct / (sp.n_rct + borrow.size)

    return NuisanceSet(
        mu0=mu0, mu1=mu1, m0=m0, m1=mu1, e1=e1, pi=pi,
        q_hat=q_hat, n_rct=sp.n_rct, n_borrowed=int(borrow.size), clip=clip,
    )
