"""Synthetic data generators and the seeded replication harness.

Covariates are iid truncated standard normals on [-2, 2].  Trial membership
is assigned by weighted sampling without replacement with logistic weights
in the covariates, hitting the configured trial size exactly while keeping
the covariate shift between sources.  Treatment within the trial is
completely random with an exact treated count.  Outcomes follow either a
linear or an exponential (nonlinear) response, with the EC arm shifted by
``delta`` times a linear trend to dial the source inconcurrency.

Replications are independent: each gets an RNG stream derived from
``(seed, rep_index)``, so results do not depend on execution order or
parallelism.  The study-level coefficient draw is fixed by ``beta_seed``,
making the true effect a constant of the study; it is recovered by Monte
Carlo over a large trial population.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .baselines import alb, fb, fcb, nb
from .borrowing import KGrid, adaptive_borrow
from .calibration import acib
from .data import Dataset
from .estimators import EstimateReport
from .nuisance import expand_features
from .validation import ValidationError, readonly

__all__ = [
    "DgpConfig",
    "ReplicationReport",
    "sample_truncated_normal",
    "generate",
    "true_ate",
    "replicate",
    "run_method",
    "example1_dataset",
    "example2_dataset",
    "two_cluster_dataset",
    "synthetic_nsw_psid",
    "METHODS",
]

TRUTH_TRIAL_ROWS = 100_000


def sample_truncated_normal(n: int, d: int, rng: np.random.Generator,
                            bound: float = 2.0) -> np.ndarray:
    """iid standard-normal draws rejected outside [-bound, bound]."""
    out = rng.standard_normal((n, d))
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


def _solve_pi_intercept(scores: np.ndarray, target: float) -> float:
    # monotone in the intercept; bisect until the mean probability matches
    lo, hi = -30.0, 30.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _sigmoid(mid + scores).mean() > target:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class DgpConfig:
    """Simulation design parameters.

    ``pi_slope`` sets the per-covariate log-odds tilt of trial membership;
    the intercept is solved per draw so the mean weight matches the trial
    fraction.  ``delta`` scales the EC outcome shift.  ``beta_seed`` fixes
    the outcome-coefficient draw across replications; ``seed`` drives
    everything else.
    """

    mechanism: str = "linear"
    d: int = 8
    n_rct: int = 300
    n_treated: int = 200
    n_ec: int = 1000
    delta: float = 0.0
    seed: int = 0
    beta_seed: int = 0
    noise_rct: float = 1.0
    noise_ec: float = 1.2
    pi_slope: float = 0.42
    effect_intercept: float = 0.1
    effect_slope: float = 0.1

    def __post_init__(self):
        if self.mechanism not in ("linear", "nonlinear"):
            raise ValidationError(f"unknown mechanism {self.mechanism!r}")
        if not (1 <= self.n_treated < self.n_rct):
            raise ValidationError("need 1 <= n_treated < n_rct")
        if self.d < 1 or self.n_ec < 0 or self.delta < 0:
            raise ValidationError("d >= 1, n_ec >= 0, delta >= 0 required")

    @property
    def trend_slope(self) -> float:
        # per-covariate EC shift slope; doubled under the curved response
        return 0.05 if self.mechanism == "linear" else 0.1

    def beta(self) -> np.ndarray:
        rng = np.random.default_rng([int(self.beta_seed), 0xBE7A])
        if self.mechanism == "linear":
            return rng.uniform(2.0, 3.0, self.d)
        return rng.uniform(-1.0, 1.0, self.d)

    def study_key(self) -> tuple:
        return (self.mechanism, self.d, self.n_rct, self.n_treated,
                self.n_ec, int(self.beta_seed), self.pi_slope,
                self.effect_intercept, self.effect_slope)


def _effects(cfg: DgpConfig, X: np.ndarray, beta: np.ndarray) -> np.ndarray:
    lin = cfg.effect_intercept + cfg.effect_slope * X.sum(axis=1)
    if cfg.mechanism == "linear":
        return lin
    base = X @ beta
    return np.exp(base + lin) - np.exp(base)


def _assign_sources(cfg: DgpConfig, X: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
    n_total = X.shape[0]
    scores = cfg.pi_slope * X.sum(axis=1)
    c = _solve_pi_intercept(scores, cfg.n_rct / n_total)
    weights = _sigmoid(c + scores)
    idx = rng.choice(n_total, size=cfg.n_rct, replace=False,
                     p=weights / weights.sum())
    r = np.zeros(n_total)
    r[idx] = 1.0
    return r


def generate(cfg: DgpConfig, rep: int | None = None) -> Dataset:
    """Draw one dataset; ``rep`` derives an independent per-replication
    stream from the config seed."""
    entropy = [int(cfg.seed)] if rep is None else [int(cfg.seed), int(rep)]
    rng = np.random.default_rng(entropy)
    beta = cfg.beta()
    n_total = cfg.n_rct + cfg.n_ec
    X = sample_truncated_normal(n_total, cfg.d, rng)
    r = _assign_sources(cfg, X, rng)
    rct_idx = np.where(r == 1)[0]
    a = np.zeros(n_total)
    a[rng.permutation(rct_idx)[:cfg.n_treated]] = 1.0

    if cfg.mechanism == "linear":
        base = X @ beta
        treated_mean = base + _effects(cfg, X, beta)
    else:
        base = np.exp(X @ beta)
        treated_mean = base + _effects(cfg, X, beta)
    trend = cfg.trend_slope * X.sum(axis=1)

    y = np.empty(n_total)
    is_rct = r == 1
    is_trt = a == 1
    ctrl = is_rct & ~is_trt
    ec = ~is_rct
    y[ctrl] = base[ctrl] + rng.normal(0.0, cfg.noise_rct, int(ctrl.sum()))
    y[is_trt] = treated_mean[is_trt] + rng.normal(0.0, cfg.noise_rct,
                                                  int(is_trt.sum()))
    y[ec] = base[ec] + cfg.delta * trend[ec] + rng.normal(
        0.0, cfg.noise_ec, int(ec.sum()))
    return Dataset(covariates=X, treatment=a, outcome=y, source=r)


@lru_cache(maxsize=32)
def _true_ate_cached(key: tuple) -> float:
    (mechanism, d, n_rct, n_treated, n_ec, beta_seed, pi_slope,
     eff_int, eff_slope) = key
    cfg = DgpConfig(mechanism=mechanism, d=d, n_rct=n_rct,
                    n_treated=n_treated, n_ec=n_ec, beta_seed=beta_seed,
                    pi_slope=pi_slope, effect_intercept=eff_int,
                    effect_slope=eff_slope)
    beta = cfg.beta()
    rng = np.random.default_rng([0x7A07, int(beta_seed)])
    reps = math.ceil(TRUTH_TRIAL_ROWS / cfg.n_rct)
    total = 0.0
    count = 0
    for _ in range(reps):
        X = sample_truncated_normal(cfg.n_rct + cfg.n_ec, cfg.d, rng)
        r = _assign_sources(cfg, X, rng)
        eff = _effects(cfg, X[r == 1], beta)
        total += float(eff.sum())
        count += len(eff)
    return total / count


def true_ate(cfg: DgpConfig) -> float:
    """Monte Carlo truth over a large simulated trial population.

    Averages the individual effect over trial rows drawn under the same
    source-assignment mechanism, so the covariate tilt of the trial
    population is reflected.  Deterministic per (mechanism, beta_seed,
    design sizes); independent of ``seed`` and ``delta``.
    """
    return _true_ate_cached(cfg.study_key())


def _features_for(cfg: DgpConfig, features: str | None) -> str:
    if features is not None:
        return features
    return "linear" if cfg.mechanism == "linear" else "quadratic"


def run_method(method: str, ds: Dataset, grid_step: int | None = 50,
               lam: float | str = "cv", nu_exp: float = 2.0,
               e1_mode: str = "known", ridge: float | None = None,
               smooth_argmin: bool = False) -> EstimateReport:
    """Run one named estimator on a dataset and return its report."""
    if method == "nb":
        return nb(ds, e1_mode=e1_mode, ridge=ridge)
    if method == "fb":
        return fb(ds, e1_mode=e1_mode, ridge=ridge)
    if method == "fcb":
        return fcb(ds, lam=lam, e1_mode=e1_mode, ridge=ridge)
    if method == "alb":
        return alb(ds, nu_exp=nu_exp, e1_mode=e1_mode, ridge=ridge)[1]
    if method == "aib":
        res = adaptive_borrow(ds, grid_step=grid_step, e1_mode=e1_mode,
                              ridge=ridge, smooth_argmin=smooth_argmin)
        return res.final
    if method == "acib":
        grid = KGrid.from_step(int((ds.source == 0).sum()), grid_step)
        res = acib(ds, lam=lam, grid=grid, e1_mode=e1_mode, ridge=ridge,
                   smooth_argmin=smooth_argmin)
        return res.final
    raise ValidationError(f"unknown method {method!r}")


METHODS = ("nb", "fb", "fcb", "alb", "aib", "acib")


@dataclass(frozen=True)
class ReplicationReport:
    """Aggregated metrics for one method over seeded replications.

    ``sd_empirical``/``mse_empirical`` are across-replication dispersion
    against the Monte Carlo truth; the ``*_estimated_mean`` fields average
    the per-replication plug-in formulas instead.
    """

    method: str
    est_mean: float
    bias_abs: float
    sd_empirical: float
    sd_estimated_mean: float
    mse_empirical: float
    mse_estimated_mean: float
    n_ecs_modal: int
    n_reps: int
    tau_true: float
    tau_provenance: str = "monte-carlo"
    n_failures: int = 0
    estimates: np.ndarray = field(default_factory=lambda: np.empty(0))
    se_hats: np.ndarray = field(default_factory=lambda: np.empty(0))
    k_borrowed: np.ndarray = field(default_factory=lambda: np.empty(0, int))

    def __post_init__(self):
        object.__setattr__(self, "estimates",
                           readonly(np.asarray(self.estimates, float)))
        object.__setattr__(self, "se_hats",
                           readonly(np.asarray(self.se_hats, float)))
        object.__setattr__(self, "k_borrowed",
                           readonly(np.asarray(self.k_borrowed, int)))

    def to_row(self) -> dict:
        return {
            "method": self.method,
            "est_mean": self.est_mean,
            "bias_abs": self.bias_abs,
            "sd_empirical": self.sd_empirical,
            "sd_estimated_mean": self.sd_estimated_mean,
            "mse_empirical": self.mse_empirical,
            "mse_estimated_mean": self.mse_estimated_mean,
            "n_ecs_modal": self.n_ecs_modal,
            "n_reps": self.n_reps,
            "tau_true": self.tau_true,
            "tau_provenance": self.tau_provenance,
            "n_failures": self.n_failures,
        }


def _modal(values) -> int:
    vals, counts = np.unique(np.asarray(values, dtype=int), return_counts=True)
    return int(vals[np.argmax(counts)])  # ties resolve to the smallest value


def _one_rep(cfg: DgpConfig, rep: int, methods, features: str | None,
             grid_step: int | None, lam, nu_exp, e1_mode,
             smooth_argmin) -> dict:
    ds = generate(cfg, rep=rep)
    kind = _features_for(cfg, features)
    if kind != "linear":
        ds = ds.with_covariates(expand_features(ds.covariates, kind))
    out = {}
    for m in methods:
        try:
            rep_out = run_method(m, ds, grid_step=grid_step, lam=lam,
                                 nu_exp=nu_exp, e1_mode=e1_mode,
                                 smooth_argmin=smooth_argmin)
            out[m] = (rep_out.tau_hat, rep_out.se_hat, rep_out.mse_hat,
                      rep_out.k_borrowed)
        except Exception as e:  # noqa: BLE001 - failures are aggregated
            out[m] = e
    return out


def replicate(cfg: DgpConfig, methods=METHODS, n_reps: int = 200,
              n_jobs: int = 1, features: str | None = None,
              grid_step: int | None = 50, lam: float | str = "cv",
              nu_exp: float = 2.0, e1_mode: str = "known",
              smooth_argmin: bool = False,
              max_failure_rate: float = 0.05) -> list[ReplicationReport]:
    """Run every method on ``n_reps`` seeded replications and aggregate.

    All methods see the same generated datasets (paired comparisons).
    Failed replications are excluded per method and counted; the run
    aborts if any method fails on more than ``max_failure_rate``.
    """
    if n_reps < 1:
        raise ValidationError("n_reps must be >= 1")
    methods = tuple(methods)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValidationError(f"unknown method(s): {sorted(unknown)}")

    args = (methods, features, grid_step, lam, nu_exp, e1_mode, smooth_argmin)
    if n_jobs > 1:
        from joblib import Parallel, delayed

        rows = Parallel(n_jobs=n_jobs, backend="loky")(
            delayed(_one_rep)(cfg, rep, *args) for rep in range(n_reps)
        )
    else:
        rows = [_one_rep(cfg, rep, *args) for rep in range(n_reps)]

    tau = true_ate(cfg)
    reports = []
    for m in methods:
        taus, ses, mses, ks = [], [], [], []
        failures = 0
        for row in rows:
            cell = row[m]
            if isinstance(cell, Exception):
                failures += 1
                continue
            taus.append(cell[0])
            ses.append(cell[1])
            mses.append(cell[2])
            ks.append(cell[3])
        if failures > max_failure_rate * n_reps:
            raise RuntimeError(
                f"method {m!r} failed on {failures}/{n_reps} replications"
            )
        taus_a = np.asarray(taus)
        ses_a = np.asarray(ses)
        reports.append(ReplicationReport(
            method=m,
            est_mean=float(taus_a.mean()),
            bias_abs=float(abs(taus_a.mean() - tau)),
            sd_empirical=float(taus_a.std(ddof=1)) if len(taus_a) > 1 else 0.0,
            sd_estimated_mean=float(ses_a.mean()),
            mse_empirical=float(((taus_a - tau) ** 2).mean()),
            mse_estimated_mean=float(np.mean(mses)),
            n_ecs_modal=_modal(ks),
            n_reps=len(taus),
            tau_true=tau,
            n_failures=failures,
            estimates=taus_a,
            se_hats=ses_a,
            k_borrowed=np.asarray(ks, dtype=int),
        ))
    return reports


# ---------------------------------------------------------------------------
# fixed synthetic designs used in tests and diagnostics


def example1_dataset(rng: np.random.Generator, n_control: int = 100,
                     n_ec: int = 200, with_outliers: bool = True,
                     n_treated: int = 100) -> Dataset:
    """One-covariate design with EC line offset and planted outliers.

    Trial controls follow y = 2x; ECs follow y = -0.9 + 2.5x with noisier
    outcomes, plus five outliers at x in {1.6..2.0}, y = 0.5.
    """
    x_t = rng.uniform(0, 2, n_treated)
    x_c = rng.uniform(0, 2, n_control)
    x_e = rng.uniform(0, 2, n_ec)
    y_t = 2.0 * x_t + 1.0 + rng.normal(0, 0.2, n_treated)
    y_c = 2.0 * x_c + rng.normal(0, 0.2, n_control)
    y_e = -0.9 + 2.5 * x_e + rng.normal(0, 0.5, n_ec)
    if with_outliers:
        x_out = np.array([1.6, 1.7, 1.8, 1.9, 2.0])
        y_out = np.full(5, 0.5)
        x_e = np.concatenate([x_e, x_out])
        y_e = np.concatenate([y_e, y_out])
    x = np.concatenate([x_t, x_c, x_e]).reshape(-1, 1)
    y = np.concatenate([y_t, y_c, y_e])
    a = np.concatenate([np.ones(n_treated), np.zeros(len(x_c) + len(x_e))])
    r = np.concatenate([np.ones(n_treated + n_control), np.zeros(len(x_e))])
    return Dataset(covariates=x, treatment=a, outcome=y, source=r)


def example2_dataset(case: str, rng: np.random.Generator,
                     n_control: int = 100, n_ec: int = 200,
                     n_treated: int = 100) -> Dataset:
    """One-covariate calibration cases: linear (a) or quadratic (b) EC gap."""
    x_t = rng.uniform(0, 2, n_treated)
    x_c = rng.uniform(0, 2, n_control)
    x_e = rng.uniform(0, 2, n_ec)
    y_t = 2.0 * x_t + 1.0 + rng.normal(0, 0.2, n_treated)
    y_c = 2.0 * x_c + rng.normal(0, 0.2, n_control)
    if case == "a":
        y_e = -2.0 + 3.0 * x_e + rng.normal(0, 0.4, n_ec)
    elif case == "b":
        y_e = x_e**2 - 2.0 * x_e + 2.0 + rng.normal(0, 0.4, n_ec)
    else:
        raise ValidationError("case must be 'a' or 'b'")
    x = np.concatenate([x_t, x_c, x_e]).reshape(-1, 1)
    y = np.concatenate([y_t, y_c, y_e])
    a = np.concatenate([np.ones(n_treated), np.zeros(n_control + n_ec)])
    r = np.concatenate([np.ones(n_treated + n_control), np.zeros(n_ec)])
    return Dataset(covariates=x, treatment=a, outcome=y, source=r)


def two_cluster_dataset(rng: np.random.Generator, d: int = 4,
                        n_rct: int = 1200, n_treated: int = 800,
                        n_good: int = 300, n_shifted: int = 200,
                        shift: float = 8.0) -> Dataset:
    """Exchangeable EC cluster plus a far-shifted cluster.

    The first ``n_good`` ECs share the trial-control outcome law; the rest
    carry a constant outcome shift large relative to the noise.
    """
    beta = np.linspace(1.0, 2.0, d)
    X_r = sample_truncated_normal(n_rct, d, rng)
    a_r = np.zeros(n_rct)
    a_r[rng.permutation(n_rct)[:n_treated]] = 1.0
    y_r = X_r @ beta + a_r * 1.0 + rng.normal(0, 1.0, n_rct)
    X_g = sample_truncated_normal(n_good, d, rng)
    y_g = X_g @ beta + rng.normal(0, 1.0, n_good)
    X_s = sample_truncated_normal(n_shifted, d, rng)
    y_s = X_s @ beta + shift + rng.normal(0, 1.0, n_shifted)
    X = np.vstack([X_r, X_g, X_s])
    y = np.concatenate([y_r, y_g, y_s])
    a = np.concatenate([a_r, np.zeros(n_good + n_shifted)])
    r = np.concatenate([np.ones(n_rct), np.zeros(n_good + n_shifted)])
    return Dataset(covariates=X, treatment=a, outcome=y, source=r)


NSW_COLUMNS = ("age", "education", "race", "hispanic", "married",
               "nodegree", "re74", "re75")


def synthetic_nsw_psid(rng: np.random.Generator, n_treated: int = 185,
                       n_control: int = 260, n_ec: int = 123,
                       effect: float = 2.264) -> Dataset:
    """Synthetic stand-in shaped like the merged job-training study table.

    Eight mixed continuous/binary covariates, earnings-like outcome in
    thousands, trial rows flagged 1 and external control rows 0 with a
    mild covariate and outcome shift.  Used when the genuine files are
    not available.
    """
    def draw_block(n, age_mu, age_sd, educ_mu, educ_sd, race_p, hisp_p,
                   married_p, nodeg_p, re74_mu, re75_mu):
        age = np.clip(rng.normal(age_mu, age_sd, n), 17, 60)
        educ = np.clip(rng.normal(educ_mu, educ_sd, n), 3, 16)
        race = (rng.random(n) < race_p).astype(float)
        hisp = (rng.random(n) < hisp_p).astype(float)
        married = (rng.random(n) < married_p).astype(float)
        nodeg = (rng.random(n) < nodeg_p).astype(float)
        re74 = np.maximum(rng.normal(re74_mu, 4.0, n), 0.0)
        re75 = np.maximum(rng.normal(re75_mu, 3.0, n), 0.0)
        return np.column_stack([age, educ, race, hisp, married, nodeg,
                                re74, re75])

    X_t = draw_block(n_treated, 25.8, 7.2, 10.3, 2.0, 0.84, 0.06, 0.19,
                     0.71, 2.1, 1.5)
    X_c = draw_block(n_control, 25.1, 7.1, 10.1, 1.6, 0.83, 0.11, 0.15,
                     0.83, 2.1, 1.3)
    X_e = draw_block(n_ec, 38.3, 12.9, 10.3, 3.2, 0.45, 0.12, 0.70,
                     0.51, 5.6, 2.6)
    X = np.vstack([X_t, X_c, X_e])
    a = np.concatenate([np.ones(n_treated), np.zeros(n_control + n_ec)])
    r = np.concatenate([np.ones(n_treated + n_control), np.zeros(n_ec)])

    def mean_outcome(Xb):
        return (2.0 + 0.04 * Xb[:, 0] + 0.15 * Xb[:, 1] - 0.8 * Xb[:, 5]
                + 0.25 * Xb[:, 6] + 0.15 * Xb[:, 7])

    y = mean_outcome(X) + rng.normal(0, 3.0, len(X))
    y[a == 1] += effect
    y[r == 0] += 0.6  # mild source-level outcome shift
    y = np.maximum(y, 0.0)
    return Dataset(covariates=X, treatment=a, outcome=y, source=r,
                   column_names=NSW_COLUMNS)
