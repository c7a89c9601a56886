import numpy as np
import pytest

from ecborrow import (
    ConstantProbability,
    DgpConfig,
    ValidationError,
    assemble_nuisances,
    expand_features,
    fit_linear,
    fit_logistic,
    generate,
    predict_outcome,
)
from ecborrow.nuisance import add_intercept
from ecborrow.simulation import example1_dataset
from ecborrow.validation import NumericalError


def normal_equation_oracle(X, y):
    """Independent OLS oracle via explicit matrix inversion."""
    X1 = np.column_stack([np.ones(len(y)), X])
    return np.linalg.inv(X1.T @ X1) @ (X1.T @ y)


class TestFitLinear:
    def test_exact_line(self):
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = 2.0 * x[:, 0]
        fit = fit_linear(x, y, ridge=0.0)
        np.testing.assert_allclose(fit.theta, [0.0, 2.0], atol=1e-12)
        np.testing.assert_allclose(fit.predict(x), y, atol=1e-12)

    def test_against_normal_equation_oracle(self, rng):
        X = rng.normal(size=(20, 3))
        y = rng.normal(size=20)
        fit = fit_linear(X, y, ridge=0.0)
        oracle = normal_equation_oracle(X, y)
        np.testing.assert_allclose(fit.theta, oracle, atol=1e-8)
        # prediction at the first training row matches the oracle's
        assert fit.predict(X[:1])[0] == pytest.approx(
            oracle[0] + oracle[1:] @ X[0], abs=1e-8)

    def test_slope_on_noisy_line(self, rng):
        x = rng.uniform(0, 2, 100).reshape(-1, 1)
        y = 2.0 * x[:, 0] + rng.normal(0, 0.2, 100)
        fit = fit_linear(x, y)
        assert abs(fit.theta[1] - 2.0) < 0.1

    def test_hessian_invariants(self, rng):
        X = rng.normal(size=(25, 4))
        y = rng.normal(size=25)
        fit = fit_linear(X, y)
        H = fit.hessian
        assert np.max(np.abs(H - H.T)) < 1e-10
        assert np.all(np.linalg.eigvalsh(H) > 0)
        # normal-equation residual: gradient of the fitted objective ~ 0
        X1 = add_intercept(X)
        D = np.eye(5)
        D[0, 0] = 0.0
        grad = (2.0 / 25) * (X1.T @ (X1 @ fit.theta - y)) \
            + 2.0 * fit.ridge * (D @ fit.theta)
        assert np.linalg.norm(grad) < 1e-8 * fit.n_fit

    def test_ridge_zero_is_ols_and_monotone_shrinkage(self, rng):
        X = rng.normal(size=(30, 3))
        y = rng.normal(size=30)
        ols = fit_linear(X, y, ridge=0.0)
        np.testing.assert_allclose(ols.theta, normal_equation_oracle(X, y),
                                   atol=1e-8)
        norms = [np.linalg.norm(fit_linear(X, y, ridge=r).theta[1:])
                 for r in (0.0, 0.01, 0.1, 1.0, 10.0)]
        assert all(b >= a for a, b in zip(norms[1:], norms)), norms

    def test_rank_deficient_without_ridge(self, rng):
        X = rng.normal(size=(10, 2))
        X = np.column_stack([X, X[:, 0]])  # duplicated column
        with pytest.raises(NumericalError, match="rank-deficient"):
            fit_linear(X, rng.normal(size=10), ridge=0.0)

    def test_too_few_rows(self, rng):
        with pytest.raises(ValidationError, match="d\\+2"):
            fit_linear(rng.normal(size=(3, 2)), rng.normal(size=3))


class TestFitLogistic:
    def test_null_signal(self, rng):
        X = rng.normal(size=(400, 2))
        labels = np.array([0.0, 1.0] * 200)
        fit = fit_logistic(X, labels)
        assert fit.converged
        p = fit.predict_proba(X)
        assert abs(p.mean() - 0.5) < 0.05

    def test_perfect_separation(self):
        x = np.linspace(-2, 2, 40).reshape(-1, 1)
        labels = (x[:, 0] > 0).astype(float)
        fit = fit_logistic(x, labels, clip=0.01)
        assert not fit.converged
        p = fit.predict_proba(x)
        assert p.min() >= 0.01 and p.max() <= 0.99

    def test_single_class_rejected(self, rng):
        with pytest.raises(ValidationError, match="single class"):
            fit_logistic(rng.normal(size=(10, 1)), np.ones(10))

    def test_calibration_in_the_large(self):
        # intercept term forces mean fitted probability = class rate
        ds = generate(DgpConfig(seed=11), rep=0)
        fit = fit_logistic(ds.covariates, ds.source)
        assert fit.converged
        p = fit.predict_proba(ds.covariates)
        assert abs(p.mean() - 300 / 1300) < 0.05
        assert abs(p.mean() - ds.source.mean()) < 1e-6


class TestPredictOutcome:
    def test_direct_evaluation(self, rng):
        X = rng.normal(size=(10, 1))
        fit = fit_linear(X, 2.0 * X[:, 0], ridge=0.0)
        assert predict_outcome(fit, [3.0]) == pytest.approx(6.0, abs=1e-9)

    def test_intercept_only(self, rng):
        X = rng.normal(size=(10, 2))
        fit = fit_linear(X, np.ones(10), ridge=0.0)
        assert predict_outcome(fit, [5.0, -3.0]) == pytest.approx(1.0,
                                                                  abs=1e-9)

    def test_matches_oracle_fit(self, rng):
        X = rng.normal(size=(20, 3))
        y = rng.normal(size=20)
        fit = fit_linear(X, y, ridge=0.0)
        oracle = normal_equation_oracle(X, y)
        assert predict_outcome(fit, X[0]) == pytest.approx(
            oracle @ np.concatenate([[1.0], X[0]]), abs=1e-8)

    def test_dimension_mismatch(self, rng):
        fit = fit_linear(rng.normal(size=(10, 2)), rng.normal(size=10))
        with pytest.raises(ValidationError):
            predict_outcome(fit, [1.0])


class TestAssembleNuisances:
    def test_empty_borrow_degeneracy(self, toy_dataset):
        nu = assemble_nuisances(toy_dataset, borrow_set=())
        np.testing.assert_array_equal(nu.m0.theta, nu.mu0.theta)
        assert isinstance(nu.pi, ConstantProbability) and nu.pi.p == 1.0
        assert nu.q_hat == 1.0
        assert nu.m1 is nu.mu1

    def test_known_e1_is_treated_share(self):
        ds = generate(DgpConfig(seed=5), rep=0)
        nu = assemble_nuisances(ds, borrow_set=(), e1_mode="known")
        assert isinstance(nu.e1, ConstantProbability)
        assert nu.e1.p == pytest.approx(200 / 300)

    def test_q_hat_exact(self):
        ds = generate(DgpConfig(seed=5), rep=0)
        ec = np.where(ds.source == 0)[0]
        nu = assemble_nuisances(ds, borrow_set=ec[:250])
        assert nu.q_hat == 300 / 550

    def test_same_distribution_pooling(self):
        # ECs drawn from the trial-control law: pooled model stays close
        cfg = DgpConfig(seed=23, delta=0.0, pi_slope=0.0,
                        noise_rct=0.3, noise_ec=0.3)
        ds = generate(cfg, rep=0)
        ec = np.where(ds.source == 0)[0]
        nu = assemble_nuisances(ds, borrow_set=ec)
        assert np.linalg.norm(nu.m0.theta - nu.mu0.theta) < 0.2

    def test_borrow_set_must_be_ec(self, toy_dataset):
        with pytest.raises(ValidationError, match="subset of the EC"):
            assemble_nuisances(toy_dataset, borrow_set=[0])


def test_expand_features_quadratic(rng):
    X = rng.normal(size=(6, 2))
    Q = expand_features(X, "quadratic")
    assert Q.shape == (6, 4)
    np.testing.assert_allclose(Q[:, 2:], X**2)
    np.testing.assert_allclose(expand_features(X, "linear"), X)
    with pytest.raises(ValidationError):
        expand_features(X, "cubic")


def test_example1_control_fit(rng):
    ds = example1_dataset(rng)
    ctrl = (ds.source == 1) & (ds.treatment == 0)
    fit = fit_linear(ds.covariates[ctrl], ds.outcome[ctrl])
    assert abs(fit.theta[1] - 2.0) < 0.1
