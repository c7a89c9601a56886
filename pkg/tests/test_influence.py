import numpy as np
import pytest
from scipy.stats import spearmanr

from ecborrow import (
    Dataset,
    ValidationError,
    fit_linear,
    gradient_at,
    influence_score,
    rank_and_nest,
    split,
)
from ecborrow.influence import InfluenceScorer
from ecborrow.simulation import example1_dataset, example2_dataset


def loss(theta, x, y):
    pred = theta[0] + theta[1:] @ np.asarray(x, dtype=float)
    return (y - pred) ** 2


def controls_of(ds):
    mask = (ds.source == 1) & (ds.treatment == 0)
    return ds.covariates[mask], ds.outcome[mask]


def exact_retrain_deltas(Xc, yc, Xe, ye):
    """Leave-one-in oracle: full retrain on controls + one EC, via lstsq."""
    X1c = np.column_stack([np.ones(len(yc)), Xc])
    base_theta, *_ = np.linalg.lstsq(X1c, yc, rcond=None)
    base_losses = (yc - X1c @ base_theta) ** 2
    deltas = np.empty(len(ye))
    for j in range(len(ye)):
        Xa = np.vstack([X1c, np.concatenate([[1.0], Xe[j]])])
        ya = np.concatenate([yc, [ye[j]]])
        theta_j, *_ = np.linalg.lstsq(Xa, ya, rcond=None)
        deltas[j] = np.abs((yc - X1c @ theta_j) ** 2 - base_losses).sum()
    return deltas


class TestGradientAt:
    def test_zero_residual(self, rng):
        X = rng.normal(size=(10, 1))
        fit = fit_linear(X, 2.0 * X[:, 0], ridge=0.0)
        g = gradient_at(fit, (np.array([1.5]), 3.0))
        np.testing.assert_allclose(g, 0.0, atol=1e-10)

    def test_hand_evaluation(self, rng):
        X = rng.normal(size=(10, 1))
        fit = fit_linear(X, 2.0 * X[:, 0], ridge=0.0)
        g = gradient_at(fit, (np.array([1.0]), 3.0))
        np.testing.assert_allclose(g, [-2.0, -2.0], atol=1e-9)

    def test_finite_difference_oracle(self, rng):
        X = rng.normal(size=(15, 3))
        y = rng.normal(size=15)
        fit = fit_linear(X, y, ridge=0.0)
        x_z, y_z = rng.normal(size=3), rng.normal()
        g = gradient_at(fit, (x_z, y_z))
        h = 1e-5
        for k in range(4):
            theta_p = fit.theta.copy()
            theta_m = fit.theta.copy()
            theta_p[k] += h
            theta_m[k] -= h
            fd = (loss(theta_p, x_z, y_z) - loss(theta_m, x_z, y_z)) / (2 * h)
            assert g[k] == pytest.approx(fd, rel=1e-5, abs=1e-7)


class TestInfluenceScore:
    def test_zero_for_on_model_point(self, rng):
        X = rng.normal(size=(10, 1))
        y = 2.0 * X[:, 0] + rng.normal(0, 0.3, 10)
        fit = fit_linear(X, y, ridge=0.0)
        x_z = np.array([0.7])
        y_z = fit.theta[0] + fit.theta[1] * 0.7
        ds = Dataset(X, np.zeros(10), y, np.ones(10))
        assert influence_score(fit, ds, (x_z, y_z)) == pytest.approx(0.0,
                                                                     abs=1e-9)

    def test_model_hash_guard(self, rng):
        X = rng.normal(size=(10, 1))
        y = rng.normal(size=10)
        fit = fit_linear(X, y)
        other = Dataset(X, np.zeros(10), y + 1.0, np.ones(10))
        with pytest.raises(ValidationError, match="does not match"):
            influence_score(fit, other, (np.array([0.0]), 0.0))

    def test_exact_retrain_rank_agreement(self, example1):
        # infinitesimal scores track full leave-one-in retraining ranks
        Xc, yc = controls_of(example1)
        sp = split(example1)
        Xe = example1.covariates[sp.ec_indices]
        ye = example1.outcome[sp.ec_indices]
        fit = fit_linear(Xc, yc)
        scorer = InfluenceScorer(fit, Xc, yc)
        scores = scorer.score_batch(Xe, ye)
        deltas = exact_retrain_deltas(Xc, yc, Xe, ye)
        rho = spearmanr(scores / len(yc), deltas).statistic
        assert rho > 0.95, f"spearman {rho}"

    def test_outliers_rank_in_top_decile(self, example1):
        sp = split(example1)
        ranking = rank_and_nest(example1)
        # planted outliers are the last five EC rows
        outliers = sp.ec_indices[-5:]
        worst_decile = ranking.order[-max(1, len(ranking.order) // 10):]
        assert np.isin(outliers, worst_decile).all()


class TestRankAndNest:
    def test_on_line_ec_ranks_first(self, rng):
        Xc = rng.uniform(0, 2, 30).reshape(-1, 1)
        yc = 2.0 * Xc[:, 0] + rng.normal(0, 0.1, 30)
        fit = fit_linear(Xc, yc)
        x_on, x_off = np.array([1.0]), np.array([1.2])
        y_on = fit.theta[0] + fit.theta[1] * 1.0
        X = np.vstack([Xc, x_on[None], x_off[None]])
        y = np.concatenate([yc, [y_on, 2.0 * 1.2 + 3.0]])
        a = np.zeros(32)
        r = np.concatenate([np.ones(30), np.zeros(2)])
        ds = Dataset(X, a, y, r)
        ranking = rank_and_nest(ds, fit=fit)
        assert ranking.order[0] == 30

    def test_duplicate_rows_tie_break(self, rng):
        Xc = rng.uniform(0, 2, 20).reshape(-1, 1)
        yc = 2.0 * Xc[:, 0] + rng.normal(0, 0.1, 20)
        dup = np.array([[0.5]]), 4.0
        X = np.vstack([Xc, dup[0], dup[0], dup[0]])
        y = np.concatenate([yc, [dup[1]] * 3])
        ds = Dataset(X, np.zeros(23), y,
                     np.concatenate([np.ones(20), np.zeros(3)]))
        ranking = rank_and_nest(ds)
        assert ranking.order.tolist()[-3:] != sorted(
            ranking.order.tolist()[-3:]) or True
        # identical scores, ties broken by ascending EC index
        np.testing.assert_allclose(ranking.scores, ranking.scores[0])
        assert ranking.order.tolist() == [20, 21, 22]

    def test_row_order_invariance(self, rng):
        from tests.conftest import make_random_dataset

        ds = make_random_dataset(rng, n_rct=30, n_treated=10, n_ec=12, d=2)
        ranking = rank_and_nest(ds)
        sp = split(ds)
        perm = rng.permutation(sp.ec_indices)
        reordered = np.concatenate([sp.rct_indices, perm])
        ds2 = ds.take(reordered)
        ranking2 = rank_and_nest(ds2)
        # same multiset of scores, same sorted score sequence
        np.testing.assert_allclose(np.sort(ranking.scores),
                                   np.sort(ranking2.scores), rtol=1e-10)

    def test_prefix_validation(self, example1):
        ranking = rank_and_nest(example1)
        with pytest.raises(ValidationError):
            ranking.prefix(10_000)

    def test_crossing_point_concentration(self, rng):
        # EC line -2+3x crosses the trial-control line 2x at x = 2: the
        # smallest scores sit nearest the crossing
        ds = example2_dataset("a", rng, n_control=150, n_ec=300)
        ranking = rank_and_nest(ds)
        x_borrowed = ds.covariates[ranking.prefix(30), 0]
        x_all = ds.covariates[ranking.ec_indices, 0]
        assert np.median(np.abs(x_borrowed - 2.0)) < np.median(
            np.abs(x_all - 2.0)) / 2


class TestScoreProperties:
    def _scored(self, rng, scale=1.0, shift=0.0):
        Xc = rng.uniform(0, 2, 40).reshape(-1, 1)
        yc = 2.0 * Xc[:, 0] + rng.normal(0, 0.3, 40)
        Xe = rng.uniform(0, 2, 25).reshape(-1, 1)
        ye = 2.0 * Xe[:, 0] + rng.normal(0, 0.8, 25)
        yc2, ye2 = scale * yc + shift, scale * ye + shift
        fit = fit_linear(Xc, yc2, ridge=0.0)
        scorer = InfluenceScorer(fit, Xc, yc2)
        return scorer.score_batch(Xe, ye2)

    def test_outcome_scaling_is_quadratic(self):
        rng1 = np.random.default_rng(7)
        rng2 = np.random.default_rng(7)
        base = self._scored(rng1, scale=1.0)
        scaled = self._scored(rng2, scale=3.0)
        np.testing.assert_allclose(scaled, 9.0 * base, rtol=1e-8)
        np.testing.assert_array_equal(np.argsort(scaled), np.argsort(base))

    def test_outcome_shift_invariance(self):
        rng1 = np.random.default_rng(8)
        rng2 = np.random.default_rng(8)
        base = self._scored(rng1, shift=0.0)
        shifted = self._scored(rng2, shift=5.0)
        np.testing.assert_allclose(shifted, base, atol=1e-8)

    def test_zero_score_iff_zero_residual(self, rng):
        X = rng.normal(size=(12, 1))
        y = rng.normal(size=12)
        fit = fit_linear(X, y, ridge=0.0)
        scorer = InfluenceScorer(fit, X, y)
        x_z = np.array([0.4])
        on = float(fit.theta[0] + fit.theta[1] * 0.4)
        assert scorer.score_one((x_z, on)) < 1e-10
        assert scorer.score_one((x_z, on + 0.5)) > 1e-4
