import numpy as np
import pytest
from sklearn.base import clone

from ecborrow import BorrowingEstimator, OutcomeCalibrator, ValidationError
from ecborrow.simulation import DgpConfig, generate


@pytest.fixture
def arrays():
    ds = generate(DgpConfig(seed=31, delta=1.0), rep=0)
    return ds.covariates, ds.treatment, ds.outcome, ds.source


class TestBorrowingEstimator:
    def test_get_set_params_and_clone(self):
        est = BorrowingEstimator(method="fb", grid_step=25)
        params = est.get_params()
        assert params["method"] == "fb" and params["grid_step"] == 25
        est2 = clone(est).set_params(method="nb")
        assert est2.get_params()["method"] == "nb"
        assert est.get_params()["method"] == "fb"

    def test_fit_predict_nb(self, arrays):
        X, a, y, r = arrays
        est = BorrowingEstimator(method="nb").fit(X, a, y, r)
        assert est.n_borrowed_ == 0
        assert np.isfinite(est.predict())
        lo, hi = est.confidence_interval()
        assert lo < est.estimate_ < hi

    def test_fit_aib(self, arrays):
        X, a, y, r = arrays
        est = BorrowingEstimator(method="aib", grid_step=100).fit(X, a, y, r)
        assert est.n_borrowed_ % 100 == 0
        assert est.report_.method in ("nb", "combined")

    def test_unfitted_raises(self):
        with pytest.raises(ValidationError, match="not fitted"):
            BorrowingEstimator().predict()

    def test_invalid_inputs(self, arrays):
        X, a, y, r = arrays
        with pytest.raises(ValidationError):
            BorrowingEstimator(method="nb").fit(X, a + 0.5, y, r)


class TestOutcomeCalibrator:
    def test_transform_changes_only_ec_rows(self, arrays):
        X, a, y, r = arrays
        cal = OutcomeCalibrator(lam=0.0)
        y2 = cal.fit_transform(X, a, y, r)
        np.testing.assert_array_equal(y2[r == 1], y[r == 1])
        assert not np.allclose(y2[r == 0], y[r == 0])

    def test_theta_exposed(self, arrays):
        X, a, y, r = arrays
        cal = OutcomeCalibrator().fit(X, a, y, r)
        assert cal.theta_b_.shape == (X.shape[1] + 1,)

    def test_unfitted_raises(self, arrays):
        X, a, y, r = arrays
        with pytest.raises(ValidationError, match="not fitted"):
            OutcomeCalibrator().transform(X, a, y, r)
