"""Scikit-learn estimator wrappers: params, cloning, fit/predict surface."""

import numpy as np
import pytest
from sklearn.base import clone

from gpemu import BayesianCalibrator, GpEmulator, MultiOutputGpEmulator


def _sin_xy(n=12):
    x = np.linspace(0, 1, n).reshape(-1, 1)
    return x, np.sin(2 * np.pi * x[:, 0])


class TestGpEmulator:
    def test_get_params_round_trip(self):
        est = GpEmulator(family="power_exponential", roughness=1.5, starts=3)
        params = est.get_params()
        assert params["family"] == "power_exponential"
        rebuilt = GpEmulator(**params)
        assert rebuilt.get_params() == params

    def test_clone_preserves_params(self):
        est = GpEmulator(nugget=True, seed=5)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_fit_predict_interpolates(self):
        X, y = _sin_xy()
        est = GpEmulator().fit(X, y)
        pred = est.predict(X)
        assert np.max(np.abs(pred - y)) < 1e-8

    def test_score_is_high_on_smooth_function(self):
        X, y = _sin_xy(15)
        est = GpEmulator().fit(X, y)
        grid = np.linspace(0.02, 0.98, 40).reshape(-1, 1)
        assert est.score(grid, np.sin(2 * np.pi * grid[:, 0])) > 0.99

    def test_predict_interval_covers_truth_mostly(self):
        X, y = _sin_xy(15)
        est = GpEmulator().fit(X, y)
        grid = np.linspace(0.05, 0.95, 30).reshape(-1, 1)
        lo, hi = est.predict_interval(grid, level=0.95)
        truth = np.sin(2 * np.pi * grid[:, 0])
        assert ((lo <= truth) & (truth <= hi)).mean() > 0.8

    def test_return_scale(self):
        X, y = _sin_xy()
        est = GpEmulator().fit(X, y)
        loc, scale = est.predict(X, return_scale=True)
        assert loc.shape == scale.shape == (12,)
        assert np.all(scale >= 0)

    def test_inert_inputs_surface(self):
        rng = np.random.default_rng(8)
        X = rng.uniform(0, 1, size=(20, 2))
        y = np.sin(2 * np.pi * X[:, 0])
        est = GpEmulator().fit(X, y)
        assert est.inert_inputs() == (False, True)

    def test_unfitted_predict_raises(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            GpEmulator().predict(np.zeros((2, 1)))


class TestMultiOutputGpEmulator:
    def test_fit_predict_shapes_follow_sklearn_convention(self):
        x = np.linspace(0, 1, 10).reshape(-1, 1)
        Y = np.column_stack([np.sin(2 * np.pi * x[:, 0] + 0.3 * j) for j in range(4)])
        est = MultiOutputGpEmulator().fit(x, Y)
        pred = est.predict(x)
        assert pred.shape == (10, 4)
        assert np.max(np.abs(pred - Y)) < 1e-7
        loc, scale = est.predict(x, return_scale=True)
        assert scale.shape == (10, 4)

    def test_clone(self):
        est = MultiOutputGpEmulator(estimator="mmle")
        assert clone(est).get_params()["estimator"] == "mmle"


class TestBayesianCalibrator:
    def test_fit_recovers_slope(self):
        rng = np.random.default_rng(3)
        x = np.linspace(0, 1, 25).reshape(-1, 1)
        y = 2.0 * x[:, 0] + 0.05 * rng.normal(size=25)
        est = BayesianCalibrator(
            simulator=lambda xi, theta: theta[0] * xi[0],
            theta_bounds=[[0.0, 4.0]],
            discrepancy=False,
            iterations=3000,
            burn_in=1000,
            seed=2,
        ).fit(x, y)
        assert abs(est.theta_mean_[0] - 2.0) < 3 * est.theta_sd_[0]
        pred = est.predict(np.array([[0.5]]))
        assert pred[0] == pytest.approx(est.chain_.theta[:, 0].mean() * 0.5, rel=1e-9)

    def test_clone_before_fit(self):
        est = BayesianCalibrator(simulator=None, theta_bounds=[[0, 1]], iterations=100)
        assert clone(est).get_params()["iterations"] == 100
