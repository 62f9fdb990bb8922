"""Scikit-learn style estimators wrapping the functional core.

These classes follow the sklearn conventions (parameters stored verbatim in
``__init__``, state learned in ``fit`` and suffixed with an underscore,
``get_params``/``set_params`` inherited from ``BaseEstimator``) so the
emulators compose with pipelines, model selection, and cloning.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .calibration import CalibrationProblem, McmcConfig, SimulatorHandle, calib_predict, calibrate
from .core import TrendBasis
from .estimation import FitConfig, detect_inert_inputs, fit_gp
from .kernels import CorrelationFamily
from .multioutput import fit_multi_gp, predict_multi_arrays
from .prediction import predict_arrays, predictive_interval, PredictiveT
from .priors import PriorSpec


def _family(name, roughness):
    if name == "spherical":
        return CorrelationFamily(name)
    return CorrelationFamily(name, roughness)


def _fit_config(estimator, prior, b1, b2, starts, seed, inert_threshold):
    if isinstance(prior, PriorSpec):
        prior_spec = prior
    else:
        prior_spec = PriorSpec(prior, b1=b1, b2=b2)
    return FitConfig(estimator=estimator, prior=prior_spec, starts=starts,
                     seed=seed, inert_threshold=inert_threshold)


class GpEmulator(RegressorMixin, BaseEstimator):
    """Scalar-output GP emulator with default-Bayesian range estimation.

    Parameters
    ----------
    family : str
        Correlation family: "matern", "power_exponential",
        "rational_quadratic" or "spherical".
    roughness : float
        Fixed roughness of the family (ignored for "spherical").
    mode : str
        "separable" (one range per input) or "isotropic".
    nugget : bool or float
        False for no nugget, True to estimate one, or a fixed value.
    trend : str
        "constant" or "linear" mean basis.
    estimator : str
        "mle", "mmle" or "mmpe".
    prior : str or PriorSpec
        Prior for MMPE: "flat", "reference" or "jr".
    """

    def __init__(self, family="matern", roughness=2.5, mode="separable",
                 nugget=False, trend="constant", estimator="mmpe", prior="jr",
                 b1=0.2, b2=1.0, starts=2, seed=0, inert_threshold=0.1):
        self.family = family
        self.roughness = roughness
        self.mode = mode
        self.nugget = nugget
        self.trend = trend
        self.estimator = estimator
        self.prior = prior
        self.b1 = b1
        self.b2 = b2
        self.starts = starts
        self.seed = seed
        self.inert_threshold = inert_threshold

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        config = _fit_config(self.estimator, self.prior, self.b1, self.b2,
                             self.starts, self.seed, self.inert_threshold)
        self.model_, self.report_ = fit_gp(
            X, np.asarray(y, dtype=float), _family(self.family, self.roughness),
            mode=self.mode, basis=TrendBasis(kind=self.trend),
            nugget=self.nugget, config=config,
        )
        self.n_features_in_ = X.shape[1] if X.ndim == 2 else 1
        return self

    def predict(self, X, return_scale=False, include_noise=False):
        check_is_fitted(self, "model_")
        loc, scale2, _ = predict_arrays(self.model_, X, include_noise=include_noise)
        if return_scale:
            return loc, np.sqrt(scale2)
        return loc

    def predict_interval(self, X, level=0.95, include_noise=False):
        """Central predictive intervals; returns (lower, upper) arrays."""
        check_is_fitted(self, "model_")
        loc, scale2, _ = predict_arrays(self.model_, X, include_noise=include_noise)
        lows, highs = [], []
        for l, s2 in zip(loc, scale2):
            lo, hi = predictive_interval(
                PredictiveT(location=float(l), scale2=float(s2), dof=self.model_.dof), level
            )
            lows.append(lo)
            highs.append(hi)
        return np.asarray(lows), np.asarray(highs)

    def inert_inputs(self, threshold=None):
        check_is_fitted(self, "model_")
        return detect_inert_inputs(
            self.model_, self.inert_threshold if threshold is None else threshold
        )


class MultiOutputGpEmulator(RegressorMixin, BaseEstimator):
    """Vector-output emulator sharing one correlation matrix across outputs.

    ``fit`` takes Y of shape (n_samples, n_outputs); internally the outputs
    are stored one row per output coordinate.
    """

    def __init__(self, family="matern", roughness=2.5, mode="separable",
                 nugget=False, trend="constant", estimator="mmpe", prior="jr",
                 b1=0.2, b2=1.0, starts=2, seed=0, inert_threshold=0.1):
        self.family = family
        self.roughness = roughness
        self.mode = mode
        self.nugget = nugget
        self.trend = trend
        self.estimator = estimator
        self.prior = prior
        self.b1 = b1
        self.b2 = b2
        self.starts = starts
        self.seed = seed
        self.inert_threshold = inert_threshold

    def fit(self, X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        config = _fit_config(self.estimator, self.prior, self.b1, self.b2,
                             self.starts, self.seed, self.inert_threshold)
        self.model_, self.report_ = fit_multi_gp(
            X, Y.T, _family(self.family, self.roughness),
            mode=self.mode, basis=TrendBasis(kind=self.trend),
            nugget=self.nugget, config=config,
        )
        self.n_features_in_ = X.shape[1] if X.ndim == 2 else 1
        return self

    def predict(self, X, return_scale=False, include_noise=False):
        check_is_fitted(self, "model_")
        loc, scale2, _ = predict_multi_arrays(self.model_, X, include_noise=include_noise)
        if return_scale:
            return loc.T, np.sqrt(scale2).T
        return loc.T


class BayesianCalibrator(BaseEstimator):
    """Posterior sampling of computer-model parameters against field data.

    ``simulator`` is a callable f(x, theta) -> float (or a fitted emulator
    wrapped by the caller in a :class:`SimulatorHandle`). ``fit`` runs the
    MCMC; ``predict`` returns the posterior predictive mean of reality.
    """

    def __init__(self, simulator=None, theta_bounds=None, discrepancy=True,
                 kernel=None, prior="jr", iterations=10000, burn_in=2000,
                 thinning=1, seed=0, theta_scale=None, kernel_scale=0.3):
        self.simulator = simulator
        self.theta_bounds = theta_bounds
        self.discrepancy = discrepancy
        self.kernel = kernel
        self.prior = prior
        self.iterations = iterations
        self.burn_in = burn_in
        self.thinning = thinning
        self.seed = seed
        self.theta_scale = theta_scale
        self.kernel_scale = kernel_scale

    def _handle(self):
        if isinstance(self.simulator, SimulatorHandle):
            return self.simulator
        return SimulatorHandle.direct(self.simulator)

    def fit(self, X, y):
        prior = self.prior if isinstance(self.prior, PriorSpec) else PriorSpec(self.prior)
        self.problem_ = CalibrationProblem(
            inputs=np.asarray(X, dtype=float),
            observations=np.asarray(y, dtype=float),
            simulator=self._handle(),
            theta_bounds=np.asarray(self.theta_bounds, dtype=float),
            kernel=self.kernel,
            prior=prior,
            include_discrepancy=self.discrepancy,
        )
        self.chain_ = calibrate(
            self.problem_,
            McmcConfig(iterations=self.iterations, burn_in=self.burn_in,
                       thinning=self.thinning, seed=self.seed,
                       theta_scale=self.theta_scale, kernel_scale=self.kernel_scale),
        )
        self.theta_mean_ = self.chain_.theta.mean(axis=0)
        self.theta_sd_ = self.chain_.theta.std(axis=0, ddof=1)
        return self

    def predict(self, X, level=0.95):
        check_is_fitted(self, "chain_")
        return calib_predict(self.problem_, self.chain_, X, level=level).mean
