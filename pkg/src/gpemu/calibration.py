"""Bayesian calibration of a computer model against field observations.

The observation model is y(x) = f(x, theta) + delta(x) + noise, with the
discrepancy delta a zero-mean GP over the observable inputs. Integrating the
discrepancy and the GP variance out analytically leaves a posterior over the
calibration parameters theta and the correlation parameters (log inverse
ranges and log nugget), sampled by block random-walk Metropolis:

* block 1 proposes theta with a Gaussian step reflected at the bounds;
* block 2 proposes the correlation parameters jointly (or the log noise
  variance when the discrepancy is disabled).

Proposal scales adapt toward a target acceptance rate during burn-in only
and are frozen afterwards to preserve the Markov property.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import cholesky_with_jitter
from .errors import CalibrationError, ConditioningError
from .kernels import CorrelationFamily, CorrelationWorkspace, KernelSpec, build_correlation, cross_correlation
from .multioutput import MultiOutputGpModel, predict_multi_arrays
from .prediction import predict_arrays
from .priors import PriorSpec, log_jr_prior, log_reference_prior, materialize_prior
from .validation import as_design_matrix, as_output_vector, frozen_array, require

logger = logging.getLogger(__name__)

# Hard support for the log-scale correlation parameters; exp() stays finite
# and the walk cannot drift into overflow territory.
_KP_LIMIT = 40.0


@dataclass(frozen=True)
class SimulatorHandle:
    """Computer model under calibration: a callable or a fitted emulator.

    ``direct`` wraps a function f(x, theta) -> float (or a vectorized
    f(X, theta) -> array); ``emulated`` wraps a fitted emulator over joint
    (x, theta) inputs and evaluates its predictive location.
    """

    kind: str
    func: object = None
    model: object = None
    coord: int = 0
    vectorized: bool = False
    concurrency_safe: bool = False

    @classmethod
    def direct(cls, func, vectorized=False, concurrency_safe=False):
        return cls(kind="direct", func=func, vectorized=vectorized,
                   concurrency_safe=concurrency_safe)

    @classmethod
    def emulated(cls, model, coord=0):
        return cls(kind="emulated", model=model, coord=coord, concurrency_safe=True)

    def evaluate(self, inputs, theta):
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if self.kind == "direct":
            if self.vectorized:
                out = np.asarray(self.func(inputs, theta), dtype=float).reshape(-1)
            else:
                out = np.asarray([float(self.func(x, theta)) for x in inputs])
            require(out.size == inputs.shape[0], "simulator returned the wrong number of values")
            return out
        joint = np.hstack([inputs, np.tile(theta, (inputs.shape[0], 1))])
        if isinstance(self.model, MultiOutputGpModel):
            loc, _, _ = predict_multi_arrays(self.model, joint, with_scale=False)
            return loc[self.coord]
        loc, _, _ = predict_arrays(self.model, joint)
        return loc


def _default_discrepancy_kernel(inputs):
    inputs = as_design_matrix(inputs)
    p = inputs.shape[1]
    spans = inputs.max(axis=0) - inputs.min(axis=0)
    spans = np.where(spans > 0, spans, 1.0)
    fam = CorrelationFamily("matern", 2.5)
    ranges = tuple(float(s) * p ** (-1.0 / 2.5) for s in spans)
    return KernelSpec(mode="separable", families=(fam,) * p, ranges=ranges, nugget=0.05)


@dataclass(frozen=True)
class CalibrationProblem:
    """Field data, simulator, parameter bounds, and prior choices.

    ``kernel`` provides the discrepancy correlation families and the initial
    point for its parameters; the ranges and nugget themselves are sampled.
    ``theta_log_prior`` defaults to the uniform density on the bounds.
    """

    inputs: np.ndarray
    observations: np.ndarray
    simulator: SimulatorHandle
    theta_bounds: np.ndarray
    kernel: KernelSpec | None = None
    prior: PriorSpec = PriorSpec("jr")
    theta_log_prior: object = None
    include_discrepancy: bool = True
    theta_names: tuple | None = None

    def __post_init__(self):
        inputs = as_design_matrix(self.inputs, name="field inputs")
        observations = as_output_vector(self.observations, n=inputs.shape[0],
                                        name="field observations")
        bounds = np.asarray(self.theta_bounds, dtype=float)
        if bounds.ndim == 1:
            bounds = bounds.reshape(1, 2)
        require(bounds.ndim == 2 and bounds.shape[1] == 2,
                "theta_bounds must be a (t, 2) array of finite lower/upper pairs")
        require(np.isfinite(bounds).all(), "theta_bounds must be finite (compact box)")
        require((bounds[:, 1] > bounds[:, 0]).all(), "each theta upper bound must exceed its lower")
        object.__setattr__(self, "inputs", frozen_array(inputs))
        object.__setattr__(self, "observations", frozen_array(observations))
        object.__setattr__(self, "theta_bounds", frozen_array(bounds))
        if self.include_discrepancy:
            kernel = self.kernel or _default_discrepancy_kernel(inputs)
            kernel.check_design(inputs)
            require(kernel.nugget is not None and kernel.nugget > 0,
                    "the discrepancy kernel needs a positive initial nugget")
            prior = materialize_prior(self.prior, inputs, include_nugget=True, mode=kernel.mode)
            object.__setattr__(self, "kernel", kernel)
            object.__setattr__(self, "prior", prior)
        if self.theta_names is not None:
            names = tuple(str(n) for n in self.theta_names)
            require(len(names) == bounds.shape[0], "need one theta name per parameter")
            object.__setattr__(self, "theta_names", names)

    @property
    def n_obs(self):
        return self.inputs.shape[0]

    @property
    def n_theta(self):
        return self.theta_bounds.shape[0]

    def theta_in_bounds(self, theta):
        return bool(np.all(theta >= self.theta_bounds[:, 0])
                    and np.all(theta <= self.theta_bounds[:, 1]))

    def log_prior_theta(self, theta):
        if self.theta_log_prior is None:
            return 0.0
        return float(self.theta_log_prior(theta))


@dataclass(frozen=True)
class McmcConfig:
    """Iteration counts, proposal scales, and adaptation settings."""

    iterations: int = 10000
    burn_in: int = 2000
    thinning: int = 1
    seed: int = 0
    theta_scale: object = None     # absolute proposal SDs; default 0.1 * bound width
    kernel_scale: float = 0.3
    adapt_interval: int = 50
    target_acceptance: float = 0.3
    prior_only: bool = False

    def __post_init__(self):
        require(self.iterations > self.burn_in >= 0,
                "iterations must exceed burn_in (and burn_in be non-negative)")
        require(self.thinning >= 1, "thinning must be at least 1")
        require(0.0 < self.target_acceptance < 1.0, "target acceptance must lie in (0, 1)")


@dataclass(frozen=True)
class McmcChain:
    """Posterior draws (post burn-in, thinned) with sampler diagnostics."""

    theta: np.ndarray            # (m, t)
    kernel_params: np.ndarray    # (m, p+1) log-scale, or (m, 1) log noise variance
    log_post: np.ndarray
    accept_theta: float
    accept_kernel: float
    seed: int
    iterations: int
    burn_in: int
    thinning: int
    include_discrepancy: bool
    theta_names: tuple
    kernel_param_names: tuple
    max_offdiag: np.ndarray | None
    identifiability_warning: bool
    final_scales: tuple
    simulator_incidents: int

    @property
    def n_draws(self):
        return self.theta.shape[0]


def _kernel_spec_at(problem, kp):
    p = problem.inputs.shape[1] if problem.kernel.mode == "separable" else 1
    ranges = tuple(np.exp(-np.asarray(kp[:p])))
    nugget = float(np.exp(kp[p]))
    return KernelSpec(mode=problem.kernel.mode, families=problem.kernel.families,
                      ranges=ranges, nugget=nugget)


def _log_prior_kernel(problem, spec):
    if problem.prior.variant == "flat":
        return 0.0
    if problem.prior.variant == "reference":
        return log_reference_prior(spec, problem.inputs, basis=None, include_nugget=True)
    inv_ranges = 1.0 / np.asarray(spec.ranges)
    return log_jr_prior(problem.prior, inv_ranges, nugget=spec.nugget)


class _DiscrepancyState:
    """Cholesky factor and priors for one correlation-parameter value."""

    __slots__ = ("chol", "logdet", "log_prior", "max_offdiag")

    def __init__(self, problem, workspace, kp):
        spec = _kernel_spec_at(problem, kp)
        corr = workspace.matrix(spec.ranges)
        off = corr[~np.eye(corr.shape[0], dtype=bool)]
        self.max_offdiag = float(off.max()) if off.size else 0.0
        corr[np.diag_indices_from(corr)] += spec.nugget
        self.chol, _ = cholesky_with_jitter(corr)
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.chol))))
        self.log_prior = _log_prior_kernel(problem, spec)


def _gaussian_quad(chol, resid):
    white = scipy.linalg.solve_triangular(chol, resid, lower=True)
    return float(white @ white)


def calib_log_posterior(problem, theta, xi=None, log_nugget=None, log_noise_var=None):
    """Log posterior kernel (up to a constant) of the calibration model.

    With the discrepancy enabled, pass ``xi`` (log inverse ranges) and
    ``log_nugget``; the GP variance is integrated out analytically under its
    1/variance prior. Without the discrepancy, pass ``log_noise_var``.
    Out-of-bounds theta yields -inf; a simulator failure is logged and
    carried as -inf rather than raised.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    require(theta.size == problem.n_theta, "theta has the wrong length")
    if not problem.theta_in_bounds(theta):
        return -math.inf
    try:
        f_theta = problem.simulator.evaluate(problem.inputs, theta)
    except Exception:  # noqa: BLE001 - failures become -inf by contract
        logger.warning("simulator failed at theta=%s; treating as -inf", theta, exc_info=True)
        return -math.inf
    resid = problem.observations - f_theta
    n = problem.n_obs
    if problem.include_discrepancy:
        require(xi is not None and log_nugget is not None,
                "discrepancy mode needs xi and log_nugget")
        kp = np.append(np.asarray(xi, dtype=float).reshape(-1), float(log_nugget))
        ws = CorrelationWorkspace(problem.kernel.mode, problem.kernel.families, problem.inputs)
        state = _DiscrepancyState(problem, ws, kp)
        quad = _gaussian_quad(state.chol, resid)
        if quad <= 0:
            return -math.inf
        return (-0.5 * state.logdet - 0.5 * n * math.log(quad)
                + state.log_prior + problem.log_prior_theta(theta))
    require(log_noise_var is not None, "no-discrepancy mode needs log_noise_var")
    u = float(log_noise_var)
    quad = float(resid @ resid)
    return -0.5 * n * u - 0.5 * quad * math.exp(-u) + problem.log_prior_theta(theta)


def _reflect_into(value, lo, hi):
    width = hi - lo
    d = (value - lo) % (2.0 * width)
    d = np.where(d > width, 2.0 * width - d, d)
    return lo + d


class _Sampler:
    def __init__(self, problem, config):
        self.problem = problem
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.n = problem.n_obs
        bounds = problem.theta_bounds
        widths = bounds[:, 1] - bounds[:, 0]
        if config.theta_scale is None:
            self.theta_scales = 0.1 * widths
        else:
            self.theta_scales = np.broadcast_to(
                np.asarray(config.theta_scale, dtype=float), widths.shape
            ).copy()
        self.kernel_scale = float(config.kernel_scale)
        self.log_factor = [0.0, 0.0]
        self.incidents = 0
        if problem.include_discrepancy:
            self.workspace = CorrelationWorkspace(
                problem.kernel.mode, problem.kernel.families, problem.inputs
            )
            p = len(problem.kernel.ranges)
            self.kp_dim = p + 1
            self.kp_names = tuple(f"log_inv_range_{l + 1}" for l in range(p)) + ("log_nugget",)
        else:
            self.kp_dim = 1
            self.kp_names = ("log_noise_var",)

    def simulate(self, theta):
        if self.config.prior_only:
            return np.zeros(self.n)
        try:
            return self.problem.simulator.evaluate(self.problem.inputs, theta)
        except Exception:  # noqa: BLE001
            self.incidents += 1
            logger.warning("simulator failed at theta=%s", theta, exc_info=True)
            return None

    def initial_state(self):
        problem = self.problem
        theta = problem.theta_bounds.mean(axis=1)
        f_theta = self.simulate(theta)
        if f_theta is None:
            raise CalibrationError("simulator failed at the initial calibration point")
        if problem.include_discrepancy:
            kp = np.append(-np.log(problem.kernel.ranges), math.log(problem.kernel.nugget))
            state = _DiscrepancyState(problem, self.workspace, kp)
        else:
            resid = problem.observations - f_theta
            var0 = float(resid @ resid) / max(self.n, 1) + 1e-12
            kp = np.array([math.log(var0)])
            state = None
        return theta, f_theta, kp, state

    def log_lik(self, f_theta, kp, state):
        if self.config.prior_only:
            return 0.0
        resid = self.problem.observations - f_theta
        if self.problem.include_discrepancy:
            quad = _gaussian_quad(state.chol, resid)
            if quad <= 0:
                return -math.inf
            return -0.5 * state.logdet - 0.5 * self.n * math.log(quad)
        u = float(kp[0])
        return -0.5 * self.n * u - 0.5 * float(resid @ resid) * math.exp(-u)

    def kernel_log_prior(self, kp, state):
        if self.problem.include_discrepancy:
            return state.log_prior
        return 0.0

    def run(self):
        problem, config = self.problem, self.config
        theta, f_theta, kp, state = self.initial_state()
        loglik = self.log_lik(f_theta, kp, state)
        lp_theta = problem.log_prior_theta(theta)
        lp_kernel = self.kernel_log_prior(kp, state)
        if not np.isfinite(loglik + lp_theta + lp_kernel):
            raise CalibrationError("the posterior is not finite at the initial point")

        lo, hi = problem.theta_bounds[:, 0], problem.theta_bounds[:, 1]
        kept_theta, kept_kp, kept_lp, kept_offdiag = [], [], [], []
        accept = [0, 0]
        batch_accept = [0, 0]
        post_accept = [0, 0]
        post_total = 0
        batches = 0

        for it in range(config.iterations):
            adapting = it < config.burn_in
            # -- block 1: calibration parameters, reflected Gaussian walk
            scale_t = self.theta_scales * math.exp(self.log_factor[0])
            prop = theta + self.rng.normal(size=theta.size) * scale_t
            prop = _reflect_into(prop, lo, hi)
            accepted = False
            f_prop = self.simulate(prop)
            if f_prop is not None:
                loglik_prop = self.log_lik(f_prop, kp, state)
                lp_theta_prop = problem.log_prior_theta(prop)
                delta = (loglik_prop + lp_theta_prop) - (loglik + lp_theta)
                if np.isfinite(delta) and math.log(self.rng.uniform()) < delta:
                    theta, f_theta = prop, f_prop
                    loglik, lp_theta = loglik_prop, lp_theta_prop
                    accepted = True
            accept[0] += accepted
            batch_accept[0] += accepted
            if not adapting:
                post_accept[0] += accepted

            # -- block 2: correlation (or noise) parameters, joint Gaussian walk
            scale_k = self.kernel_scale * math.exp(self.log_factor[1])
            kp_prop = kp + self.rng.normal(size=self.kp_dim) * scale_k
            accepted = False
            if np.all(np.abs(kp_prop) <= _KP_LIMIT):
                try:
                    state_prop = (_DiscrepancyState(problem, self.workspace, kp_prop)
                                  if problem.include_discrepancy else None)
                    loglik_prop = self.log_lik(f_theta, kp_prop, state_prop)
                    lp_kernel_prop = self.kernel_log_prior(kp_prop, state_prop)
                    delta = (loglik_prop + lp_kernel_prop) - (loglik + lp_kernel)
                    if np.isfinite(delta) and math.log(self.rng.uniform()) < delta:
                        kp, state = kp_prop, state_prop
                        loglik, lp_kernel = loglik_prop, lp_kernel_prop
                        accepted = True
                except ConditioningError:
                    pass
            accept[1] += accepted
            batch_accept[1] += accepted
            if not adapting:
                post_accept[1] += accepted

            if adapting and (it + 1) % config.adapt_interval == 0:
                batches += 1
                step = 1.0 / math.sqrt(batches)
                for b in range(2):
                    rate = batch_accept[b] / config.adapt_interval
                    self.log_factor[b] += step * (rate - config.target_acceptance)
                    self.log_factor[b] = min(max(self.log_factor[b], math.log(1e-6)),
                                             math.log(1e6))
                    batch_accept[b] = 0

            if it >= config.burn_in:
                post_total += 1
                if (it - config.burn_in) % config.thinning == 0:
                    kept_theta.append(theta.copy())
                    kept_kp.append(kp.copy())
                    kept_lp.append(loglik + lp_theta + lp_kernel)
                    if problem.include_discrepancy:
                        kept_offdiag.append(state.max_offdiag)

        rates = [post_accept[b] / post_total for b in range(2)]
        max_offdiag = np.asarray(kept_offdiag) if problem.include_discrepancy else None
        warning = False
        if max_offdiag is not None and max_offdiag.size:
            if float(np.median(max_offdiag)) > 0.99:
                warning = True
                logger.warning(
                    "posterior correlations are close to one: the discrepancy term "
                    "may be absorbing most of the field-data variability"
                )
        names = problem.theta_names or tuple(f"theta_{i + 1}" for i in range(problem.n_theta))
        chain = McmcChain(
            theta=np.asarray(kept_theta),
            kernel_params=np.asarray(kept_kp),
            log_post=np.asarray(kept_lp),
            accept_theta=rates[0],
            accept_kernel=rates[1],
            seed=config.seed,
            iterations=config.iterations,
            burn_in=config.burn_in,
            thinning=config.thinning,
            include_discrepancy=problem.include_discrepancy,
            theta_names=names,
            kernel_param_names=self.kp_names,
            max_offdiag=max_offdiag,
            identifiability_warning=warning,
            final_scales=(float(self.theta_scales.mean() * math.exp(self.log_factor[0])),
                          float(self.kernel_scale * math.exp(self.log_factor[1]))),
            simulator_incidents=self.incidents,
        )
        if min(rates) == 0.0:
            raise CalibrationError(
                "a Metropolis block accepted nothing after adaptation was frozen; "
                "the attached chain holds the trace",
                chain=chain,
            )
        return chain


def calibrate(problem, config=None):
    """Sample the calibration posterior; returns an :class:`McmcChain`.

    Deterministic for a fixed seed and configuration.
    """
    config = config or McmcConfig()
    return _Sampler(problem, config).run()


@dataclass(frozen=True)
class CalibrationPrediction:
    """Posterior predictive summary at the requested points."""

    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    samples: np.ndarray


def calib_predict(problem, chain, points, level=0.95):
    """Posterior predictive of reality at new points.

    Each retained draw contributes the computer model at that draw's theta
    plus, when the discrepancy is enabled, the conditional mean of the
    discrepancy given the field residuals at the draw's correlation
    parameters; the summary aggregates across draws.
    """
    require(chain.n_draws > 0, "the chain holds no draws")
    require(0.0 < level < 1.0, "level must lie strictly between 0 and 1")
    points = as_design_matrix(points, name="prediction points")
    require(points.shape[1] == problem.inputs.shape[1],
            "prediction points must match the field-input dimension")
    preds = np.empty((chain.n_draws, points.shape[0]))
    for i in range(chain.n_draws):
        theta = chain.theta[i]
        f_points = problem.simulator.evaluate(points, theta)
        if problem.include_discrepancy:
            kp = chain.kernel_params[i]
            spec = _kernel_spec_at(problem, kp)
            corr = build_correlation(spec, problem.inputs).values
            chol, _ = cholesky_with_jitter(corr)
            resid = problem.observations - problem.simulator.evaluate(problem.inputs, theta)
            white = scipy.linalg.solve_triangular(chol, resid, lower=True)
            alpha = scipy.linalg.solve_triangular(chol.T, white, lower=False)
            cross = cross_correlation(spec, problem.inputs, points)
            preds[i] = f_points + cross.T @ alpha
        else:
            preds[i] = f_points
    tail = 0.5 * (1.0 - level)
    return CalibrationPrediction(
        mean=preds.mean(axis=0),
        lower=np.quantile(preds, tail, axis=0),
        upper=np.quantile(preds, 1.0 - tail, axis=0),
        level=level,
        samples=preds,
    )


def ess_batch_means(values):
    """Effective sample size by the batch-means estimator.

    Returns 1.0 for degenerate (constant) chains; the estimate is clipped to
    [1, len(values)].
    """
    x = np.asarray(values, dtype=float).reshape(-1)
    n = x.size
    if n < 8:
        return 1.0
    var_x = float(x.var(ddof=1))
    scale = max(float(np.abs(x).max()), 1.0)
    if var_x <= (1e-13 * scale) ** 2:
        return 1.0
    m = max(10, int(round(n ** (1.0 / 3.0))))
    b = n // m
    if b < 2:
        return 1.0
    means = x[: b * m].reshape(b, m).mean(axis=1)
    var_bm = float(means.var(ddof=1))
    if var_bm <= 0.0:
        return float(n)
    ess = n * var_x / (m * var_bm)
    return float(min(max(ess, 1.0), n))
