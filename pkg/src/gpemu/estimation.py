"""Range-parameter estimation by MLE, MMLE, or MMPE.

Optimization runs in z-coordinates: z_l = log(1/range_l) for each input
dimension, plus log(nugget) when the nugget is estimated. This
parameterization keeps both degenerate regimes (correlation collapsing to
the identity or to the all-ones matrix) at infinite coordinate values, where
the posterior of a non-flat prior decays.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .core import (
    GpModel,
    TrendBasis,
    basis_matrix_or_none,
    build_gp_model,
    cholesky_with_jitter,
    q_matrix,
)
from .errors import ConditioningError, FitError, NumericalError, PriorError, ValidationError
from .kernels import CorrelationFamily, CorrelationWorkspace, KernelSpec
from .priors import REJECT_LOG_PRIOR, PriorSpec, grad_log_jr_prior, log_jr_prior, log_reference_prior, materialize_prior
from .validation import as_design_matrix, as_output_matrix, require

ESTIMATORS = ("mle", "mmle", "mmpe")

_PENALTY = -1e30

# Box bounds on the estimated nugget: wide enough to cover noise-free and
# noise-dominated regimes without overflowing exp().
NUGGET_BOUNDS = (1e-8, 1e4)
_DEFAULT_NUGGET_START = 1e-3


@dataclass(frozen=True)
class FitConfig:
    """Estimator choice and optimizer settings for one fit.

    ``z_bounds`` optionally overrides the design-derived box bounds on the
    optimizer coordinates: a tuple of (lower, upper) pairs, one per log
    inverse range, plus one for the log nugget when it is estimated.
    """

    estimator: str = "mmpe"
    prior: PriorSpec = PriorSpec("jr")
    starts: int = 2
    max_iter: int = 200
    grad_tol: float = 1e-6
    step_tol: float = 1e-12
    seed: int = 0
    fd_step: float = 1e-4
    inert_threshold: float = 0.1
    z_bounds: tuple | None = None

    def __post_init__(self):
        require(self.estimator in ESTIMATORS, f"estimator must be one of {ESTIMATORS}")
        require(self.starts >= 1, "need at least one optimizer start")
        require(self.max_iter >= 1, "max_iter must be positive")
        if self.z_bounds is not None:
            bounds = tuple((float(a), float(b)) for a, b in self.z_bounds)
            for a, b in bounds:
                require(a < b, "each z_bounds pair must be (lower, upper) with lower < upper")
            object.__setattr__(self, "z_bounds", bounds)
        if self.estimator == "mmpe" and self.prior.variant == "flat":
            warnings.warn(
                "MMPE with a flat prior is identical to MMLE; choose a "
                "reference or jr prior for the robustness benefit",
                UserWarning,
                stacklevel=2,
            )


@dataclass(frozen=True)
class StartTrace:
    """One optimizer start: path of accepted objective values and outcome."""

    index: int
    z0: tuple
    objective_path: tuple
    iterations: int
    converged: bool
    message: str
    z_opt: tuple
    objective: float


@dataclass(frozen=True)
class FitReport:
    """Everything observable about one fit, winner included."""

    starts: tuple
    winner: int
    z_hat: tuple
    objective: float
    grad_norm: float
    condition_number: float
    inert_inputs: tuple | None
    degenerate_outputs: tuple
    bounds: tuple
    n_evaluations: int
    rejected_evaluations: int
    max_jitter: float
    retried_shrunk_bounds: bool


class Objective:
    """Maximized criterion over z-coordinates, shared by all output columns.

    One Cholesky factorization per evaluation serves every output column;
    per-column work is O(n^2) triangular solves. Evaluations that fail for
    numerical reasons return a large negative penalty instead of raising, so
    line searches can back off.
    """

    def __init__(self, design, outputs, families, mode, basis, estimator, prior,
                 nugget_free, fixed_nugget, fd_step=1e-4):
        self.design = design
        self.families = tuple(families)
        self.mode = mode
        self.estimator = estimator
        self.prior = prior
        self.nugget_free = nugget_free
        self.fixed_nugget = fixed_nugget
        self.fd_step = fd_step
        self.workspace = CorrelationWorkspace(mode, self.families, design)
        self.basis = basis
        self.basis_mat = basis_matrix_or_none(basis, design)
        self.n = design.shape[0]
        self.q = 0 if self.basis_mat is None else self.basis_mat.shape[1]
        require(self.n > self.q, "need more observations than trend functions")
        self.outputs_t = outputs.T.copy()  # (n, k)
        self.k = self.outputs_t.shape[1]
        self.n_range = self.workspace.n_range_params
        self.dim = self.n_range + (1 if nugget_free else 0)
        self.n_evaluations = 0
        self.rejected = 0
        self.max_jitter = 0.0
        self.last = None  # (z, value) cache for trace callbacks

    def split(self, z):
        ranges = tuple(np.exp(-np.asarray(z[: self.n_range])))
        if self.nugget_free:
            nugget = float(np.exp(z[self.n_range]))
        else:
            nugget = self.fixed_nugget
        return ranges, nugget

    def spec_at(self, z):
        ranges, nugget = self.split(z)
        return KernelSpec(mode=self.mode, families=self.families, ranges=ranges, nugget=nugget)

    def _likelihood_value_grad(self, z, want_grad):
        ranges, nugget = self.split(z)
        corr, grads = self.workspace.matrix_and_range_grads(ranges, nugget)
        chol, jitter = cholesky_with_jitter(corr)
        self.max_jitter = max(self.max_jitter, jitter)
        linv_f = scipy.linalg.solve_triangular(chol, self.outputs_t, lower=True)
        logdet_corr = 2.0 * float(np.sum(np.log(np.diag(chol))))
        if self.q:
            linv_h = scipy.linalg.solve_triangular(chol, self.basis_mat, lower=True)
            gram_chol = np.linalg.cholesky(linv_h.T @ linv_h)
            half = scipy.linalg.solve_triangular(gram_chol, linv_h.T @ linv_f, lower=True)
            beta = scipy.linalg.solve_triangular(gram_chol.T, half, lower=False)
            resid_white = linv_f - linv_h @ beta
            logdet_gram = 2.0 * float(np.sum(np.log(np.diag(gram_chol))))
        else:
            linv_h = np.zeros((self.n, 0))
            gram_chol = np.zeros((0, 0))
            resid_white = linv_f
            logdet_gram = 0.0
        s2 = (resid_white * resid_white).sum(axis=0)
        white2 = (linv_f * linv_f).sum(axis=0)
        if np.any(s2 <= 1e-24 * np.maximum(white2, 1e-300)):
            return _PENALTY, np.zeros(self.dim)
        if self.estimator == "mle":
            dof_coeff = self.n
            value = -0.5 * self.k * logdet_corr - 0.5 * self.n * float(np.log(s2).sum())
        else:
            dof_coeff = self.n - self.q
            value = (
                -0.5 * self.k * (logdet_corr + logdet_gram)
                - 0.5 * (self.n - self.q) * float(np.log(s2).sum())
            )
        if not want_grad:
            return value, None
        alphas = scipy.linalg.solve_triangular(chol.T, resid_white, lower=False)
        if self.estimator == "mle":
            smat = scipy.linalg.cho_solve((chol, True), np.eye(self.n))
        else:
            smat = q_matrix(chol, linv_h, gram_chol)
        inv_s2 = 1.0 / s2
        grad = np.empty(self.dim)
        for l, dcorr in enumerate(grads):
            trace_term = float((smat * dcorr).sum())
            quad = ((dcorr @ alphas) * alphas).sum(axis=0)
            d_range = -0.5 * self.k * trace_term + 0.5 * dof_coeff * float(quad @ inv_s2)
            grad[l] = -ranges[l] * d_range
        if self.nugget_free:
            trace_term = float(np.trace(smat))
            quad = (alphas * alphas).sum(axis=0)
            d_eta = -0.5 * self.k * trace_term + 0.5 * dof_coeff * float(quad @ inv_s2)
            grad[self.n_range] = nugget * d_eta
        return value, grad

    def _log_prior(self, z):
        if self.estimator != "mmpe" or self.prior.variant == "flat":
            return 0.0
        ranges, nugget = self.split(z)
        spec = KernelSpec(mode=self.mode, families=self.families, ranges=ranges, nugget=nugget)
        if self.prior.variant == "reference":
            return log_reference_prior(spec, self.design, self.basis,
                                       include_nugget=self.nugget_free)
        inv_ranges = np.exp(np.asarray(z[: self.n_range]))
        eta = math.exp(z[self.n_range]) if self.nugget_free else None
        return log_jr_prior(self.prior, inv_ranges, nugget=eta)

    def _grad_log_prior(self, z):
        if self.estimator != "mmpe" or self.prior.variant == "flat":
            return np.zeros(self.dim)
        if self.prior.variant == "jr":
            inv_ranges = np.exp(np.asarray(z[: self.n_range]))
            eta = math.exp(z[self.n_range]) if self.nugget_free else None
            return grad_log_jr_prior(self.prior, inv_ranges, nugget=eta)
        # Closed-form reference-prior derivatives are not worth their cost;
        # central differences on the prior term alone keep the likelihood
        # part analytic.
        grad = np.zeros(self.dim)
        for i in range(self.dim):
            h = self.fd_step * max(1.0, abs(z[i]))
            zp, zm = np.array(z), np.array(z)
            zp[i] += h
            zm[i] -= h
            try:
                vp, vm = self._log_prior(zp), self._log_prior(zm)
            except NumericalError:
                continue
            if vp <= REJECT_LOG_PRIOR / 2 or vm <= REJECT_LOG_PRIOR / 2:
                continue
            grad[i] = (vp - vm) / (2.0 * h)
        return grad

    def value(self, z):
        v, _ = self.value_and_grad(z, want_grad=False)
        return v

    def value_and_grad(self, z, want_grad=True):
        self.n_evaluations += 1
        try:
            value, grad = self._likelihood_value_grad(z, want_grad)
            if value <= _PENALTY / 2:
                self.rejected += 1
                self.last = (np.array(z), _PENALTY)
                return _PENALTY, np.zeros(self.dim)
            prior_value = self._log_prior(z)
            if prior_value <= REJECT_LOG_PRIOR / 2:
                self.rejected += 1
                self.last = (np.array(z), _PENALTY)
                return _PENALTY, np.zeros(self.dim)
            value += prior_value
            if want_grad:
                grad = grad + self._grad_log_prior(z)
        except (ConditioningError, PriorError, FitError, np.linalg.LinAlgError):
            self.rejected += 1
            self.last = (np.array(z), _PENALTY)
            return _PENALTY, np.zeros(self.dim)
        if not np.isfinite(value) or (want_grad and not np.all(np.isfinite(grad))):
            self.rejected += 1
            self.last = (np.array(z), _PENALTY)
            return _PENALTY, np.zeros(self.dim)
        self.last = (np.array(z), value)
        return value, (grad if want_grad else None)


def _column_spacing(values):
    unique = np.unique(values)
    if unique.size < 2:
        return None
    return float(np.diff(unique).min())


def design_z_bounds(mode, design):
    """Box bounds on z: inverse ranges in [1e-3/span, 1e3/spacing] per coordinate.

    The window spans both degenerate regimes without letting exp() overflow.
    Degenerate columns (zero span) fall back to unit scale.
    """
    design = as_design_matrix(design)
    if mode == "separable":
        spans, spacings = [], []
        for l in range(design.shape[1]):
            col = design[:, l]
            span = float(col.max() - col.min())
            spacing = _column_spacing(col)
            spans.append(span if span > 0 else 1.0)
            spacings.append(spacing if spacing else (span if span > 0 else 1.0))
    else:
        diff = design[:, None, :] - design[None, :, :]
        dists = np.sqrt((diff * diff).sum(axis=2))
        positive = dists[dists > 0]
        span = float(dists.max()) if dists.size else 1.0
        spans = [span if span > 0 else 1.0]
        spacings = [float(positive.min()) if positive.size else spans[0]]
    lo = np.log(1e-3 / np.asarray(spans))
    hi = np.log(1e3 / np.asarray(spacings))
    return lo, hi, np.asarray(spans)


def heuristic_start(families, spans, n_inputs):
    """Default start: range_l = span_l * p**(-1/roughness_l) in z-coordinates."""
    z0 = []
    for fam, span in zip(families, spans):
        roughness = fam.roughness if fam.roughness is not None else 1.0
        z0.append(math.log(n_inputs ** (1.0 / roughness) / span))
    return np.asarray(z0)


def _degenerate_columns(basis_mat, outputs_t):
    """Output columns lying exactly in the span of the trend basis."""
    n, k = outputs_t.shape
    if basis_mat is None or basis_mat.shape[1] == 0:
        resid = outputs_t
    else:
        coef, *_ = np.linalg.lstsq(basis_mat, outputs_t, rcond=None)
        resid = outputs_t - basis_mat @ coef
    norms = np.abs(outputs_t).max(axis=0)
    flat = np.abs(resid).max(axis=0) <= 1e-12 * np.maximum(norms, 1.0)
    return [int(j) for j in np.nonzero(flat)[0]]


def _projected_grad_norm(grad, z, lo, hi):
    g = np.array(grad)
    at_lo = np.asarray(z) <= lo + 1e-12
    at_hi = np.asarray(z) >= hi - 1e-12
    g[at_lo & (g < 0)] = 0.0
    g[at_hi & (g > 0)] = 0.0
    return float(np.abs(g).max()) if g.size else 0.0


def _run_starts(objective, z0s, lo, hi, config, index_offset=0):
    bounds = list(zip(lo, hi))
    traces = []
    for idx, z0 in enumerate(z0s, start=index_offset):
        path = []

        def fun(z):
            v, g = objective.value_and_grad(z)
            return -v, -g

        def callback(zk):
            if objective.last is not None and np.array_equal(objective.last[0], zk):
                path.append(objective.last[1])
            else:
                path.append(objective.value(zk))

        result = scipy.optimize.minimize(
            fun,
            np.clip(z0, lo, hi),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            callback=callback,
            options={
                "maxiter": config.max_iter,
                "ftol": config.step_tol,
                "gtol": config.grad_tol,
            },
        )
        # A line search exhausted at the floating-point noise floor
        # ("ABNORMAL") is convergence for practical purposes: near-singular
        # correlation matrices make the objective noisy at machine precision
        # while the analytic gradient stays accurate.
        finished = bool(result.success) or "ABNORMAL" in str(result.message).upper()
        traces.append(
            StartTrace(
                index=idx,
                z0=tuple(float(v) for v in z0),
                objective_path=tuple(path),
                iterations=int(result.nit),
                converged=finished and -result.fun > _PENALTY / 2,
                message=str(result.message),
                z_opt=tuple(float(v) for v in result.x),
                objective=float(-result.fun),
            )
        )
    return traces


def _pick_winner(traces):
    best = None
    for pos, trace in enumerate(traces):
        if not trace.converged:
            continue
        if best is None or trace.objective > traces[best].objective:
            best = pos
    return best


def run_fit(design, outputs, families, mode, basis, estimator, prior,
            nugget_free, fixed_nugget, config, allow_degenerate):
    """Shared multi-start optimization over one or many output columns.

    Returns (z_hat, spec_hat, objective, traces, winner, lo, hi, degenerate,
    retried, grad_norm); the scalar and multi-output fits assemble their
    models and reports from these pieces.
    """
    basis_mat = basis_matrix_or_none(basis, design)
    degenerate = _degenerate_columns(basis_mat, outputs.T)
    if len(degenerate) == outputs.shape[0]:
        raise FitError(
            "every output column is exactly reproduced by the trend basis; "
            "zero-variance data cannot be fit (exact-fit diagnostic)"
        )
    if degenerate and not allow_degenerate:
        raise FitError(
            "outputs are exactly reproduced by the trend basis; "
            "zero-variance data cannot be fit (exact-fit diagnostic)"
        )
    active = [j for j in range(outputs.shape[0]) if j not in degenerate]
    objective = Objective(
        design=design,
        outputs=outputs[active],
        families=families,
        mode=mode,
        basis=basis,
        estimator=estimator,
        prior=prior,
        nugget_free=nugget_free,
        fixed_nugget=fixed_nugget,
        fd_step=config.fd_step,
    )
    lo, hi, spans = design_z_bounds(mode, design)
    if nugget_free:
        lo = np.append(lo, math.log(NUGGET_BOUNDS[0]))
        hi = np.append(hi, math.log(NUGGET_BOUNDS[1]))
    if config.z_bounds is not None:
        require(len(config.z_bounds) == objective.dim,
                f"z_bounds needs {objective.dim} pairs for this fit")
        lo = np.asarray([a for a, _ in config.z_bounds])
        hi = np.asarray([b for _, b in config.z_bounds])
    rng = np.random.default_rng(config.seed)
    z_heuristic = heuristic_start(objective.families, spans, design.shape[1])
    if nugget_free:
        z_heuristic = np.append(z_heuristic, math.log(_DEFAULT_NUGGET_START))
    z0s = [z_heuristic] + [rng.uniform(lo, hi) for _ in range(config.starts - 1)]

    traces = _run_starts(objective, z0s, lo, hi, config)
    winner = _pick_winner(traces)
    retried = False
    if winner is None:
        # One retry on shrunken bounds guards against NaN-riddled corners of
        # the box; a second failure is reported, not hidden.
        center = np.clip(z_heuristic, lo, hi)
        width = (hi - lo) / 4.0
        lo2, hi2 = center - width, center + width
        z0s2 = [np.clip(z_heuristic, lo2, hi2)] + [
            rng.uniform(lo2, hi2) for _ in range(config.starts - 1)
        ]
        traces = traces + _run_starts(objective, z0s2, lo2, hi2, config,
                                      index_offset=len(traces))
        winner = _pick_winner(traces)
        retried = True
        if winner is not None:
            lo, hi = lo2, hi2
    if winner is None:
        report = _report(traces, None, None, objective, lo, hi, degenerate, retried,
                         float("nan"), float("nan"), None)
        raise FitError("no optimizer start converged; see the attached report", report=report)

    z_hat = np.asarray(traces[winner].z_opt)
    _, grad = objective.value_and_grad(z_hat)
    grad_norm = _projected_grad_norm(grad, z_hat, lo, hi)
    spec_hat = objective.spec_at(z_hat)
    return z_hat, spec_hat, objective, traces, winner, lo, hi, degenerate, retried, grad_norm


def _report(traces, winner, z_hat, objective, lo, hi, degenerate, retried,
            grad_norm, condition_number, inert):
    return FitReport(
        starts=tuple(traces),
        winner=-1 if winner is None else winner,
        z_hat=tuple(float(v) for v in (z_hat if z_hat is not None else ())),
        objective=traces[winner].objective if winner is not None else float("nan"),
        grad_norm=grad_norm,
        condition_number=condition_number,
        inert_inputs=inert,
        degenerate_outputs=tuple(degenerate),
        bounds=tuple((float(a), float(b)) for a, b in zip(lo, hi)),
        n_evaluations=objective.n_evaluations,
        rejected_evaluations=objective.rejected,
        max_jitter=objective.max_jitter,
        retried_shrunk_bounds=retried,
    )


def _normalize_families(families, mode, n_inputs):
    if isinstance(families, CorrelationFamily):
        families = (families,)
    families = tuple(families)
    if mode == "separable" and len(families) == 1 and n_inputs > 1:
        families = families * n_inputs
    return families


def _normalize_nugget(nugget):
    """Returns (nugget_free, fixed_value)."""
    if nugget is None or nugget is False:
        return False, None
    if nugget is True:
        return True, None
    value = float(nugget)
    require(value >= 0, "a fixed nugget must be non-negative")
    return False, value


def inert_input_shares(kernel, design):
    """Normalized sensitivity of each input: inv_range_l * span_l, normalized."""
    require(kernel.mode == "separable", "inert-input detection needs a separable kernel")
    design = as_design_matrix(design)
    spans = design.max(axis=0) - design.min(axis=0)
    weights = spans / np.asarray(kernel.ranges)
    total = weights.sum()
    if total <= 0:
        return np.full(len(kernel.ranges), 1.0 / len(kernel.ranges))
    return weights / total


def detect_inert_inputs(model, threshold=0.1):
    """Flag inputs whose normalized sensitivity falls below ``threshold``.

    Requires a separable fitted model; the non-flat MMPE priors shrink the
    inverse ranges of inputs the outputs do not depend on, so their shares
    collapse.
    """
    if model.kernel.mode != "separable":
        raise ValidationError("inert-input detection is unsupported for isotropic kernels")
    shares = inert_input_shares(model.kernel, model.design)
    return tuple(bool(s < threshold) for s in shares)


def fit_gp(design, outputs, families, *, mode="separable", basis=TrendBasis(),
           nugget=False, config=None):
    """Fit a scalar-output GP emulator; returns ``(GpModel, FitReport)``.

    ``nugget`` may be False (no nugget), True (estimated), or a fixed value.
    The default configuration estimates by MMPE under the jr prior with two
    optimizer starts.
    """
    config = config or FitConfig()
    design = as_design_matrix(design)
    outputs_mat = as_output_matrix(outputs, n=design.shape[0])
    require(outputs_mat.shape[0] == 1, "fit_gp takes a single output vector")
    families = _normalize_families(families, mode, design.shape[1])
    nugget_free, fixed_nugget = _normalize_nugget(nugget)
    prior = materialize_prior(config.prior, design, include_nugget=nugget_free, mode=mode)

    z_hat, spec_hat, objective, traces, winner, lo, hi, degenerate, retried, grad_norm = run_fit(
        design, outputs_mat, families, mode, basis, config.estimator, prior,
        nugget_free, fixed_nugget, config, allow_degenerate=False,
    )
    provenance = {
        "estimator": config.estimator,
        "prior": {"variant": prior.variant, "b1": prior.b1, "b2": prior.b2,
                  "weights": list(prior.weights) if prior.weights else None},
        "seed": config.seed,
        "starts": config.starts,
        "nugget_estimated": nugget_free,
        "objective": traces[winner].objective,
        "iterations": traces[winner].iterations,
        "grad_norm": grad_norm,
        "max_jitter": objective.max_jitter,
    }
    model = build_gp_model(design, outputs_mat[0], spec_hat, basis=basis, provenance=provenance)
    condition = float(np.linalg.cond(model.gls.chol @ model.gls.chol.T))
    inert = None
    if mode == "separable":
        inert = tuple(detect_inert_inputs(model, config.inert_threshold))
    report = _report(traces, winner, z_hat, objective, lo, hi, degenerate, retried,
                     grad_norm, condition, inert)
    return model, report
