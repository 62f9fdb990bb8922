"""Generalized least squares and likelihood machinery shared by all emulators.

Every evaluation goes through a single Cholesky factorization of the
correlation matrix; all downstream quantities (trend estimate, residual
quadratic form, log-determinants, gradients) are obtained by triangular
substitution, never by forming explicit inverses.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConditioningError, FitError
from .kernels import CorrelationWorkspace, KernelSpec, build_correlation
from .validation import as_design_matrix, as_output_vector, frozen_array, require

# Diagonal inflation fractions tried when a plain Cholesky fails, relative to
# the mean diagonal entry. Near-singular correlation matrices are expected in
# the flat-correlation regime; documented regularization beats silent failure.
JITTER_FRACTIONS = tuple(1e-10 * 10.0**k for k in range(7))  # 1e-10 .. 1e-4


def cholesky_with_jitter(matrix):
    """Lower Cholesky factor, escalating diagonal inflation on failure.

    Returns ``(chol, jitter)`` where ``jitter`` is the absolute amount added
    to the diagonal (0.0 when the plain factorization succeeds). Raises
    :class:`ConditioningError` carrying the attempted jitter levels when the
    largest inflation still fails.
    """
    try:
        return np.linalg.cholesky(matrix), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(matrix)))
    eye = np.eye(matrix.shape[0])
    attempted = []
    for fraction in JITTER_FRACTIONS:
        jitter = fraction * scale
        attempted.append(jitter)
        try:
            return np.linalg.cholesky(matrix + jitter * eye), jitter
        except np.linalg.LinAlgError:
            continue
    raise ConditioningError(
        "correlation matrix is not positive definite; diagonal inflation up to "
        f"{attempted[-1]:.3e} was attempted without success",
        attempted_jitters=attempted,
    )


@dataclass(frozen=True)
class TrendBasis:
    """Mean basis functions h_1..h_q; the default is the constant basis."""

    kind: str = "constant"
    functions: tuple = ()

    def __post_init__(self):
        require(self.kind in ("constant", "linear", "custom"),
                "trend basis kind must be 'constant', 'linear' or 'custom'")
        if self.kind == "custom":
            require(len(self.functions) >= 1, "custom trend basis needs at least one function")
        object.__setattr__(self, "functions", tuple(self.functions))

    def n_functions(self, n_inputs):
        if self.kind == "constant":
            return 1
        if self.kind == "linear":
            return 1 + n_inputs
        return len(self.functions)

    def matrix(self, inputs):
        inputs = np.asarray(inputs, dtype=float)
        n = inputs.shape[0]
        if self.kind == "constant":
            return np.ones((n, 1))
        if self.kind == "linear":
            return np.hstack([np.ones((n, 1)), inputs])
        cols = [np.asarray([float(fn(x)) for x in inputs]) for fn in self.functions]
        return np.column_stack(cols)


def basis_matrix_or_none(basis, design):
    """H for a basis, or None for a trend-free (q = 0) model."""
    if basis is None:
        return None
    return basis.matrix(design)


def _rank_deficient_columns(linv_h):
    q, r, piv = scipy.linalg.qr(linv_h, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(linv_h.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int((diag > tol).sum())
    return sorted(int(c) for c in piv[rank:])


def _gls_core(chol, basis_mat, outputs_t):
    """Shared GLS solve for a (n, k) block of output columns.

    Returns (beta (q, k), s2 (k,), resid_solve (n, k), linv_h, gram_chol,
    logdet_corr, logdet_gram).
    """
    n = chol.shape[0]
    linv_f = scipy.linalg.solve_triangular(chol, outputs_t, lower=True)
    logdet_corr = 2.0 * float(np.sum(np.log(np.diag(chol))))
    if basis_mat is None or basis_mat.shape[1] == 0:
        q = 0
        beta = np.zeros((0, outputs_t.shape[1]))
        linv_h = np.zeros((n, 0))
        gram_chol = np.zeros((0, 0))
        resid_white = linv_f
        logdet_gram = 0.0
    else:
        q = basis_mat.shape[1]
        require(n > q, f"need more observations ({n}) than trend functions ({q})")
        linv_h = scipy.linalg.solve_triangular(chol, basis_mat, lower=True)
        gram = linv_h.T @ linv_h
        try:
            gram_chol = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError:
            cols = _rank_deficient_columns(linv_h)
            raise FitError(
                f"trend basis columns {cols} are collinear on this design "
                "(H^T C^-1 H is rank deficient)"
            ) from None
        dmin, dmax = np.diag(gram_chol).min(), np.diag(gram_chol).max()
        if dmin <= 1e-12 * dmax:
            cols = _rank_deficient_columns(linv_h)
            raise FitError(
                f"trend basis columns {cols} are numerically collinear on this design"
            )
        rhs = linv_h.T @ linv_f
        half = scipy.linalg.solve_triangular(gram_chol, rhs, lower=True)
        beta = scipy.linalg.solve_triangular(gram_chol.T, half, lower=False)
        resid_white = linv_f - linv_h @ beta
        logdet_gram = 2.0 * float(np.sum(np.log(np.diag(gram_chol))))
    s2 = (resid_white * resid_white).sum(axis=0)
    white_norm2 = (linv_f * linv_f).sum(axis=0)
    resid_solve = scipy.linalg.solve_triangular(chol.T, resid_white, lower=False)
    return beta, s2, resid_solve, linv_h, gram_chol, logdet_corr, logdet_gram, white_norm2


@dataclass(frozen=True)
class GlsState:
    """Cholesky factor and the GLS quantities derived from it.

    ``resid_solve`` is C^-1 (f - H beta_hat), cached because prediction and
    likelihood gradients both need it.
    """

    chol: np.ndarray
    beta_hat: np.ndarray
    s2: float
    logdet_corr: float
    logdet_gram: float
    linv_h: np.ndarray = field(repr=False)
    gram_chol: np.ndarray = field(repr=False)
    resid_solve: np.ndarray = field(repr=False)
    jitter: float = 0.0
    white_norm2: float = 0.0

    @property
    def n_trend(self):
        return self.beta_hat.shape[0]

    @property
    def degenerate(self):
        """True when the residual quadratic form is zero at working precision."""
        return self.s2 <= 1e-24 * max(self.white_norm2, 1e-300)


def gls_solve(chol, basis_mat, outputs, jitter=0.0):
    """Generalized least squares given a Cholesky factor of the correlation.

    ``basis_mat`` may be None for a trend-free model. Raises
    :class:`FitError` naming the offending columns when H^T C^-1 H is rank
    deficient.
    """
    outputs = as_output_vector(outputs, n=chol.shape[0])
    beta, s2, resid_solve, linv_h, gram_chol, ld_c, ld_g, white2 = _gls_core(
        chol, basis_mat, outputs[:, None]
    )
    return GlsState(
        chol=chol,
        beta_hat=beta[:, 0],
        s2=float(s2[0]),
        logdet_corr=ld_c,
        logdet_gram=ld_g,
        linv_h=linv_h,
        gram_chol=gram_chol,
        resid_solve=resid_solve[:, 0],
        jitter=jitter,
        white_norm2=float(white2[0]),
    )


def q_matrix(chol, linv_h, gram_chol):
    """The matrix Q = C^-1 - C^-1 H (H^T C^-1 H)^-1 H^T C^-1, symmetrized.

    This is the projection-weighted inverse appearing in likelihood gradients
    and in the Fisher information of the trend-integrated model.
    """
    n = chol.shape[0]
    corr_inv = scipy.linalg.cho_solve((chol, True), np.eye(n))
    if linv_h.shape[1] > 0:
        cinv_h = scipy.linalg.solve_triangular(chol.T, linv_h, lower=False)
        w = scipy.linalg.solve_triangular(gram_chol, cinv_h.T, lower=True)
        corr_inv = corr_inv - w.T @ w
    return 0.5 * (corr_inv + corr_inv.T)


def _assemble(spec, design, basis):
    design = as_design_matrix(design)
    spec.check_design(design)
    corr = build_correlation(spec, design)
    chol, jitter = cholesky_with_jitter(corr.values)
    return design, basis_matrix_or_none(basis, design), chol, jitter


def log_marginal_likelihood(spec, design, outputs, basis=TrendBasis()):
    """Log integrated likelihood of the range (and nugget) parameters.

    Trend and variance parameters are integrated out analytically; additive
    constants are dropped, so only differences across parameter values are
    meaningful for a fixed dataset.
    """
    design, basis_mat, chol, jitter = _assemble(spec, design, basis)
    state = gls_solve(chol, basis_mat, outputs, jitter=jitter)
    n = design.shape[0]
    q = state.n_trend
    require(n > q, f"need more observations ({n}) than trend functions ({q})")
    if state.degenerate:
        raise FitError(
            "outputs lie exactly in the span of the trend basis; the marginal "
            "likelihood is unbounded (zero-variance data)"
        )
    return (
        -0.5 * state.logdet_corr
        - 0.5 * state.logdet_gram
        - 0.5 * (n - q) * math.log(state.s2)
    )


def log_full_likelihood(spec, design, outputs, basis, beta, sigma2):
    """Multivariate-normal log density of the outputs at fixed parameters."""
    require(sigma2 > 0, "sigma2 must be positive")
    design, basis_mat, chol, _ = _assemble(spec, design, basis)
    outputs = as_output_vector(outputs, n=design.shape[0])
    n = design.shape[0]
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if basis_mat is None:
        require(beta.size == 0, "trend-free model takes an empty beta")
        resid = outputs
    else:
        require(beta.size == basis_mat.shape[1], "beta length must match the trend basis")
        resid = outputs - basis_mat @ beta
    white = scipy.linalg.solve_triangular(chol, resid, lower=True)
    logdet_corr = 2.0 * float(np.sum(np.log(np.diag(chol))))
    quad = float(white @ white)
    return -0.5 * (n * math.log(2.0 * math.pi * sigma2) + logdet_corr + quad / sigma2)


def grad_log_marginal_likelihood(spec, design, outputs, basis=TrendBasis()):
    """Gradient of :func:`log_marginal_likelihood` in optimizer coordinates.

    Coordinates are the log inverse ranges, plus log nugget when the spec
    carries a nugget; entries follow the order of ``spec.ranges``.
    """
    design = as_design_matrix(design)
    spec.check_design(design)
    ws = CorrelationWorkspace(spec.mode, spec.families, design)
    corr, grads = ws.matrix_and_range_grads(spec.ranges, spec.nugget)
    chol, jitter = cholesky_with_jitter(corr)
    state = gls_solve(chol, basis_matrix_or_none(basis, design), outputs, jitter=jitter)
    n = design.shape[0]
    q = state.n_trend
    if state.degenerate:
        raise FitError("outputs lie exactly in the span of the trend basis")
    qmat = q_matrix(chol, state.linv_h, state.gram_chol)
    alpha = state.resid_solve
    coeff = 0.5 * (n - q) / state.s2
    out = []
    for l, dcorr in enumerate(grads):
        trace_term = float((qmat * dcorr).sum())
        quad_term = float(alpha @ dcorr @ alpha)
        d_range = -0.5 * trace_term + coeff * quad_term
        out.append(-spec.ranges[l] * d_range)
    if spec.nugget is not None:
        trace_term = float(np.trace(qmat))
        quad_term = float(alpha @ alpha)
        d_eta = -0.5 * trace_term + coeff * quad_term
        out.append(spec.nugget * d_eta)
    return np.asarray(out)


@dataclass(frozen=True)
class GpModel:
    """Immutable fitted scalar-output GP emulator."""

    design: np.ndarray
    outputs: np.ndarray
    basis: TrendBasis | None
    kernel: KernelSpec
    gls: GlsState
    sigma2_hat: float
    provenance: dict

    @property
    def n_obs(self):
        return self.design.shape[0]

    @property
    def n_inputs(self):
        return self.design.shape[1]

    @property
    def n_trend(self):
        return self.gls.n_trend

    @property
    def dof(self):
        return self.n_obs - self.n_trend


def build_gp_model(design, outputs, kernel, basis=TrendBasis(), provenance=None):
    """Assemble a :class:`GpModel` at fixed kernel hyperparameters.

    Used by the fitting routine at the optimum and directly by callers who
    already know the hyperparameters they want.
    """
    design = as_design_matrix(design)
    kernel.check_design(design)
    outputs = as_output_vector(outputs, n=design.shape[0])
    basis_mat = basis_matrix_or_none(basis, design)
    q = 0 if basis_mat is None else basis_mat.shape[1]
    require(design.shape[0] > q, "need more observations than trend functions")
    corr = build_correlation(spec=kernel, design=design)
    chol, jitter = cholesky_with_jitter(corr.values)
    state = gls_solve(chol, basis_mat, outputs, jitter=jitter)
    sigma2_hat = state.s2 / (design.shape[0] - q)
    return GpModel(
        design=frozen_array(design),
        outputs=frozen_array(outputs),
        basis=basis,
        kernel=kernel,
        gls=state,
        sigma2_hat=float(sigma2_hat),
        provenance=dict(provenance or {}),
    )
