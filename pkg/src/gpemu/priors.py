"""Default priors over range (and nugget) parameters.

Two non-flat priors are provided:

* the reference prior, proportional to the square root of the determinant of
  the Fisher information of the trend-and-variance-integrated model, and
* the jointly-robust ("jr") prior over inverse ranges,
  pi(t) proportional to (sum_l w_l t_l)**b1 * exp(-b2 * sum_l w_l t_l),
  a cheap surrogate matching the reference prior's boundary decay while
  admitting closed-form gradients.

All log densities drop normalizing constants: only mode finding and MCMC
ratios consume them.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import TrendBasis, basis_matrix_or_none, cholesky_with_jitter, gls_solve, q_matrix
from .errors import PriorError, ValidationError
from .kernels import CorrelationWorkspace
from .validation import as_design_matrix, require

PRIOR_VARIANTS = ("flat", "reference", "jr")

# Sentinel returned when the Fisher determinant is numerically non-positive:
# large enough to reject the point in optimization without raising mid
# line-search.
REJECT_LOG_PRIOR = -1e30


@dataclass(frozen=True)
class PriorSpec:
    """Choice of prior over range (and nugget) parameters.

    ``weights`` applies to the jr variant only; ``None`` means "derive the
    defaults from the design at fit time" (see :func:`default_jr_weights`).
    """

    variant: str
    b1: float = 0.2
    b2: float = 1.0
    weights: tuple | None = None

    def __post_init__(self):
        require(self.variant in PRIOR_VARIANTS, f"prior variant must be one of {PRIOR_VARIANTS}")
        require(math.isfinite(self.b1), "b1 must be finite")
        require(math.isfinite(self.b2) and self.b2 > 0, "b2 must be positive")
        if self.weights is not None:
            weights = tuple(float(w) for w in self.weights)
            for w in weights:
                require(math.isfinite(w) and w > 0, "jr weights must be positive")
            _check_b1_bound(self.b1, len(weights))
            object.__setattr__(self, "weights", weights)


def _check_b1_bound(b1, n_terms):
    # Stated constraint is b1 > -(m+1); integrability of the density itself
    # asks for b1 > -m, so the band in between only earns a warning.
    require(b1 > -(n_terms + 1), f"b1 must exceed -({n_terms}+1) for {n_terms} weighted terms")
    if b1 <= -n_terms:
        warnings.warn(
            f"b1={b1} lies in [-(m+1), -m] for m={n_terms} terms; the jr density "
            "is not integrable there although the stated bound admits it",
            UserWarning,
            stacklevel=3,
        )


def default_jr_weights(design, include_nugget, mode="separable"):
    """Default jr weights: n**(-1/p) times each input's design range.

    Scales the prior with design density; the nugget slot, when present,
    gets unit weight. An isotropic kernel has a single range parameter, so
    it gets a single weight built from the largest pairwise distance.
    Recorded in provenance so users can override.
    """
    design = as_design_matrix(design)
    n, p = design.shape
    if mode == "isotropic":
        diff = design[:, None, :] - design[None, :, :]
        span = float(np.sqrt((diff * diff).sum(axis=2)).max())
        spans = np.array([span if span > 0 else 1.0])
    else:
        spans = design.max(axis=0) - design.min(axis=0)
        spans = np.where(spans > 0, spans, 1.0)
    weights = [float(n ** (-1.0 / p) * s) for s in spans]
    if include_nugget:
        weights.append(1.0)
    return tuple(weights)


def materialize_prior(prior, design, include_nugget, mode="separable"):
    """Fill in defaulted jr weights from the design; other variants pass through."""
    if prior.variant != "jr" or prior.weights is not None:
        return prior
    return PriorSpec(
        variant="jr",
        b1=prior.b1,
        b2=prior.b2,
        weights=default_jr_weights(design, include_nugget, mode=mode),
    )


@dataclass(frozen=True)
class FisherInfo:
    """Fisher information of the trend-integrated model, with its W matrices."""

    matrix: np.ndarray
    w_matrices: tuple


def fisher_info(spec, design, basis=TrendBasis(), include_nugget=None):
    """Fisher information over (variance, ranges[, nugget]).

    The top-left entry is exactly n - q; the remaining entries are traces of
    products of W_l = (dC/d range_l) Q. ``include_nugget`` defaults to whether
    the spec carries a nugget; pass False to treat a fixed nugget as known.
    """
    design = as_design_matrix(design)
    spec.check_design(design)
    if include_nugget is None:
        include_nugget = spec.nugget is not None
    basis_mat = basis_matrix_or_none(basis, design)
    n = design.shape[0]
    q = 0 if basis_mat is None else basis_mat.shape[1]
    require(n > q, f"the trend-integrated model is vacuous: n - q = {n - q} <= 0")
    ws = CorrelationWorkspace(spec.mode, spec.families, design)
    corr, grads = ws.matrix_and_range_grads(spec.ranges, spec.nugget)
    chol, _ = cholesky_with_jitter(corr)
    if basis_mat is None:
        linv_h = np.zeros((n, 0))
        gram_chol = np.zeros((0, 0))
    else:
        state = gls_solve(chol, basis_mat, np.zeros(n))
        linv_h, gram_chol = state.linv_h, state.gram_chol
    qmat = q_matrix(chol, linv_h, gram_chol)
    w_mats = [dcorr @ qmat for dcorr in grads]
    if include_nugget:
        w_mats.append(qmat.copy())
    dim = 1 + len(w_mats)
    info = np.empty((dim, dim))
    info[0, 0] = n - q
    for a, wa in enumerate(w_mats):
        info[0, 1 + a] = info[1 + a, 0] = float(np.trace(wa))
        for b, wb in enumerate(w_mats):
            info[1 + a, 1 + b] = float((wa * wb.T).sum())
    info = 0.5 * (info + info.T)
    return FisherInfo(matrix=info, w_matrices=tuple(w_mats))


def log_reference_prior(spec, design, basis=TrendBasis(), include_nugget=None):
    """Half the log determinant of the Fisher information.

    A numerically non-positive determinant yields :data:`REJECT_LOG_PRIOR`;
    an indefinite matrix beyond tolerance raises :class:`PriorError` with the
    eigenvalues.
    """
    info = fisher_info(spec, design, basis, include_nugget=include_nugget)
    try:
        chol = np.linalg.cholesky(info.matrix)
        return float(np.sum(np.log(np.diag(chol))))
    except np.linalg.LinAlgError:
        eigenvalues = np.linalg.eigvalsh(info.matrix)
        if eigenvalues.min() > -1e-8 * max(1.0, float(np.abs(eigenvalues).max())):
            return REJECT_LOG_PRIOR
        raise PriorError(
            "Fisher information of the range parameters is not positive "
            f"semi-definite; eigenvalues: {np.array2string(eigenvalues, precision=3)}",
            eigenvalues=eigenvalues,
        ) from None


def _jr_weighted_sum(prior, inv_ranges, nugget):
    require(prior.variant == "jr", "jr prior operations need a jr PriorSpec")
    inv_ranges = np.asarray(inv_ranges, dtype=float).reshape(-1)
    if np.any(inv_ranges <= 0) or not np.all(np.isfinite(inv_ranges)):
        raise ValidationError("inverse ranges must be positive and finite")
    values = inv_ranges
    if nugget is not None:
        nugget = float(nugget)
        require(math.isfinite(nugget) and nugget > 0, "nugget must be positive for the jr prior")
        values = np.append(values, nugget)
    require(prior.weights is not None, "jr weights are not set; materialize the prior first")
    weights = np.asarray(prior.weights, dtype=float)
    require(
        weights.size == values.size,
        f"jr prior has {weights.size} weights but {values.size} parameters "
        "(inverse ranges plus nugget slot)",
    )
    return weights * values


def log_jr_prior(prior, inv_ranges, nugget=None):
    """Log jr density over inverse ranges (and the nugget slot), constants dropped."""
    terms = _jr_weighted_sum(prior, inv_ranges, nugget)
    total = float(terms.sum())
    return prior.b1 * math.log(total) - prior.b2 * total


def grad_log_jr_prior(prior, inv_ranges, nugget=None):
    """Gradient of :func:`log_jr_prior` in log-parameter coordinates.

    Coordinates are log inverse ranges followed by log nugget when present.
    """
    terms = _jr_weighted_sum(prior, inv_ranges, nugget)
    total = float(terms.sum())
    return terms * (prior.b1 / total - prior.b2)


def log_prior(prior, spec, design=None, basis=TrendBasis(), include_nugget=None):
    """Dispatch on the prior variant; the flat prior contributes zero.

    The (trend, variance) block of the joint prior is handled analytically
    inside the integrated likelihood and never appears here.
    """
    if prior.variant == "flat":
        return 0.0
    if include_nugget is None:
        include_nugget = spec.nugget is not None
    if prior.variant == "reference":
        require(design is not None, "the reference prior needs the design")
        return log_reference_prior(spec, design, basis, include_nugget=include_nugget)
    if prior.weights is None:
        require(design is not None, "jr weights default from the design; pass one")
        prior = materialize_prior(prior, design, include_nugget, mode=spec.mode)
    inv_ranges = 1.0 / np.asarray(spec.ranges)
    nugget = spec.nugget if include_nugget else None
    return log_jr_prior(prior, inv_ranges, nugget=nugget)
