"""Vector-valued emulation with one correlation matrix shared across outputs.

Each output coordinate keeps its own trend coefficients and variance, but the
input-space correlation matrix (and hence the Cholesky factorization) is
shared. Fitting therefore costs one O(n^3) factorization plus O(k n^2)
per-coordinate least squares per objective evaluation, instead of k separate
factorizations; prediction reuses one set of cross-correlations for all k
coordinates.
"""

from dataclasses import dataclass

import numpy as np

from .core import TrendBasis, _gls_core, basis_matrix_or_none, cholesky_with_jitter
from .estimation import FitConfig, _normalize_families, _normalize_nugget, _report, detect_inert_inputs, run_fit
from .kernels import build_correlation
from .prediction import PredictiveT, predict_terms
from .priors import materialize_prior
from .validation import as_design_matrix, as_output_matrix, frozen_array, require


@dataclass(frozen=True)
class MultiOutputGpModel:
    """Immutable fitted multi-output emulator sharing one correlation matrix.

    ``outputs`` is (k, n): one row per output coordinate, one column per run.
    ``coords`` holds opaque labels for the output coordinates (grid points,
    channels); no structure across them is assumed or exploited.
    """

    design: np.ndarray
    outputs: np.ndarray
    basis: TrendBasis | None
    kernel: object
    coords: tuple
    beta_hat: np.ndarray      # (q, k)
    sigma2_hat: np.ndarray    # (k,)
    chol: np.ndarray
    linv_h: np.ndarray
    gram_chol: np.ndarray
    resid_solve: np.ndarray   # (n, k)
    logdet_corr: float
    logdet_gram: float
    jitter: float
    degenerate: tuple
    provenance: dict

    @property
    def n_obs(self):
        return self.design.shape[0]

    @property
    def n_inputs(self):
        return self.design.shape[1]

    @property
    def n_outputs(self):
        return self.outputs.shape[0]

    @property
    def n_trend(self):
        return self.beta_hat.shape[0]

    @property
    def dof(self):
        return self.n_obs - self.n_trend


def build_multi_gp_model(design, outputs, kernel, basis=TrendBasis(), coords=None,
                         degenerate=(), provenance=None):
    """Assemble a :class:`MultiOutputGpModel` at fixed kernel hyperparameters."""
    design = as_design_matrix(design)
    kernel.check_design(design)
    outputs = as_output_matrix(outputs, n=design.shape[0])
    k = outputs.shape[0]
    if coords is None:
        coords = tuple(f"y{j}" for j in range(k))
    else:
        coords = tuple(str(c) for c in coords)
        require(len(coords) == k, "need one coordinate label per output row")
    basis_mat = basis_matrix_or_none(basis, design)
    corr = build_correlation(kernel, design)
    chol, jitter = cholesky_with_jitter(corr.values)
    # Column-by-column GLS: each coordinate goes through exactly the ops the
    # scalar path uses, so per-coordinate results match a scalar model on
    # (design, outputs[j]) bitwise.
    outputs_t = outputs.T.copy()
    betas, s2s, resid_solves = [], [], []
    for j in range(k):
        beta_j, s2_j, resid_j, linv_h, gram_chol, ld_c, ld_g, _ = _gls_core(
            chol, basis_mat, outputs_t[:, j : j + 1]
        )
        betas.append(beta_j[:, 0])
        s2s.append(float(s2_j[0]))
        resid_solves.append(resid_j[:, 0])
    beta = np.asarray(betas).T
    s2 = np.asarray(s2s)
    resid_solve = np.asarray(resid_solves).T
    q = beta.shape[0]
    sigma2 = s2 / (design.shape[0] - q)
    return MultiOutputGpModel(
        design=frozen_array(design),
        outputs=frozen_array(outputs),
        basis=basis,
        kernel=kernel,
        coords=coords,
        beta_hat=beta,
        sigma2_hat=sigma2,
        chol=chol,
        linv_h=linv_h,
        gram_chol=gram_chol,
        resid_solve=resid_solve,
        logdet_corr=ld_c,
        logdet_gram=ld_g,
        jitter=jitter,
        degenerate=tuple(degenerate),
        provenance=dict(provenance or {}),
    )


def fit_multi_gp(design, outputs, families, *, mode="separable", basis=TrendBasis(),
                 nugget=False, config=None, coords=None):
    """Fit the shared-correlation multi-output emulator.

    The objective is the sum over output coordinates of the scalar criterion
    (marginal likelihoods share one Cholesky factorization per evaluation),
    plus the prior once under MMPE. Output rows lying exactly in the span of
    the trend basis are excluded from the objective and flagged in the
    report; the fit proceeds for the rest.
    """
    config = config or FitConfig()
    design = as_design_matrix(design)
    outputs_mat = as_output_matrix(outputs, n=design.shape[0])
    families = _normalize_families(families, mode, design.shape[1])
    nugget_free, fixed_nugget = _normalize_nugget(nugget)
    prior = materialize_prior(config.prior, design, include_nugget=nugget_free, mode=mode)

    z_hat, spec_hat, objective, traces, winner, lo, hi, degenerate, retried, grad_norm = run_fit(
        design, outputs_mat, families, mode, basis, config.estimator, prior,
        nugget_free, fixed_nugget, config, allow_degenerate=True,
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
        "degenerate_outputs": list(degenerate),
    }
    model = build_multi_gp_model(
        design, outputs_mat, spec_hat, basis=basis, coords=coords,
        degenerate=degenerate, provenance=provenance,
    )
    condition = float(np.linalg.cond(model.chol @ model.chol.T))
    inert = None
    if mode == "separable":
        inert = tuple(detect_inert_inputs(model, config.inert_threshold))
    report = _report(traces, winner, z_hat, objective, lo, hi, degenerate, retried,
                     grad_norm, condition, inert)
    return model, report


def predict_multi_arrays(model, points, include_noise=False, with_scale=True):
    """Batch prediction: (locations (k, m), scale2 (k, m) or None, clip (m,) or None).

    Cross-correlations and the scale factor are computed once and shared by
    every output coordinate.
    """
    locations, factor, clip = predict_terms(
        model.design, model.kernel, model.basis, model.chol,
        model.linv_h, model.gram_chol, model.resid_solve, model.beta_hat,
        points, include_noise=include_noise, with_scale=with_scale,
    )
    if factor is None:
        return locations.T, None, None
    scale2 = factor[:, None] * model.sigma2_hat[None, :]
    return locations.T, scale2.T, clip


def predict_multi(model, point, include_noise=False):
    """Per-coordinate Student-t predictives at one test input (k entries)."""
    point = np.asarray(point, dtype=float).reshape(1, -1)
    loc, scale2, clip = predict_multi_arrays(model, point, include_noise=include_noise)
    return [
        PredictiveT(location=float(loc[j, 0]), scale2=float(scale2[j, 0]),
                    dof=model.dof, clip=float(clip[0]))
        for j in range(model.n_outputs)
    ]


def predict_multi_batch(model, points, include_noise=False, with_scale=True):
    """Batch form of :func:`predict_multi`: (k, m) locations and squared scales.

    ``with_scale=False`` skips the triangular solves and returns only the
    predictive means, the cheap path for large output grids.
    """
    loc, scale2, _ = predict_multi_arrays(
        model, points, include_noise=include_noise, with_scale=with_scale
    )
    return loc, scale2
