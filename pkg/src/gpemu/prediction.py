"""Closed-form Student-t prediction for fitted GP emulators.

At a test input the predictive distribution is a location-scale Student-t
with n - q degrees of freedom; the squared scale combines the conditional
correlation shortfall with a trend-uncertainty term. By default predictions
target the latent (noise-free) surface even when the model carries a nugget;
``include_noise=True`` adds the nugget to the self-correlation to predict a
new noisy observation instead.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.stats

from .kernels import cross_correlation
from .validation import as_design_matrix, require


@dataclass(frozen=True)
class PredictiveT:
    """Student-t predictive: location, squared scale, degrees of freedom.

    ``clip`` records how much negative conditional variance (pure roundoff)
    was clipped away; it vanishes on well-conditioned problems.
    """

    location: float
    scale2: float
    dof: int
    clip: float = 0.0

    @property
    def scale(self):
        return float(np.sqrt(self.scale2))


def predict_terms(design, kernel, basis, chol, linv_h, gram_chol, resid_solve,
                  beta, points, include_noise=False, with_scale=True):
    """Shared prediction core over a block of output columns.

    ``resid_solve`` is C^-1 (f - H beta) with one column per output;
    ``beta`` has one column per output. Returns (locations (m, k),
    scale_factor (m,) or None, clip (m,) or None) where the squared scale of
    output j is sigma2_hat_j * scale_factor.
    """
    points = as_design_matrix(points, name="test inputs")
    require(
        points.shape[1] == design.shape[1],
        f"test inputs have {points.shape[1]} columns, the model expects {design.shape[1]}",
    )
    cross = cross_correlation(kernel, design, points)  # (n, m)
    hx = basis.matrix(points) if basis is not None else None  # (m, q)
    if resid_solve.shape[1] == 1:
        # Single-output locations go one test point at a time on contiguous
        # vectors so that a batch of m points reproduces m single-point calls
        # bitwise (the reduction over the design never depends on m or
        # strides).
        cross_rows = np.ascontiguousarray(cross.T)
        locations = np.empty((points.shape[0], 1))
        for j in range(points.shape[0]):
            row = cross_rows[j] @ resid_solve
            if hx is not None:
                row = row + hx[j] @ beta
            locations[j] = row
    else:
        # Multi-output locations are one blocked product; the per-output
        # work stays inside BLAS, which is what makes wide output grids
        # nearly free.
        locations = cross.T @ resid_solve
        if hx is not None:
            locations = locations + hx @ beta
    if not with_scale:
        return locations, None, None
    white = scipy.linalg.solve_triangular(chol, cross, lower=True)  # (n, m)
    self_corr = 1.0 + (kernel.nugget if include_noise and kernel.nugget else 0.0)
    cond_short = self_corr - (white * white).sum(axis=0)
    clip = np.where(cond_short < 0.0, -cond_short, 0.0)
    cond_short = np.maximum(cond_short, 0.0)
    if hx is not None and hx.shape[1] > 0:
        trend_gap = hx.T - linv_h.T @ white  # (q, m)
        z = scipy.linalg.solve_triangular(gram_chol, trend_gap, lower=True)
        trend_term = (z * z).sum(axis=0)
    else:
        trend_term = 0.0
    return locations, cond_short + trend_term, clip


def predict_arrays(model, points, include_noise=False):
    """Vectorized prediction: (locations, scale2, clip) arrays of length m."""
    locations, factor, clip = predict_terms(
        model.design, model.kernel, model.basis, model.gls.chol,
        model.gls.linv_h, model.gls.gram_chol,
        model.gls.resid_solve[:, None], model.gls.beta_hat[:, None],
        points, include_noise=include_noise,
    )
    return locations[:, 0], model.sigma2_hat * factor, clip


def predict(model, point, include_noise=False):
    """Student-t predictive distribution at one test input."""
    point = np.asarray(point, dtype=float).reshape(1, -1)
    loc, scale2, clip = predict_arrays(model, point, include_noise=include_noise)
    return PredictiveT(location=float(loc[0]), scale2=float(scale2[0]),
                       dof=model.dof, clip=float(clip[0]))


def predict_batch(model, points, include_noise=False):
    """Prediction at each row of ``points``; identical values to per-point calls."""
    loc, scale2, clip = predict_arrays(model, points, include_noise=include_noise)
    return [
        PredictiveT(location=float(l), scale2=float(s), dof=model.dof, clip=float(c))
        for l, s, c in zip(loc, scale2, clip)
    ]


def predictive_interval(pt, level):
    """Central interval of the predictive at the given coverage level."""
    require(0.0 < level < 1.0, "interval level must lie strictly between 0 and 1")
    quantile = scipy.stats.t.ppf(0.5 + level / 2.0, df=pt.dof)
    half_width = pt.scale * quantile
    return pt.location - half_width, pt.location + half_width
