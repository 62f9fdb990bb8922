"""Stationary correlation functions and correlation-matrix assembly.

Four families are supported, each parameterized by a free range parameter
(in input units) and, where applicable, a fixed roughness:

====================  ==========================================  ===========
family                c(d) with u = d / range                     roughness
====================  ==========================================  ===========
power_exponential     exp(-u**a)                                  a in (0, 2]
spherical             (1 - 1.5*u + 0.5*u**3) for u <= 1, else 0   none
rational_quadratic    (1 + u**2)**(-a)                            a > 0
matern                half-integer closed forms                   a in {1/2, 3/2, 5/2}
====================  ==========================================  ===========

The Matern family is restricted to half-integer roughness so that the
closed forms apply and no Bessel-function evaluation is needed:

    a = 1/2:  exp(-t)
    a = 3/2:  (1 + t) * exp(-t)
    a = 5/2:  (1 + t + t**2/3) * exp(-t)      with t = sqrt(2a) * u

Matrices can be assembled in separable mode (one family and range per input
dimension, entries are products over dimensions of the per-coordinate
correlations) or isotropic mode (a single family and range applied to the
Euclidean distance).
"""

import math
from dataclasses import dataclass

import numpy as np

from .validation import as_design_matrix, require

POWER_EXPONENTIAL = "power_exponential"
SPHERICAL = "spherical"
RATIONAL_QUADRATIC = "rational_quadratic"
MATERN = "matern"

FAMILY_NAMES = (POWER_EXPONENTIAL, SPHERICAL, RATIONAL_QUADRATIC, MATERN)
MATERN_ROUGHNESS = (0.5, 1.5, 2.5)

MODES = ("separable", "isotropic")


@dataclass(frozen=True)
class CorrelationFamily:
    """One stationary correlation family with its (fixed) roughness."""

    name: str
    roughness: float | None = None

    def __post_init__(self):
        require(self.name in FAMILY_NAMES, f"unknown correlation family {self.name!r}")
        if self.name == SPHERICAL:
            require(self.roughness is None, "spherical carries no roughness parameter")
            return
        require(self.roughness is not None, f"{self.name} requires a roughness parameter")
        r = float(self.roughness)
        require(math.isfinite(r), "roughness must be finite")
        if self.name == POWER_EXPONENTIAL:
            require(0.0 < r <= 2.0, "power_exponential roughness must lie in (0, 2]")
        elif self.name == RATIONAL_QUADRATIC:
            require(r > 0.0, "rational_quadratic roughness must be positive")
        else:  # matern
            snapped = [h for h in MATERN_ROUGHNESS if abs(r - h) < 1e-12]
            require(
                bool(snapped),
                "matern roughness is restricted to the half-integers 0.5, 1.5, 2.5",
            )
            r = snapped[0]
        object.__setattr__(self, "roughness", r)


def _corr_values(family, dists, range_param):
    """Correlation at distances ``dists`` (array, >= 0) for one family."""
    u = dists / range_param
    if family.name == POWER_EXPONENTIAL:
        return np.exp(-(u**family.roughness))
    if family.name == SPHERICAL:
        return np.where(u <= 1.0, 1.0 - 1.5 * u + 0.5 * u**3, 0.0)
    if family.name == RATIONAL_QUADRATIC:
        return (1.0 + u * u) ** (-family.roughness)
    t = math.sqrt(2.0 * family.roughness) * u
    et = np.exp(-t)
    if family.roughness == 0.5:
        return et
    if family.roughness == 1.5:
        return (1.0 + t) * et
    return (1.0 + t + t * t / 3.0) * et


def _corr_drange_values(family, dists, range_param):
    """d c / d range at distances ``dists``.

    The spherical boundary u == 1 takes the smooth-branch value (0 there),
    and families with unit correlation at d = 0 have zero derivative there.
    """
    u = dists / range_param
    if family.name == POWER_EXPONENTIAL:
        ua = u**family.roughness
        return np.exp(-ua) * family.roughness * ua / range_param
    if family.name == SPHERICAL:
        return np.where(u <= 1.0, 1.5 * u * (1.0 - u * u) / range_param, 0.0)
    if family.name == RATIONAL_QUADRATIC:
        a = family.roughness
        return 2.0 * a * (1.0 + u * u) ** (-a - 1.0) * u * u / range_param
    t = math.sqrt(2.0 * family.roughness) * u
    et = np.exp(-t)
    if family.roughness == 0.5:
        return t * et / range_param
    if family.roughness == 1.5:
        return t * t * et / range_param
    return t * t * (1.0 + t) * et / (3.0 * range_param)


def _check_point(distance, range_param):
    d = float(distance)
    r = float(range_param)
    require(math.isfinite(d) and d >= 0.0, "distance must be finite and non-negative")
    require(math.isfinite(r) and r > 0.0, "range parameter must be finite and positive")
    return d, r


def eval_correlation(family, distance, range_param):
    """Correlation value c(distance) for one family; c(0) = 1 for all families."""
    d, r = _check_point(distance, range_param)
    return float(_corr_values(family, np.asarray(d), r))


def eval_correlation_grad(family, distance, range_param):
    """Derivative of the correlation with respect to the range parameter."""
    d, r = _check_point(distance, range_param)
    return float(_corr_drange_values(family, np.asarray(d), r))


@dataclass(frozen=True)
class KernelSpec:
    """Correlation structure of a GP: mode, per-dimension families, ranges, nugget.

    ``nugget`` is the dimensionless noise-to-signal variance ratio added to the
    diagonal of the correlation matrix; ``None`` means no nugget term at all.
    """

    mode: str
    families: tuple
    ranges: tuple
    nugget: float | None = None

    def __post_init__(self):
        require(self.mode in MODES, f"kernel mode must be one of {MODES}")
        families = tuple(self.families)
        ranges = tuple(float(r) for r in self.ranges)
        for fam in families:
            require(isinstance(fam, CorrelationFamily), "families must be CorrelationFamily instances")
        for r in ranges:
            require(math.isfinite(r) and r > 0.0, "all range parameters must be finite and positive")
        if self.mode == "isotropic":
            require(len(families) == 1 and len(ranges) == 1,
                    "isotropic mode has exactly one family and one range parameter")
        else:
            require(len(families) == len(ranges) and len(families) >= 1,
                    "separable mode requires one family and one range per input dimension")
        if self.nugget is not None:
            eta = float(self.nugget)
            require(math.isfinite(eta) and eta >= 0.0, "nugget must be finite and non-negative")
            object.__setattr__(self, "nugget", eta)
        object.__setattr__(self, "families", families)
        object.__setattr__(self, "ranges", ranges)

    @property
    def n_range_params(self):
        return len(self.ranges)

    def check_design(self, design):
        if self.mode == "separable":
            require(
                design.shape[1] == len(self.ranges),
                f"separable kernel has {len(self.ranges)} ranges but design has "
                f"{design.shape[1]} input dimensions",
            )


@dataclass(frozen=True)
class CorrelationMatrix:
    """Assembled n x n correlation matrix together with its design.

    ``singular_risk`` is set when the design contains duplicate rows and no
    positive nugget is present, which makes the matrix exactly singular.
    """

    values: np.ndarray
    design: np.ndarray
    singular_risk: bool = False


class CorrelationWorkspace:
    """Distance tables for one design, reused across range-parameter values.

    The O(n^2 p) distance table is the dominant assembly cost; computing it
    once lets optimizers evaluate many candidate ranges cheaply.
    """

    def __init__(self, mode, families, design):
        require(mode in MODES, f"kernel mode must be one of {MODES}")
        design = as_design_matrix(design)
        families = tuple(families)
        if mode == "separable":
            require(
                len(families) == design.shape[1],
                f"separable mode needs one family per input dimension "
                f"({design.shape[1]}), got {len(families)}",
            )
            # (p, n, n) componentwise absolute differences
            dists = np.abs(design[:, None, :] - design[None, :, :]).transpose(2, 0, 1)
        else:
            require(len(families) == 1, "isotropic mode uses a single family")
            diff = design[:, None, :] - design[None, :, :]
            dists = np.sqrt((diff * diff).sum(axis=2))[None, :, :]
        self.mode = mode
        self.families = families
        self.design = design
        self._dists = dists

    @property
    def n_range_params(self):
        return self._dists.shape[0]

    def matrix(self, ranges, nugget=None):
        factors = [
            _corr_values(fam, self._dists[l], ranges[l])
            for l, fam in enumerate(self.families)
        ]
        corr = factors[0]
        for f in factors[1:]:
            corr = corr * f
        if len(factors) == 1:
            corr = corr.copy()
        if nugget is not None:
            corr[np.diag_indices_from(corr)] += nugget
        return corr

    def matrix_and_range_grads(self, ranges, nugget=None):
        """Correlation matrix plus its derivative with respect to each range.

        Only the range derivatives are returned; the nugget derivative is the
        identity and is handled by callers.
        """
        factors = [
            _corr_values(fam, self._dists[l], ranges[l])
            for l, fam in enumerate(self.families)
        ]
        corr = factors[0]
        for f in factors[1:]:
            corr = corr * f
        if len(factors) == 1:
            corr = corr.copy()
        grads = []
        for l, fam in enumerate(self.families):
            g = _corr_drange_values(fam, self._dists[l], ranges[l])
            for m, f in enumerate(factors):
                if m != l:
                    g = g * f
            grads.append(g)
        if nugget is not None:
            corr[np.diag_indices_from(corr)] += nugget
        return corr, grads

    def cross(self, ranges, points):
        """Cross-correlations between the design and new points, shape (n, m)."""
        points = as_design_matrix(points, name="test points")
        require(
            points.shape[1] == self.design.shape[1],
            f"test points have {points.shape[1]} columns, design has {self.design.shape[1]}",
        )
        if self.mode == "separable":
            out = None
            for l, fam in enumerate(self.families):
                d = np.abs(self.design[:, l, None] - points[None, :, l].reshape(1, -1))
                c = _corr_values(fam, d, ranges[l])
                out = c if out is None else out * c
            return out
        diff = self.design[:, None, :] - points[None, :, :]
        d = np.sqrt((diff * diff).sum(axis=2))
        return _corr_values(self.families[0], d, ranges[0])


def _has_duplicate_rows(design):
    return np.unique(design, axis=0).shape[0] < design.shape[0]


def build_correlation(spec, design):
    """Assemble the correlation matrix of a design under ``spec``.

    Entries are products of per-coordinate correlations (separable mode) or a
    single correlation of the Euclidean distance (isotropic mode); a nugget,
    when present, is added to the diagonal.
    """
    design = as_design_matrix(design)
    spec.check_design(design)
    ws = CorrelationWorkspace(spec.mode, spec.families, design)
    values = ws.matrix(spec.ranges, spec.nugget)
    risk = (spec.nugget is None or spec.nugget == 0.0) and _has_duplicate_rows(design)
    return CorrelationMatrix(values=values, design=design, singular_risk=risk)


def build_correlation_grads(spec, design):
    """Derivatives of the correlation matrix: one per range, plus the identity
    for the nugget slot when a nugget is present."""
    design = as_design_matrix(design)
    spec.check_design(design)
    ws = CorrelationWorkspace(spec.mode, spec.families, design)
    _, grads = ws.matrix_and_range_grads(spec.ranges, spec.nugget)
    if spec.nugget is not None:
        grads.append(np.eye(design.shape[0]))
    return grads


def cross_correlation(spec, design, points):
    """Cross-correlations between design rows and new points (no nugget term)."""
    design = as_design_matrix(design)
    spec.check_design(design)
    ws = CorrelationWorkspace(spec.mode, spec.families, design)
    return ws.cross(spec.ranges, points)
