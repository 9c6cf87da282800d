"""Sieve basis construction over the covariate space.

Covariates are affinely scaled to [0, 1]^r (out-of-sample points clamped),
and the K-dimensional basis u_K(x) is built from either multivariate power
series (graded-lexicographic monomials) or per-dimension cubic B-splines.
The first basis function is always the constant 1, which pins the weighted
mean of the GEL weights to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import BasisOverflow, DegenerateCovariate

MAX_POWER_DEGREE = 20

POWER = "power"
BSPLINE = "bspline"


@dataclass(frozen=True)
class BasisSpec:
    family: str = POWER
    K: int = 2
    spline_degree: int = 3
    covariate_dim: int = 1

    def __post_init__(self):
        if self.family not in (POWER, BSPLINE):
            raise ValueError(f"unknown basis family {self.family!r}")
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.covariate_dim < 1:
            raise ValueError("covariate_dim must be >= 1")
        if self.family == BSPLINE:
            per_block = -(-self.K // self.covariate_dim)  # ceil
            if per_block < self.spline_degree + 1:
                raise ValueError(
                    f"B-spline basis needs >= {self.spline_degree + 1} "
                    f"functions per covariate block (got {per_block})")


@dataclass(frozen=True)
class CovariateScaler:
    mins: np.ndarray
    maxs: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = (x - self.mins) / (self.maxs - self.mins)
        return np.clip(z, 0.0, 1.0)


def fit_scaler(x: np.ndarray) -> CovariateScaler:
    """Column-wise min/max over the training sample."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] < 2:
        raise ValueError("need at least 2 rows to fit a scaler")
    mins = x.min(axis=0)
    maxs = x.max(axis=0)
    for j, (lo, hi) in enumerate(zip(mins, maxs)):
        if hi <= lo:
            raise DegenerateCovariate(f"covariate column {j} is constant")
    return CovariateScaler(mins=mins, maxs=maxs)


def _graded_lex_exponents(r: int, count: int):
    """Multivariate monomial exponents: constant, then degree 1, 2, ...;
    within a degree, lexicographic with x_1 carrying the highest priority."""
    out = []
    for deg in range(MAX_POWER_DEGREE + 1):
        for combo in _compositions(deg, r):
            out.append(combo)
            if len(out) == count:
                return out
    raise BasisOverflow(
        f"power-series degree needed for K={count} exceeds {MAX_POWER_DEGREE}")


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _bspline_knots(n_funcs: int, degree: int) -> np.ndarray:
    n_interior = n_funcs - degree - 1
    interior = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
    return np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])


def evaluate_basis(spec: BasisSpec, scaler: CovariateScaler,
                   x: np.ndarray) -> np.ndarray:
    """Row i of the result is u_K(x_i); shape (N, K)."""
    z = scaler.transform(x)
    n, r = z.shape
    if r != spec.covariate_dim:
        raise ValueError(
            f"expected {spec.covariate_dim} covariates, got {r}")
    if spec.family == POWER:
        exps = _graded_lex_exponents(r, spec.K)
        cols = np.empty((n, spec.K))
        for k, e in enumerate(exps):
            col = np.ones(n)
            for j, a in enumerate(e):
                if a:
                    col = col * z[:, j] ** a
            cols[:, k] = col
        return cols
    # bspline: ceil(K/r) functions per dimension, concatenated; first column
    # replaced by the constant, list truncated at K
    per_block = -(-spec.K // r)
    knots = _bspline_knots(per_block, spec.spline_degree)
    zc = np.minimum(z, 1.0 - 1e-12)
    blocks = []
    for j in range(r):
        dm = BSpline.design_matrix(zc[:, j], knots, spec.spline_degree)
        blocks.append(np.asarray(dm.todense()))
    mat = np.concatenate(blocks, axis=1)
    mat[:, 0] = 1.0
    return mat[:, :spec.K]
