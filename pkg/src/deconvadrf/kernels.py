"""Deconvolution kernel machinery.

The base kernel L is the one whose Fourier transform is
phi_L(u) = (1 - u^2)^3 on [-1, 1].  Its noise-corrected version L_U divides
phi_L by the error characteristic function before Fourier inversion, so that
E[L_U{(t - S)/h} | T] = L{(t - T)/h} under classical measurement error
S = T + U.  All Fourier-cosine inversions use fixed-order Gauss-Legendre
quadrature on [0, 1] (the integrands are even).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import AllWeightsZero, InsufficientReplicates, OverflowRisk

# Effective support of the tabulated kernel: |L(v)| < 2e-7 beyond this point
# and the fast evaluation path returns exactly 0 there.
TABLE_VMAX = 100.0
TABLE_STEP = 0.0025

# Tail regularisation floor for replicate-estimated characteristic functions.
CF_RIDGE_FLOOR = 0.05

GAUSSIAN_EXPONENT_CAP = 700.0


@lru_cache(maxsize=8)
def _gauss_legendre_01(order: int):
    """Gauss-Legendre nodes/weights mapped from [-1, 1] to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def phi_l(u):
    """Fourier transform of the base kernel: (1 - u^2)^3 on [-1, 1]."""
    u = np.asarray(u, dtype=float)
    out = np.where(np.abs(u) <= 1.0, (1.0 - u * u) ** 3, 0.0)
    return out


@dataclass(frozen=True)
class KernelSpec:
    """Base kernel with phi_L(u) = (1 - u^2)^3 and its quadrature order."""

    quadrature_order: int = 128

    def __post_init__(self):
        if self.quadrature_order < 64:
            raise ValueError("quadrature_order must be >= 64")

    @property
    def nodes_weights(self):
        return _gauss_legendre_01(self.quadrature_order)


_DEFAULT_SPEC = KernelSpec()


def _cosine_inversion(v, multipliers, spec: KernelSpec):
    """(1/pi) * sum_k w_k cos(u_k v) * multipliers_k, vectorised in v.

    multipliers already include phi_L(u_k) and any 1/phi_U factor.
    """
    nodes, weights = spec.nodes_weights
    v = np.asarray(v, dtype=float)
    coeff = weights * multipliers / np.pi
    if v.ndim == 0:
        return float(np.cos(v * nodes) @ coeff)
    flat = v.reshape(-1)
    out = np.empty(flat.shape, dtype=float)
    # chunk to bound the temporary cos matrix
    step = max(1, int(4_000_000 / len(nodes)))
    for a in range(0, len(flat), step):
        blk = flat[a:a + step]
        out[a:a + step] = np.cos(blk[:, None] * nodes[None, :]) @ coeff
    return out.reshape(v.shape)


def base_kernel(x, spec: KernelSpec = _DEFAULT_SPEC):
    """L(x) = (1/pi) * int_0^1 cos(wx) (1 - w^2)^3 dw.  Even, integrates to 1."""
    nodes, _ = spec.nodes_weights
    return _cosine_inversion(x, phi_l(nodes), spec)


def base_kernel_second_derivative(x, spec: KernelSpec = _DEFAULT_SPEC):
    """L''(x) = -(1/pi) * int_0^1 w^2 cos(wx) (1 - w^2)^3 dw."""
    nodes, _ = spec.nodes_weights
    return _cosine_inversion(x, -(nodes ** 2) * phi_l(nodes), spec)


class ErrorModel:
    """Measurement-error law: kind, variance, and characteristic function.

    Supported kinds: 'laplace', 'gaussian', 'replicate', 'none'.  All have
    real, even, strictly positive characteristic functions on the range where
    they are evaluated (the replicate-estimated CF is floored at
    CF_RIDGE_FLOOR in its tails).
    """

    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"
    REPLICATE = "replicate"
    NONE = "none"

    def __init__(self, kind: str, variance: float,
                 w_grid: Optional[np.ndarray] = None,
                 phi_grid: Optional[np.ndarray] = None,
                 floor_onset: Optional[float] = None):
        if kind not in (self.LAPLACE, self.GAUSSIAN, self.REPLICATE, self.NONE):
            raise ValueError(f"unknown error kind {kind!r}")
        if variance < 0:
            raise ValueError("variance must be >= 0")
        if kind == self.NONE and variance != 0.0:
            raise ValueError("kind 'none' requires variance 0")
        if kind == self.REPLICATE:
            if w_grid is None or phi_grid is None:
                raise ValueError("replicate kind requires a tabulated CF")
            w_grid = np.asarray(w_grid, dtype=float)
            phi_grid = np.asarray(phi_grid, dtype=float)
            if w_grid[0] != 0.0 or phi_grid[0] != 1.0:
                raise ValueError("tabulated CF must start at (0, 1)")
            if np.any(phi_grid <= 0.0):
                raise ValueError("tabulated CF must be strictly positive")
        self.kind = kind
        self.variance = float(variance)
        self.w_grid = w_grid
        self.phi_grid = phi_grid
        # first |w| at which the ridge floor became active, None if never
        self.floor_onset = floor_onset

    # -- constructors -----------------------------------------------------
    @classmethod
    def laplace(cls, variance: float) -> "ErrorModel":
        return cls(cls.LAPLACE, variance)

    @classmethod
    def gaussian(cls, variance: float) -> "ErrorModel":
        return cls(cls.GAUSSIAN, variance)

    @classmethod
    def none(cls) -> "ErrorModel":
        return cls(cls.NONE, 0.0)

    # -- behaviour --------------------------------------------------------
    @property
    def is_none(self) -> bool:
        return self.kind == self.NONE

    def cf(self, w):
        """phi_U(w); real, even, positive."""
        w = np.asarray(w, dtype=float)
        if self.kind == self.NONE:
            return np.ones_like(w)
        if self.kind == self.LAPLACE:
            return 1.0 / (1.0 + 0.5 * self.variance * w * w)
        if self.kind == self.GAUSSIAN:
            return np.exp(-0.5 * self.variance * w * w)
        # replicate: symmetric interpolation, held at the last value outside
        aw = np.abs(w)
        return np.interp(aw, self.w_grid, self.phi_grid,
                         right=float(self.phi_grid[-1]))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        """Draw measurement errors U (for SIMEX and self-tests)."""
        if self.kind == self.NONE:
            return np.zeros(size)
        if self.kind == self.LAPLACE:
            return rng.laplace(0.0, np.sqrt(self.variance / 2.0), size)
        if self.kind == self.GAUSSIAN:
            return rng.normal(0.0, np.sqrt(self.variance), size)
        raise ValueError("cannot sample from a replicate-estimated error model")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "variance": self.variance}
        if self.kind == self.REPLICATE:
            d["floor_onset"] = self.floor_onset
            d["cf_grid_points"] = int(len(self.w_grid))
        return d


# evaluation modes
CLOSED_FORM_LAPLACE = "closed_form_laplace"
QUADRATURE_GENERIC = "quadrature_generic"
PLAIN_KERNEL = "plain_kernel"


class DeconvEvaluator:
    """Evaluates L_U(v) for a fixed error model and bandwidth.

    Immutable after construction; safe for concurrent reads.  Two evaluation
    paths are provided: `value`/`values` use the fixed-order quadrature (or
    the Laplace closed form) directly, while `values_fast` interpolates a
    pre-tabulated grid on [-TABLE_VMAX, TABLE_VMAX] and returns exactly 0
    beyond it (|L_U| < 2e-7 there for the supported models).
    """

    def __init__(self, error: ErrorModel, h: float,
                 kernel: KernelSpec = _DEFAULT_SPEC, mode: Optional[str] = None):
        if h <= 0:
            raise ValueError("bandwidth must be > 0")
        if mode is None:
            if error.is_none:
                mode = PLAIN_KERNEL
            elif error.kind == ErrorModel.LAPLACE:
                mode = CLOSED_FORM_LAPLACE
            else:
                mode = QUADRATURE_GENERIC
        if mode == CLOSED_FORM_LAPLACE and error.kind != ErrorModel.LAPLACE:
            raise ValueError("closed-form mode requires a Laplace error model")
        if mode == PLAIN_KERNEL and not error.is_none:
            raise ValueError("plain-kernel mode requires error kind 'none'")
        if error.kind == ErrorModel.GAUSSIAN:
            exponent = error.variance / (2.0 * h * h)
            if exponent > GAUSSIAN_EXPONENT_CAP:
                raise OverflowRisk(
                    f"Gaussian deconvolution exponent {exponent:.3g} exceeds "
                    f"{GAUSSIAN_EXPONENT_CAP}: bandwidth {h} too small for "
                    f"error variance {error.variance}")
        self.error = error
        self.h = float(h)
        self.kernel = kernel
        self.mode = mode
        self._table = None

    def _multipliers(self) -> np.ndarray:
        nodes, _ = self.kernel.nodes_weights
        return phi_l(nodes) / self.error.cf(nodes / self.h)

    def value(self, v) -> float:
        """L_U(v) by direct quadrature (scalar)."""
        return float(self.values(np.asarray(v, dtype=float)))

    def values(self, v) -> np.ndarray:
        """L_U(v) by direct quadrature, vectorised."""
        if self.mode == CLOSED_FORM_LAPLACE:
            s2h2 = self.error.variance / (2.0 * self.h * self.h)
            return (base_kernel(v, self.kernel)
                    - s2h2 * base_kernel_second_derivative(v, self.kernel))
        return _cosine_inversion(v, self._multipliers(), self.kernel)

    def _build_table(self):
        grid = _table_grid()
        self._table = (grid, self.values(grid))

    def values_fast(self, v) -> np.ndarray:
        """Interpolated L_U(v); exactly 0 for |v| > TABLE_VMAX.

        The plain and closed-form-Laplace modes interpolate shared tables of
        L and L'' (no per-bandwidth table build); the generic mode tabulates
        lazily per evaluator.
        """
        av = np.abs(np.asarray(v, dtype=float))
        if self.mode == CLOSED_FORM_LAPLACE:
            _, l_tab, l2_tab = _base_tables(self.kernel.quadrature_order)
            s2h2 = self.error.variance / (2.0 * self.h * self.h)
            return (_interp_table(av, l_tab)
                    - s2h2 * _interp_table(av, l2_tab))
        if self.mode == PLAIN_KERNEL:
            _, l_tab, _ = _base_tables(self.kernel.quadrature_order)
            return _interp_table(av, l_tab)
        if self._table is None:
            self._build_table()
        _, tab = self._table
        return _interp_table(av, tab)


def _interp_table(av, tab):
    """Linear interpolation of a table on the uniform grid 0..TABLE_VMAX.

    av must be nonnegative; beyond the grid the result is exactly 0.  Direct
    index arithmetic, not a binary search: the grid spacing is fixed.
    """
    pos = av * (1.0 / TABLE_STEP)
    idx = np.minimum(pos, len(tab) - 2.0).astype(np.int64)
    frac = pos - idx
    out = tab[idx] * (1.0 - frac) + tab[idx + 1] * frac
    return np.where(av >= TABLE_VMAX, 0.0, out)


@lru_cache(maxsize=2)
def _table_grid():
    return np.arange(0.0, TABLE_VMAX + TABLE_STEP / 2, TABLE_STEP)


@lru_cache(maxsize=4)
def _base_tables(order: int):
    """Shared tabulations of L and L'' used by the fast evaluation path."""
    spec = KernelSpec(order)
    grid = _table_grid()
    return grid, base_kernel(grid, spec), base_kernel_second_derivative(grid, spec)


def deconv_value(evaluator: DeconvEvaluator, v: float) -> float:
    """L_U(v) for the evaluator's error model and bandwidth."""
    return evaluator.value(v)


def kernel_weights(evaluator: DeconvEvaluator, t: float, s: np.ndarray,
                   truncate_negative: bool) -> np.ndarray:
    """w_i = L_U{(t - s_i)/h}, optionally with negatives truncated to 0.

    Raises AllWeightsZero when the truncated vector sums to zero.
    """
    s = np.asarray(s, dtype=float)
    if s.size == 0:
        raise ValueError("s must be nonempty")
    w = evaluator.values_fast((t - s) / evaluator.h)
    if truncate_negative:
        w = np.maximum(w, 0.0)
        if w.sum() == 0.0:
            raise AllWeightsZero(f"all truncated kernel weights vanish at t={t}")
    return w


def conditional_unbiasedness_check(error: ErrorModel, h: float, t: float,
                                   t0: float, n_mc: int, seed: int):
    """Monte Carlo self-test of E[L_U{(t-S)/h} | T=t0] = L{(t-t0)/h}.

    Returns (mc_mean, mc_se, target).
    """
    if n_mc < 10_000:
        raise ValueError("n_mc must be >= 1e4")
    rng = np.random.default_rng(seed)
    u = error.sample(rng, n_mc)
    ev = DeconvEvaluator(error, h)
    vals = ev.values((t - (t0 + u)) / h)
    mc_mean = float(vals.mean())
    mc_se = 0.0 if error.is_none else float(vals.std(ddof=1) / np.sqrt(n_mc))
    target = float(base_kernel((t - t0) / h))
    return mc_mean, mc_se, target


def estimate_cf_from_replicates(pairs, n_grid: int = 2001) -> ErrorModel:
    """Estimate phi_U from replicated measurements S_j1, S_j2.

    phi_hat(w) = |mean_j cos{w (S_j1 - S_j2)}|^{1/2}; beyond the first grid
    point where the estimate drops below CF_RIDGE_FLOOR the tabulated value
    is held at the floor.
    """
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError("pairs must be an (n, 2) array")
    n = pairs.shape[0]
    if n < 50:
        raise InsufficientReplicates(f"need >= 50 replicate pairs, got {n}")
    d = pairs[:, 0] - pairs[:, 1]
    var_u = max(float(d.var(ddof=1)) / 2.0, 0.0)
    sd = float(d.std(ddof=1))
    w_cap = 40.0 / sd if sd > 1e-12 else 20.0
    grid = np.linspace(0.0, w_cap, n_grid)
    phi = np.empty(n_grid)
    step = max(1, int(4_000_000 / max(n, 1)))
    for a in range(0, n_grid, step):
        blk = grid[a:a + step]
        phi[a:a + step] = np.sqrt(
            np.abs(np.cos(blk[:, None] * d[None, :]).mean(axis=1)))
    phi[0] = 1.0
    floor_onset = None
    below = np.nonzero(phi < CF_RIDGE_FLOOR)[0]
    if below.size:
        k = int(below[0])
        floor_onset = float(grid[k])
        phi[k:] = CF_RIDGE_FLOOR
    return ErrorModel(ErrorModel.REPLICATE, var_u, w_grid=grid, phi_grid=phi,
                      floor_onset=floor_onset)


def read_replicate_pairs(path) -> np.ndarray:
    """Two-column CSV with headers s1, s2."""
    from .errors import InputDataError
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise InputDataError("empty replicate CSV")
        cols = [c.strip().lower() for c in header]
        if "s1" not in cols or "s2" not in cols:
            raise InputDataError("replicate CSV must have columns s1, s2")
        i1, i2 = cols.index("s1"), cols.index("s2")
        rows = []
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append((float(row[i1]), float(row[i2])))
            except (ValueError, IndexError):
                raise InputDataError(f"bad replicate row at line {ln}")
    return np.asarray(rows, dtype=float)


def write_cf_csv(model: ErrorModel, path) -> None:
    """Export a tabulated CF as two columns (w, phi)."""
    if model.kind != ErrorModel.REPLICATE:
        raise ValueError("only replicate-estimated CFs are tabulated")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["w", "phi"])
        for w, p in zip(model.w_grid, model.phi_grid):
            writer.writerow([repr(float(w)), repr(float(p))])
