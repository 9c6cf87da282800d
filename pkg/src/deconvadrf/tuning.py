"""Smoothing-parameter selection.

Three parameters drive the estimator: the sieve dimension K, the
weight-stage bandwidth h0, and the regression-stage bandwidth h.  They are
chosen in two steps: h0 is a plug-in bandwidth minimising a normal-reference
AMISE of the deconvolution density estimate, K minimises a generalised
cross-validation criterion built on an exponential moment identity, and h
comes from simulation-extrapolation (SIMEX) with a local-constant
extrapolant of the first-stage bandwidths on the second-stage ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from .basis import BasisSpec, evaluate_basis, fit_scaler
from .errors import AllWeightsZero, NoiseExceedsSignal
from .gel import GelCriterion, pi_hat, solve_lambda
from .kernels import DeconvEvaluator, ErrorModel, KernelSpec, kernel_weights, phi_l

# second moment of the base kernel: kappa_21 = -phi_L''(0) = 6
KAPPA21 = 6.0


@dataclass
class SmoothingParams:
    K: int
    h0: float
    h: float
    provenance: str = "manual"
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.h0 <= 0 or self.h <= 0:
            raise ValueError("bandwidths must be > 0")

    def to_dict(self) -> dict:
        return {"K": int(self.K), "h0": float(self.h0), "h": float(self.h),
                "provenance": self.provenance, "details": self.details}


@dataclass
class SimexConfig:
    D: int = 35
    h_grid_min: float = 0.2
    h_grid_max: float = 5.0
    h_grid_n: int = 40
    trim_lo: float = 0.05
    trim_hi: float = 0.95
    seed: int = 0
    b_grid: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.D < 2:
            raise ValueError("SIMEX needs D >= 2")
        if not (0.0 < self.h_grid_min < self.h_grid_max):
            raise ValueError("h multiplier grid must be increasing and positive")
        if not (0.0 <= self.trim_lo < self.trim_hi <= 1.0):
            raise ValueError("bad trim quantiles")

    @property
    def h_multipliers(self) -> np.ndarray:
        return np.geomspace(self.h_grid_min, self.h_grid_max, self.h_grid_n)

    def to_dict(self) -> dict:
        return {"D": self.D, "h_grid_min": self.h_grid_min,
                "h_grid_max": self.h_grid_max, "h_grid_n": self.h_grid_n,
                "trim_lo": self.trim_lo, "trim_hi": self.trim_hi,
                "seed": self.seed,
                "b_grid": None if self.b_grid is None
                else [float(b) for b in np.asarray(self.b_grid)]}


# ---------------------------------------------------------------------------
# plug-in bandwidth
# ---------------------------------------------------------------------------

def _amise(h: float, tau2: float, n: int, error: ErrorModel,
           spec: KernelSpec = KernelSpec()) -> float:
    """Normal-reference AMISE of the deconvolution density estimate."""
    # R(f'') for a normal density with variance tau2
    r_f2 = 3.0 / (8.0 * np.sqrt(np.pi) * tau2 ** 2.5)
    bias = 0.25 * h ** 4 * KAPPA21 ** 2 * r_f2
    nodes, weights = spec.nodes_weights
    with np.errstate(over="ignore"):
        integrand = phi_l(nodes) ** 2 / error.cf(nodes / h) ** 2
        var_int = 2.0 * float(weights @ integrand)  # even integrand on [-1, 1]
    return bias + var_int / (2.0 * np.pi * n * h)


def plug_in_bandwidth(s: np.ndarray, error: ErrorModel,
                      grid_size: int = 200) -> float:
    """Minimise the normal-reference AMISE over a fixed bandwidth grid."""
    s = np.asarray(s, dtype=float)
    n = s.size
    if n < 20:
        raise ValueError("need at least 20 observations")
    var_s = float(s.var(ddof=1))
    if var_s <= error.variance:
        raise NoiseExceedsSignal(
            f"var(s)={var_s:.4g} <= error variance {error.variance:.4g}")
    tau2 = var_s - error.variance
    scale = np.sqrt(var_s)
    grid = np.geomspace(0.05, 2.0, grid_size) * scale
    vals = np.array([_amise(h, tau2, n, error) for h in grid])
    return float(grid[int(np.argmin(vals))])


# ---------------------------------------------------------------------------
# K by generalised cross-validation
# ---------------------------------------------------------------------------

def k_from_c(c_tilde: float, h_pi: float, n: int, k_floor: int = 2) -> int:
    k = int(np.floor(c_tilde * h_pi ** -2 * np.log(h_pi + 1.0)))
    k = max(k_floor, k)
    cap = max(k_floor, n // 10)
    return min(k, cap)


def _gcv_value(sample, bmat, criterion, h_pi: float, k: int,
               t_grid: np.ndarray) -> Optional[float]:
    """Trapezoid integral of the exponential-moment discrepancy, scaled by
    the GCV denominator (1 - K/N)^2.  None when every grid point skips."""
    ev0 = DeconvEvaluator(sample.error, h_pi)
    ex = np.exp(sample.x)          # coordinatewise for r > 1
    target = ex.mean(axis=0)
    n = sample.n
    good_t, good_val = [], []
    init = None
    for t in t_grid:
        try:
            kw = kernel_weights(ev0, t, sample.s, truncate_negative=True)
        except AllWeightsZero:
            continue
        fit = solve_lambda(bmat, kw, criterion, init=init, t=float(t))
        if fit.converged:
            init = fit.lam
        pis = pi_hat(fit, criterion, bmat)
        kh = ev0.values_fast((t - sample.s) / h_pi)
        den = kh.sum()
        if den == 0.0 or not np.isfinite(den):
            continue
        with np.errstate(over="ignore"):
            moment = (pis[:, None] * ex * kh[:, None]).sum(axis=0) / den
            disc = float(((moment - target) ** 2).sum())
        if not np.isfinite(disc):
            continue
        good_t.append(t)
        good_val.append(disc)
    if len(good_t) < 2:
        return None
    integral = float(np.trapezoid(good_val, good_t))
    return integral / (1.0 - k / n) ** 2


def select_k(sample, h_pi: float, criterion: GelCriterion,
             basis_family: str = "power",
             c_grid: Optional[np.ndarray] = None,
             trim=(0.05, 0.95), n_t: int = 20):
    """Pick (K, c_tilde) minimising the GCV criterion; ties go to the
    smaller c_tilde."""
    if h_pi <= 0:
        raise ValueError("h_pi must be > 0")
    if c_grid is None:
        c_grid = np.geomspace(0.01, 2.0, 12)
    k_floor = 2
    if basis_family == "bspline":
        # B-spline blocks need at least degree+1 functions per covariate
        k_floor = 4 * sample.covariate_dim
    lo, hi = np.quantile(sample.s, trim)
    t_grid = np.linspace(lo, hi, n_t)
    scaler = fit_scaler(sample.x)
    cache: dict[int, Optional[float]] = {}
    best = None
    for c in np.sort(np.asarray(c_grid, dtype=float)):
        k = k_from_c(c, h_pi, sample.n, k_floor)
        if k not in cache:
            spec = BasisSpec(family=basis_family, K=k,
                             covariate_dim=sample.covariate_dim)
            bmat = evaluate_basis(spec, scaler, sample.x)
            cache[k] = _gcv_value(sample, bmat, criterion, h_pi, k, t_grid)
        val = cache[k]
        if val is None:
            continue
        if best is None or val < best[0]:
            best = (val, k, float(c))
    if best is None:
        raise AllWeightsZero("every c_tilde produced an all-skipped GCV grid")
    return best[1], best[2]


# ---------------------------------------------------------------------------
# SIMEX bandwidth for h
# ---------------------------------------------------------------------------

def _cv_curve(train_s: np.ndarray, eval_pts: np.ndarray, sample, bmat,
              criterion: GelCriterion, h0: float, h_values: np.ndarray,
              trim) -> np.ndarray:
    """Leave-one-out CV criterion over the h grid.

    train_s are the (extra-contaminated) regressors; eval_pts[i] is the
    point at which observation i's residual is formed; the weight function
    is fit on the full sample, only the regression ratio drops observation i.
    """
    n = sample.n
    y = sample.y
    lo, hi = np.quantile(eval_pts, trim)
    active = np.nonzero((eval_pts >= lo) & (eval_pts <= hi))[0]
    ev0 = DeconvEvaluator(sample.error, h0)

    order = active[np.argsort(eval_pts[active])]
    pmat = np.full((n, n), np.nan)
    init = None
    usable = np.zeros(n, dtype=bool)
    for i in order:
        t = eval_pts[i]
        try:
            kw = kernel_weights(ev0, t, train_s, truncate_negative=True)
        except AllWeightsZero:
            continue
        fit = solve_lambda(bmat, kw, criterion, init=init, t=float(t))
        if fit.converged:
            init = fit.lam
        pmat[i] = pi_hat(fit, criterion, bmat)
        usable[i] = True

    act = active[usable[active]]
    if act.size == 0:
        return np.full(len(h_values), np.inf)
    p_act = pmat[act]
    diffs = eval_pts[act][:, None] - train_s[None, :]
    resid_target = p_act[np.arange(act.size), act] * y[act]
    out = np.empty(len(h_values))
    for j, h in enumerate(h_values):
        ev = DeconvEvaluator(sample.error, h)
        a = ev.values_fast(diffs / h)
        a_diag = a[np.arange(act.size), act]
        num = (p_act * a) @ y - p_act[np.arange(act.size), act] * a_diag * y[act]
        den = a.sum(axis=1) - a_diag
        with np.errstate(invalid="ignore", divide="ignore"):
            mu_loo = num / den
        resid = resid_target - mu_loo
        ok = np.isfinite(resid)
        out[j] = float((resid[ok] ** 2).sum()) if ok.any() else np.inf
    return out


def _loo_bandwidth(h_star: np.ndarray, h_star2: np.ndarray,
                   b_grid: np.ndarray) -> float:
    """Leave-one-out CV for the extrapolation bandwidth b."""
    d = len(h_star)
    best_b, best_score = float(b_grid[0]), np.inf
    for b in b_grid:
        score = 0.0
        valid = True
        for i in range(d):
            w = norm.pdf((h_star2[i] - np.delete(h_star2, i)) / b)
            tot = w.sum()
            if tot == 0.0:
                valid = False
                break
            pred = float(w @ np.delete(h_star, i) / tot)
            score += (h_star[i] - pred) ** 2
        if valid and score < best_score:
            best_score, best_b = score, float(b)
    return best_b


def simex_select_h(sample, h_pi: float, k: int, criterion: GelCriterion,
                   config: SimexConfig, basis_family: str = "power"):
    """SIMEX selection of the regression bandwidth h.

    Returns (h, diagnostics).  diagnostics carries the per-branch minimisers
    h*_d and h**_d, the grid minimiser of the averaged first-stage CV, the
    linear back-extrapolation value, and the fallback flag.
    """
    if h_pi <= 0 or k < 2:
        raise ValueError("invalid h_pi or K")
    h_values = config.h_multipliers * h_pi
    trim = (config.trim_lo, config.trim_hi)
    spec = BasisSpec(family=basis_family, K=k,
                     covariate_dim=sample.covariate_dim)
    scaler = fit_scaler(sample.x)
    bmat = evaluate_basis(spec, scaler, sample.x)
    n = sample.n

    cv1_sum = np.zeros(len(h_values))
    cv2_sum = np.zeros(len(h_values))
    h_star = np.empty(config.D)
    h_star2 = np.empty(config.D)
    for d in range(config.D):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, d]))
        u1 = sample.error.sample(rng, n)
        u2 = sample.error.sample(rng, n)
        s_star = sample.s + u1
        s_star2 = s_star + u2
        cv1 = _cv_curve(s_star, sample.s, sample, bmat, criterion, h_pi,
                        h_values, trim)
        cv2 = _cv_curve(s_star2, s_star, sample, bmat, criterion, h_pi,
                        h_values, trim)
        cv1_sum += cv1
        cv2_sum += cv2
        h_star[d] = h_values[int(np.argmin(cv1))]
        h_star2[d] = h_values[int(np.argmin(cv2))]

    h_star_hat = float(h_values[int(np.argmin(cv1_sum))])
    h_star2_hat = float(h_values[int(np.argmin(cv2_sum))])
    linear_back = h_star_hat ** 2 / h_star2_hat

    diagnostics = {
        "h_star": [float(v) for v in h_star],
        "h_star_star": [float(v) for v in h_star2],
        "h_star_hat": h_star_hat,
        "h_star_star_hat": h_star2_hat,
        "linear_back": float(linear_back),
        "fallback": False,
        "b": None,
    }
    spread = float(h_star2.std())
    if spread == 0.0:
        # all second-stage bandwidths coincide: extrapolation kernel weights
        # are undefined, fall back to the first-stage minimiser
        diagnostics["fallback"] = True
        return h_star_hat, diagnostics

    b_grid = (np.asarray(config.b_grid, dtype=float) if config.b_grid is not None
              else spread * np.geomspace(0.05, 2.0, 20))
    b = _loo_bandwidth(h_star, h_star2, b_grid)
    w = norm.pdf((h_star_hat - h_star2) / b)
    tot = w.sum()
    if tot == 0.0:
        diagnostics["fallback"] = True
        return h_star_hat, diagnostics
    h_hat = float(w @ h_star / tot)
    diagnostics["b"] = float(b)
    return h_hat, diagnostics


def two_step_tune(sample, criterion: GelCriterion, basis_family: str,
                  config: SimexConfig) -> SmoothingParams:
    """h0 by plug-in, K by GCV, h by SIMEX; deterministic given config.seed."""
    h_pi = plug_in_bandwidth(sample.s, sample.error)
    k, c_tilde = select_k(sample, h_pi, criterion, basis_family,
                          trim=(config.trim_lo, config.trim_hi))
    h, diag = simex_select_h(sample, h_pi, k, criterion, config, basis_family)
    return SmoothingParams(
        K=k, h0=h_pi, h=h, provenance="two_step",
        details={"c_tilde": c_tilde, "h_pi": h_pi, "simex": diag,
                 "config": config.to_dict(), "basis_family": basis_family,
                 "criterion": criterion.name})
