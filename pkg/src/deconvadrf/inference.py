"""Pointwise confidence intervals via the estimator's linear expansion.

Per-observation influence values are formed from the two kernel stages with
population means replaced by sample means; the pointwise variance is the
empirical second moment of the centred influence values divided by
(N f_hat_T(t))^2.  Bands use undersmoothed bandwidths (factor N^{-1/10} on
both h and h0) so the bias is negligible against the standard error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.stats import norm

from .errors import AllWeightsZero
from .estimator import ObservedSample, m_hat, _basis_for
from .gel import GelCriterion, pi_hat, solve_lambda
from .kernels import DeconvEvaluator, kernel_weights

UNDERSMOOTH_EXPONENT = -0.1
DENSITY_FLOOR = 1e-10


@dataclass
class CiBand:
    grid: np.ndarray
    mu: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    alpha: float
    undersmooth_factor: float
    variance: np.ndarray
    skipped: List[int] = field(default_factory=list)
    degenerate: List[int] = field(default_factory=list)

    def to_csv(self, path) -> None:
        import csv
        skipped = set(self.skipped)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "mu", "lo", "hi"])
            for i, t in enumerate(self.grid):
                if i in skipped:
                    w.writerow([repr(float(t)), "", "", ""])
                else:
                    w.writerow([repr(float(t)), repr(float(self.mu[i])),
                                repr(float(self.lo[i])), repr(float(self.hi[i]))])


def influence_values(sample: ObservedSample, params, t: float,
                     plug_ins: dict) -> np.ndarray:
    """Empirical influence values eta_i at t.

    plug_ins must supply 'pi' (weights at t for each sample point),
    'mu' (the point estimate at t) and 'm' (outcome regression values at t
    for each sample point).  Both kernels are untruncated here.
    """
    pi = np.asarray(plug_ins["pi"], dtype=float)
    mu_t = float(plug_ins["mu"])
    m = np.asarray(plug_ins["m"], dtype=float)
    ev_h = DeconvEvaluator(sample.error, params.h)
    ev_h0 = DeconvEvaluator(sample.error, params.h0)
    kh = ev_h.values_fast((t - sample.s) / params.h) / params.h
    kh0 = ev_h0.values_fast((t - sample.s) / params.h0) / params.h0

    a = pi * sample.y * kh
    d = m * pi * kh0
    phi = (a - a.mean()) - mu_t * (kh - kh.mean())
    psi = mu_t * (kh0 - kh0.mean()) - (d - d.mean())
    return phi + psi


def _point_estimate(sample, params, criterion, bmat, t):
    """mu_hat at a single t plus the pieces needed for influence values."""
    ev0 = DeconvEvaluator(sample.error, params.h0)
    ev_h = DeconvEvaluator(sample.error, params.h)
    kw0 = kernel_weights(ev0, t, sample.s, truncate_negative=True)
    fit = solve_lambda(bmat, kw0, criterion, t=float(t))
    pi = pi_hat(fit, criterion, bmat)
    kh = ev_h.values_fast((t - sample.s) / params.h)
    den = kh.sum()
    if den == 0.0 or not np.isfinite(den):
        raise AllWeightsZero(f"regression kernel mass vanished at t={t}")
    mu_t = float((pi * sample.y * kh).sum() / den)
    if not np.isfinite(mu_t):
        raise AllWeightsZero(f"non-finite point estimate at t={t}")
    return mu_t, pi


def ci_pointwise(sample: ObservedSample, params, criterion: GelCriterion,
                 grid, alpha: float = 0.05,
                 basis_family: str = "power") -> CiBand:
    """Undersmoothed pointwise confidence band for the dose-response curve."""
    if not (0.005 <= alpha <= 0.5):
        raise ValueError("alpha must lie in [0.005, 0.5]")
    grid = np.asarray(grid, dtype=float)
    n = sample.n
    factor = float(n) ** UNDERSMOOTH_EXPONENT
    from .tuning import SmoothingParams
    params_us = SmoothingParams(K=params.K, h0=params.h0 * factor,
                                h=params.h * factor,
                                provenance="undersmoothed")
    _, _, bmat = _basis_for(sample, params_us.K, basis_family)
    z = float(norm.ppf(1.0 - alpha / 2.0))

    from .estimator import f_t_hat
    f_hat = f_t_hat(sample, params_us.h, grid)

    mu = np.full(len(grid), np.nan)
    lo = np.full(len(grid), np.nan)
    hi = np.full(len(grid), np.nan)
    var = np.full(len(grid), np.nan)
    skipped, degenerate = [], []
    for i, t in enumerate(grid):
        try:
            mu_t, pi = _point_estimate(sample, params_us, criterion, bmat, t)
            m_fn = m_hat(sample, params_us, t, basis_family)
        except AllWeightsZero:
            skipped.append(i)
            continue
        m_vals = m_fn(sample.x)
        eta = influence_values(sample, params_us, t,
                               {"pi": pi, "mu": mu_t, "m": m_vals})
        ft = max(f_hat[i], DENSITY_FLOOR)
        v = float(((eta - eta.mean()) ** 2).sum()) / (n * ft) ** 2
        mu[i] = mu_t
        var[i] = v
        if v == 0.0:
            degenerate.append(i)
        half = z * np.sqrt(v)
        lo[i] = mu_t - half
        hi[i] = mu_t + half
    return CiBand(grid=grid, mu=mu, lo=lo, hi=hi, alpha=alpha,
                  undersmooth_factor=factor, variance=var,
                  skipped=skipped, degenerate=degenerate)
