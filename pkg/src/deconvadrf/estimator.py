"""Weighted deconvolution local-constant estimators of the dose-response
curve, plus the oracle and naive comparators, the sieve outcome regression,
and the deconvolution density estimate of the latent treatment.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.stats import norm

from .basis import BasisSpec, evaluate_basis, fit_scaler
from .errors import AllWeightsZero
from .gel import GelCriterion, fit_weights_grid, pi_hat, solve_lambda
from .kernels import DeconvEvaluator, ErrorModel, kernel_weights

M_HAT_RIDGE = 1e-8


@dataclass
class ObservedSample:
    """The (S, X, Y) data matrix with its declared error model."""

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    error: ErrorModel

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float).ravel()
        self.y = np.asarray(self.y, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        self.x = x
        n = self.s.size
        if self.x.shape[0] != n or self.y.size != n:
            raise ValueError("s, x, y must have equal lengths")
        for name, arr in (("s", self.s), ("x", self.x), ("y", self.y)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")

    @property
    def n(self) -> int:
        return self.s.size

    @property
    def covariate_dim(self) -> int:
        return self.x.shape[1]

    def with_error(self, error: ErrorModel) -> "ObservedSample":
        return ObservedSample(self.s, self.x, self.y, error)


@dataclass
class AdrfCurve:
    """Estimated curve on a grid with per-point skip and convergence flags."""

    grid: np.ndarray
    mu: np.ndarray
    skipped: List[int]
    params: object = None
    fit_flags: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        skipped = set(self.skipped)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["t", "mu", "skipped"])
            for i, (t, m) in enumerate(zip(self.grid, self.mu)):
                flag = 1 if i in skipped else 0
                writer.writerow([repr(float(t)),
                                 "" if flag else repr(float(m)), flag])

    def provenance(self) -> dict:
        d = {"skipped": [int(i) for i in self.skipped]}
        if self.params is not None and hasattr(self.params, "to_dict"):
            d["params"] = self.params.to_dict()
        d.update(self.meta)
        return d


def _basis_for(sample: ObservedSample, k: int, basis_family: str,
               spline_degree: int = 3):
    spec = BasisSpec(family=basis_family, K=k, spline_degree=spline_degree,
                     covariate_dim=sample.covariate_dim)
    scaler = fit_scaler(sample.x)
    return spec, scaler, evaluate_basis(spec, scaler, sample.x)


def _ratio_curve(grid, num_fn, den_fn):
    """Assemble mu values with skip handling, in grid order."""
    mu = np.full(len(grid), np.nan)
    skipped = []
    for i in range(len(grid)):
        den = den_fn(i)
        if den is None or den == 0.0 or not np.isfinite(den):
            skipped.append(i)
            continue
        val = num_fn(i) / den
        if not np.isfinite(val):
            skipped.append(i)
            continue
        mu[i] = val
    return mu, skipped


def mu_hat(sample: ObservedSample, params, criterion: GelCriterion,
           grid, basis_family: str = "power") -> AdrfCurve:
    """The weighted deconvolution local-constant ADRF estimator.

    Weights are fitted with the truncated h0-kernel; the final ratio uses the
    untruncated h-kernel.
    """
    grid = np.asarray(grid, dtype=float)
    _, _, bmat = _basis_for(sample, params.K, basis_family)
    ev0 = DeconvEvaluator(sample.error, params.h0)
    evh = DeconvEvaluator(sample.error, params.h)
    fits, pis = fit_weights_grid(bmat, sample.s, ev0, criterion, grid)
    n = sample.n
    mu = np.full(len(grid), np.nan)
    flags = np.zeros(len(grid), dtype=bool)
    skipped = []
    for i, t in enumerate(grid):
        if fits[i] is None:
            skipped.append(i)
            continue
        kh = evh.values_fast((t - sample.s) / params.h)
        den = kh.sum()
        if den == 0.0 or not np.isfinite(den):
            skipped.append(i)
            continue
        val = float((pis[i] * sample.y * kh).sum() / den)
        if not np.isfinite(val):
            skipped.append(i)
            continue
        mu[i] = val
        flags[i] = fits[i].converged
    return AdrfCurve(grid=grid, mu=mu, skipped=skipped, params=params,
                     fit_flags=flags,
                     meta={"estimator": "mu_hat", "criterion": criterion.name,
                           "error": sample.error.to_dict(),
                           "basis_family": basis_family})


def mu_oracle(sample: ObservedSample, pi0: Callable, h: float,
              grid) -> AdrfCurve:
    """Same ratio as mu_hat but with a known weight function pi0(t, x)."""
    grid = np.asarray(grid, dtype=float)
    evh = DeconvEvaluator(sample.error, h)
    mu = np.full(len(grid), np.nan)
    skipped = []
    for i, t in enumerate(grid):
        kh = evh.values_fast((t - sample.s) / h)
        den = kh.sum()
        if den == 0.0 or not np.isfinite(den):
            skipped.append(i)
            continue
        w = np.asarray(pi0(t, sample.x), dtype=float).ravel()
        val = float((w * sample.y * kh).sum() / den)
        if not np.isfinite(val):
            skipped.append(i)
            continue
        mu[i] = val
    return AdrfCurve(grid=grid, mu=mu, skipped=skipped,
                     meta={"estimator": "mu_oracle", "h": h,
                           "error": sample.error.to_dict()})


def naive_mu(sample: ObservedSample, criterion: GelCriterion, grid,
             params=None, basis_family: str = "power",
             tune_config=None) -> AdrfCurve:
    """The error-ignoring comparator: treats S as the true treatment.

    Weight fitting reuses the GEL machinery with phi_U = 1; the regression
    stage uses a standard Gaussian kernel.  When params is None, smoothing
    parameters come from the two-step tuner applied to the error-free sample.
    """
    grid = np.asarray(grid, dtype=float)
    none_sample = sample.with_error(ErrorModel.none())
    if params is None:
        from .tuning import SimexConfig, two_step_tune
        cfg = tune_config if tune_config is not None else SimexConfig()
        params = two_step_tune(none_sample, criterion, basis_family, cfg)
    _, _, bmat = _basis_for(none_sample, params.K, basis_family)
    ev0 = DeconvEvaluator(none_sample.error, params.h0)
    fits, pis = fit_weights_grid(bmat, none_sample.s, ev0, criterion, grid)
    mu = np.full(len(grid), np.nan)
    flags = np.zeros(len(grid), dtype=bool)
    skipped = []
    for i, t in enumerate(grid):
        if fits[i] is None:
            skipped.append(i)
            continue
        kh = norm.pdf((t - none_sample.s) / params.h)
        den = kh.sum()
        if den == 0.0 or not np.isfinite(den):
            skipped.append(i)
            continue
        val = float((pis[i] * none_sample.y * kh).sum() / den)
        if not np.isfinite(val):
            skipped.append(i)
            continue
        mu[i] = val
        flags[i] = fits[i].converged
    return AdrfCurve(grid=grid, mu=mu, skipped=skipped, params=params,
                     fit_flags=flags,
                     meta={"estimator": "naive_mu", "criterion": criterion.name,
                           "basis_family": basis_family})


def m_hat(sample: ObservedSample, params, t: float,
          basis_family: str = "power"):
    """Outcome regression m_hat(t, x) = gamma_t' u_K(x) by kernel-weighted
    sieve least squares (truncated h0 deconvolution weights, small ridge).

    Returns a callable mapping covariate rows to fitted values; the
    coefficient vector is available as its `gamma` attribute.
    """
    spec, scaler, bmat = _basis_for(sample, params.K, basis_family)
    ev0 = DeconvEvaluator(sample.error, params.h0)
    kw = kernel_weights(ev0, t, sample.s, truncate_negative=True)
    w = kw / kw.sum()
    bw = bmat * w[:, None]
    gram = bw.T @ bmat + M_HAT_RIDGE * np.eye(params.K)
    rhs = bw.T @ sample.y
    gamma = np.linalg.solve(gram, rhs)

    def predict(x_rows):
        rows = evaluate_basis(spec, scaler, x_rows)
        return rows @ gamma

    predict.gamma = gamma
    return predict


def f_t_hat(sample: ObservedSample, h: float, grid) -> np.ndarray:
    """Deconvolution kernel density estimate of the latent treatment:
    (Nh)^-1 sum_i L_U{(t - S_i)/h}.  May be negative at isolated points."""
    grid = np.asarray(grid, dtype=float)
    ev = DeconvEvaluator(sample.error, h)
    out = np.empty(len(grid))
    for i, t in enumerate(grid):
        out[i] = ev.values_fast((t - sample.s) / h).sum() / (sample.n * h)
    return out
