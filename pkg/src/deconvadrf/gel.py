"""Local generalised-empirical-likelihood weight estimation.

For a fixed treatment value t, the stabilised weight function is estimated
as pi_hat(t, x) = rho'{lambda_t' u_K(x)}, where lambda_t maximises the
concave dual objective

    G_t(lambda) = sum_i rho(lambda' u_i) wtilde_i  -  lambda' ubar,

with wtilde the (truncated, normalised) deconvolution kernel weights at
bandwidth h0 and ubar the unweighted sample mean of the basis.  The
maximisation is damped Newton ascent with Armijo backtracking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainViolation

ARMIJO_C = 1e-4
SHRINK = 0.5
GRAD_TOL = 1e-8
MAX_ITER = 200
HESS_RIDGE = 1e-10
MAX_BACKTRACK = 60


@dataclass(frozen=True)
class GelCriterion:
    """A member of the rho-family: rho increasing and concave on its domain."""

    name: str
    rho: Callable
    rho1: Callable
    rho2: Callable
    # open domain (lo, hi) for v = lambda' u; None means unbounded
    domain_lo: Optional[float]
    domain_hi: Optional[float]
    # v with rho'(v) = 1, used to start the solver at weights == 1;
    # None when no such v exists (inverse logistic)
    unit_weight_v: Optional[float]

    def in_domain(self, v: np.ndarray) -> np.ndarray:
        ok = np.ones(np.shape(v), dtype=bool)
        if self.domain_lo is not None:
            ok &= v > self.domain_lo
        if self.domain_hi is not None:
            ok &= v < self.domain_hi
        return ok


_CRITERIA = {
    "et": GelCriterion(
        name="et",
        rho=lambda v: -np.exp(-v - 1.0),
        rho1=lambda v: np.exp(-v - 1.0),
        rho2=lambda v: -np.exp(-v - 1.0),
        domain_lo=None, domain_hi=None, unit_weight_v=-1.0),
    "el": GelCriterion(
        name="el",
        rho=lambda v: np.log1p(v),
        rho1=lambda v: 1.0 / (1.0 + v),
        rho2=lambda v: -1.0 / (1.0 + v) ** 2,
        domain_lo=-1.0, domain_hi=None, unit_weight_v=0.0),
    "cue": GelCriterion(
        name="cue",
        rho=lambda v: -0.5 * (1.0 - v) ** 2,
        rho1=lambda v: 1.0 - v,
        rho2=lambda v: -np.ones_like(np.asarray(v, dtype=float)),
        # rho'(v) = 1 - v is positive only below 1; the solver stays in the
        # half-space max_i lambda' u_i < 1 to keep weights positive
        domain_lo=None, domain_hi=1.0, unit_weight_v=0.0),
    "ilog": GelCriterion(
        name="ilog",
        rho=lambda v: v - np.exp(-v),
        rho1=lambda v: 1.0 + np.exp(-v),
        rho2=lambda v: -np.exp(-v),
        # rho' > 1 everywhere, so no lambda reproduces unit weights exactly;
        # the solver starts from zero instead
        domain_lo=None, domain_hi=None, unit_weight_v=None),
}


def get_criterion(name: str) -> GelCriterion:
    try:
        return _CRITERIA[name]
    except KeyError:
        raise ValueError(
            f"unknown GEL criterion {name!r}; choose from {sorted(_CRITERIA)}")


@dataclass
class WeightFit:
    t: Optional[float]
    lam: np.ndarray
    converged: bool
    iterations: int
    objective: float
    gradient_norm: float
    effective_kernel_mass: float
    cue_clip_count: int = 0

    def diagnostics(self) -> dict:
        return {
            "t": self.t,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "gradient_norm": float(self.gradient_norm),
            "effective_kernel_mass": float(self.effective_kernel_mass),
        }


def _prepare(basis: np.ndarray, kernel_w: np.ndarray):
    basis = np.asarray(basis, dtype=float)
    kernel_w = np.asarray(kernel_w, dtype=float)
    if np.any(kernel_w < 0):
        raise ValueError("kernel weights must be nonnegative (truncate first)")
    total = kernel_w.sum()
    if total <= 0:
        raise ValueError("kernel weights sum to zero")
    wtilde = kernel_w / total
    ubar = basis.mean(axis=0)
    return basis, wtilde, ubar


def objective(basis: np.ndarray, kernel_w: np.ndarray,
              criterion: GelCriterion, lam: np.ndarray):
    """Value, gradient and Hessian of the dual objective at lam."""
    basis, wtilde, ubar = _prepare(basis, kernel_w)
    lam = np.asarray(lam, dtype=float)
    v = basis @ lam
    active = wtilde > 0
    bad = active & ~criterion.in_domain(v)
    if np.any(bad):
        i = int(np.nonzero(bad)[0][0])
        raise DomainViolation(i, float(v[i]))
    with np.errstate(over="ignore"):
        value = float(wtilde[active] @ criterion.rho(v[active]) - lam @ ubar)
        r1 = np.where(active, criterion.rho1(np.where(active, v, 0.0)), 0.0)
        grad = basis.T @ (r1 * wtilde) - ubar
        r2 = np.where(active, criterion.rho2(np.where(active, v, 0.0)), 0.0)
        hess = basis.T @ (basis * (r2 * wtilde)[:, None])
    return value, grad, hess


def _value_grad(basis, wtilde, ubar, criterion, lam):
    v = basis @ lam
    active = wtilde > 0
    vs = np.where(active, v, 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        value = float(wtilde @ np.where(active, criterion.rho(vs), 0.0)
                      - lam @ ubar)
        r1 = np.where(active, criterion.rho1(vs), 0.0)
        grad = basis.T @ (r1 * wtilde) - ubar
    return value, grad, v, active, vs


def solve_lambda(basis: np.ndarray, kernel_w: np.ndarray,
                 criterion: GelCriterion, init: Optional[np.ndarray] = None,
                 t: Optional[float] = None, max_iter: int = MAX_ITER,
                 trace: Optional[list] = None) -> WeightFit:
    """Damped Newton ascent of the dual objective with backtracking.

    When trace is a list, the objective value after each accepted step is
    appended to it (the initial value first).
    """
    basis, wtilde, ubar = _prepare(basis, np.asarray(kernel_w, dtype=float))
    n, k = basis.shape
    if init is None:
        lam = np.zeros(k)
        if criterion.unit_weight_v is not None:
            lam[0] = criterion.unit_weight_v
    else:
        lam = np.asarray(init, dtype=float).copy()
    mass = float(np.asarray(kernel_w, dtype=float).sum()) / n

    value, grad, v, active, vs = _value_grad(basis, wtilde, ubar, criterion, lam)
    gnorm = float(np.linalg.norm(grad))
    iterations = 0
    if trace is not None:
        trace.append(value)
    converged = gnorm <= GRAD_TOL * (1.0 + abs(value))
    for iterations in range(1, max_iter + 1):
        if converged:
            break
        r2 = np.where(active, criterion.rho2(vs), 0.0)
        hess = basis.T @ (basis * (r2 * wtilde)[:, None])
        direction = None
        try:
            direction = np.linalg.solve(-hess, grad)
            if not np.all(np.isfinite(direction)):
                direction = None
        except np.linalg.LinAlgError:
            direction = None
        if direction is None:
            try:
                direction = np.linalg.solve(-(hess - HESS_RIDGE * np.eye(k)), grad)
            except np.linalg.LinAlgError:
                direction = grad.copy()
        if not np.all(np.isfinite(direction)):
            direction = grad.copy()
        with np.errstate(over="ignore"):
            slope = float(grad @ direction)
            if slope <= 0.0 or not np.isfinite(slope):
                direction = grad.copy()
                slope = float(grad @ direction)
            if slope <= 0.0 or not np.isfinite(slope):
                break
        alpha = 1.0
        accepted = False
        for _ in range(MAX_BACKTRACK):
            cand = lam + alpha * direction
            vc = basis @ cand
            # keep every sample point inside the criterion domain so the
            # implied weights stay positive everywhere
            if np.all(criterion.in_domain(vc)):
                with np.errstate(over="ignore", invalid="ignore"):
                    val_c = float(
                        wtilde @ np.where(
                            active,
                            criterion.rho(np.where(active, vc, 0.0)), 0.0)
                        - cand @ ubar)
                if np.isfinite(val_c) and val_c >= value + ARMIJO_C * alpha * slope:
                    lam = cand
                    accepted = True
                    break
            alpha *= SHRINK
        if not accepted:
            break
        value, grad, v, active, vs = _value_grad(basis, wtilde, ubar, criterion, lam)
        gnorm = float(np.linalg.norm(grad))
        if trace is not None:
            trace.append(value)
        converged = gnorm <= GRAD_TOL * (1.0 + abs(value))

    return WeightFit(t=t, lam=lam, converged=bool(converged),
                     iterations=iterations, objective=value,
                     gradient_norm=gnorm, effective_kernel_mass=mass)


def pi_hat(fit: WeightFit, criterion: GelCriterion,
           basis_rows: np.ndarray) -> np.ndarray:
    """pi_hat = rho'(lambda' u); CUE values past the positivity boundary are
    clipped at 0 and counted on the fit."""
    basis_rows = np.atleast_2d(np.asarray(basis_rows, dtype=float))
    v = basis_rows @ fit.lam
    with np.errstate(over="ignore"):
        out = criterion.rho1(v)
    if criterion.name == "cue":
        neg = out < 0.0
        if np.any(neg):
            fit.cue_clip_count += int(neg.sum())
            out = np.where(neg, 0.0, out)
    return out


def fit_weights_grid(basis: np.ndarray, s: np.ndarray, evaluator,
                     criterion: GelCriterion, t_grid: np.ndarray,
                     warm_start: bool = True):
    """Fit weights at every t in t_grid with the evaluator's h0 kernel.

    Returns (fits, pis): per grid point either (WeightFit, pi vector over the
    sample) or (None, None) when all truncated kernel weights vanish.
    """
    from .kernels import kernel_weights
    from .errors import AllWeightsZero

    fits, pis = [], []
    init = None
    for t in np.asarray(t_grid, dtype=float):
        try:
            kw = kernel_weights(evaluator, t, s, truncate_negative=True)
        except AllWeightsZero:
            fits.append(None)
            pis.append(None)
            continue
        fit = solve_lambda(basis, kw, criterion, init=init, t=float(t))
        if warm_start and fit.converged:
            init = fit.lam
        fits.append(fit)
        pis.append(pi_hat(fit, criterion, basis))
    return fits, pis
