"""GEL dual objective and the damped Newton weight solver."""

import numpy as np
import pytest

from deconvadrf.basis import BasisSpec, CovariateScaler, evaluate_basis
from deconvadrf.errors import DomainViolation
from deconvadrf.gel import (GelCriterion, fit_weights_grid, get_criterion,
                            objective, pi_hat, solve_lambda)
from deconvadrf.kernels import DeconvEvaluator, ErrorModel, kernel_weights

ALL_CRITERIA = ["et", "el", "cue", "ilog"]


def _instance(seed, n=80, k=3):
    """Random truncated-weight problem on a power basis."""
    rng = np.random.default_rng(seed)
    x = rng.random((n, 1))
    spec = BasisSpec(family="power", K=k)
    sc = CovariateScaler(mins=np.zeros(1), maxs=np.ones(1))
    basis = evaluate_basis(spec, sc, x)
    kw = np.maximum(rng.normal(0.2, 0.5, n), 0.0)
    if kw.sum() == 0.0:
        kw[0] = 0.1
    return basis, kw


def test_get_criterion_names():
    for name in ALL_CRITERIA:
        assert get_criterion(name).name == name
    with pytest.raises(ValueError):
        get_criterion("gmm")


def test_rho_families_pointwise():
    et = get_criterion("et")
    assert et.rho(0.0) == pytest.approx(-np.exp(-1.0))
    assert et.rho1(-1.0) == pytest.approx(1.0)
    el = get_criterion("el")
    assert el.rho(0.0) == 0.0 and el.rho1(0.0) == 1.0
    cue = get_criterion("cue")
    assert cue.rho(0.0) == pytest.approx(-0.5)
    assert cue.rho1(0.0) == 1.0
    ilog = get_criterion("ilog")
    assert ilog.rho(0.0) == pytest.approx(-1.0)
    assert ilog.rho1(0.0) == pytest.approx(2.0)


def test_objective_at_zero_et():
    basis, kw = _instance(0)
    et = get_criterion("et")
    value, grad, hess = objective(basis, kw, et, np.zeros(3))
    assert value == pytest.approx(-np.exp(-1.0), abs=1e-12)
    wtilde = kw / kw.sum()
    expected = np.exp(-1.0) * (basis.T @ wtilde) - basis.mean(axis=0)
    assert np.allclose(grad, expected, atol=1e-12)


@pytest.mark.parametrize("name", ALL_CRITERIA)
def test_gradient_matches_finite_differences(name):
    crit = get_criterion(name)
    basis, kw = _instance(1)
    rng = np.random.default_rng(2)
    checked = 0
    while checked < 20:
        lam = rng.normal(0.0, 0.3, 3)
        try:
            value, grad, _ = objective(basis, kw, crit, lam)
        except DomainViolation:
            continue
        fd = np.empty(3)
        step = 1e-6
        ok = True
        for j in range(3):
            e = np.zeros(3)
            e[j] = step
            try:
                vp, _, _ = objective(basis, kw, crit, lam + e)
                vm, _, _ = objective(basis, kw, crit, lam - e)
            except DomainViolation:
                ok = False
                break
            fd[j] = (vp - vm) / (2 * step)
        if not ok:
            continue
        scale = max(1.0, np.linalg.norm(grad))
        assert np.linalg.norm(fd - grad) / scale <= 1e-5
        checked += 1


@pytest.mark.parametrize("name", ALL_CRITERIA)
def test_hessian_negative_semidefinite(name):
    crit = get_criterion(name)
    basis, kw = _instance(3)
    rng = np.random.default_rng(4)
    for _ in range(10):
        lam = rng.normal(0.0, 0.2, 3)
        try:
            _, _, hess = objective(basis, kw, crit, lam)
        except DomainViolation:
            continue
        eig = np.linalg.eigvalsh(0.5 * (hess + hess.T))
        assert eig.max() <= 1e-10


def test_domain_violation_reports_active_index():
    el = get_criterion("el")
    basis, kw = _instance(5)
    lam = np.array([-5.0, 0.0, 0.0])  # v = -5 < -1 everywhere
    with pytest.raises(DomainViolation) as exc:
        objective(basis, kw, el, lam)
    assert exc.value.index >= 0
    assert exc.value.value < -1.0


def test_domain_violation_ignores_zero_weight_rows():
    el = get_criterion("el")
    basis, kw = _instance(6)
    kw = np.zeros_like(kw)
    kw[0] = 1.0
    # lam chosen so only rows other than 0 would violate
    lam = np.array([0.0, 0.0, 0.0])
    value, _, _ = objective(basis, kw, el, lam)
    assert np.isfinite(value)


@pytest.mark.parametrize("name", ["et", "el", "cue"])
def test_kkt_moment_match_and_mean_one(name):
    crit = get_criterion(name)
    basis, kw = _instance(7, n=200)
    fit = solve_lambda(basis, kw, crit)
    assert fit.converged
    pis = pi_hat(fit, crit, basis)
    wtilde = kw / kw.sum()
    moment = basis.T @ (pis * wtilde)
    ubar = basis.mean(axis=0)
    assert np.max(np.abs(moment - ubar)) <= 1e-6
    # constant column: weighted mean of weights is one
    assert (pis * wtilde).sum() == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("name", ALL_CRITERIA)
def test_monotone_ascent(name):
    crit = get_criterion(name)
    for seed in range(5):
        basis, kw = _instance(seed + 20, n=120)
        trace = []
        solve_lambda(basis, kw, crit, trace=trace)
        diffs = np.diff(np.asarray(trace))
        assert np.all(diffs >= -1e-12)


def test_default_init_gives_unit_weights():
    et = get_criterion("et")
    basis, _ = _instance(8)
    lam = np.zeros(3)
    lam[0] = et.unit_weight_v
    assert np.allclose(et.rho1(basis @ lam), 1.0)
    # same construction through pi_hat
    from deconvadrf.gel import WeightFit
    fit = WeightFit(t=None, lam=lam, converged=True, iterations=0,
                    objective=0.0, gradient_norm=0.0,
                    effective_kernel_mass=1.0)
    assert np.allclose(pi_hat(fit, et, basis), 1.0)


def test_et_pi_at_minus_one():
    et = get_criterion("et")
    assert et.rho1(-1.0) == pytest.approx(1.0)


def test_ilog_has_no_unit_weight_point():
    ilog = get_criterion("ilog")
    assert ilog.unit_weight_v is None
    v = np.linspace(-20, 20, 201)
    assert np.all(ilog.rho1(v) > 1.0)


def test_ilog_weighted_mean_approaches_one_from_above():
    # rho' > 1 everywhere, so the constant-coordinate moment can only be
    # approached, never matched; the solver drives it towards 1 from above
    ilog = get_criterion("ilog")
    basis, kw = _instance(30, n=200)
    fit = solve_lambda(basis, kw, ilog)
    pis = pi_hat(fit, ilog, basis)
    wtilde = kw / kw.sum()
    mean = float((pis * wtilde).sum())
    assert mean > 1.0
    assert np.all(pis >= 1.0)  # floats saturate at 1 when exp(-v) underflows


@pytest.mark.parametrize("name", ALL_CRITERIA)
def test_weights_positive_at_all_sample_points(name):
    crit = get_criterion(name)
    for seed in range(5):
        basis, kw = _instance(seed + 40, n=150)
        fit = solve_lambda(basis, kw, crit)
        pis = pi_hat(fit, crit, basis)
        if name == "cue":
            assert np.all(pis >= 0.0)
        else:
            assert np.all(pis > 0.0)


def test_independence_design_weights_near_one():
    rng = np.random.default_rng(10)
    n = 2000
    x = 0.3 + 0.4 * rng.random((n, 1))
    t_latent = rng.standard_normal(n)  # independent of x
    spec = BasisSpec(family="power", K=3)
    sc = CovariateScaler(mins=np.array([0.3]), maxs=np.array([0.7]))
    basis = evaluate_basis(spec, sc, x)
    ev = DeconvEvaluator(ErrorModel.none(), 0.3)
    kw = kernel_weights(ev, float(np.median(t_latent)), t_latent,
                        truncate_negative=True)
    fit = solve_lambda(basis, kw, get_criterion("et"))
    pis = pi_hat(fit, get_criterion("et"), basis)
    assert np.max(np.abs(pis - 1.0)) <= 0.15


def test_criterion_equivalence_on_independence_design():
    rng = np.random.default_rng(11)
    n = 5000
    x = rng.random((n, 1))
    t_latent = rng.standard_normal(n)
    spec = BasisSpec(family="power", K=3)
    sc = CovariateScaler(mins=np.zeros(1), maxs=np.ones(1))
    basis = evaluate_basis(spec, sc, x)
    ev = DeconvEvaluator(ErrorModel.none(), 0.3)
    kw = kernel_weights(ev, 0.0, t_latent, truncate_negative=True)
    pis = {}
    for name in ALL_CRITERIA:
        crit = get_criterion(name)
        fit = solve_lambda(basis, kw, crit)
        pis[name] = pi_hat(fit, crit, basis)
    for a in ALL_CRITERIA:
        for b in ALL_CRITERIA:
            rms = np.sqrt(np.mean((pis[a] - pis[b]) ** 2))
            assert rms <= 0.05


def test_zero_kernel_mass_rejected():
    basis, kw = _instance(12)
    with pytest.raises(ValueError):
        solve_lambda(basis, np.zeros_like(kw), get_criterion("et"))
    with pytest.raises(ValueError):
        solve_lambda(basis, -kw - 1.0, get_criterion("et"))


def test_fit_diagnostics_fields():
    basis, kw = _instance(13)
    fit = solve_lambda(basis, kw, get_criterion("et"), t=0.25)
    d = fit.diagnostics()
    assert d["t"] == 0.25
    assert set(d) == {"t", "converged", "iterations", "gradient_norm",
                      "effective_kernel_mass"}
    assert d["effective_kernel_mass"] == pytest.approx(kw.sum() / len(kw))


def test_fit_weights_grid_skips_empty_points():
    rng = np.random.default_rng(14)
    s = rng.normal(0.0, 1.0, 100)
    spec = BasisSpec(family="power", K=2)
    sc = CovariateScaler(mins=np.zeros(1), maxs=np.ones(1))
    basis = evaluate_basis(spec, sc, rng.random((100, 1)))
    ev = DeconvEvaluator(ErrorModel.laplace(0.1), 0.02)
    grid = np.array([0.0, 500.0])  # second point far outside support
    fits, pis = fit_weights_grid(basis, s, ev, get_criterion("et"), grid)
    assert fits[0] is not None and pis[0] is not None
    assert fits[1] is None and pis[1] is None


def test_cue_clipping_counter():
    crit = get_criterion("cue")
    basis, _ = _instance(15)
    from deconvadrf.gel import WeightFit
    lam = np.array([2.0, 0.0, 0.0])  # v = 2 > 1 everywhere -> negative rho'
    fit = WeightFit(t=None, lam=lam, converged=True, iterations=0,
                    objective=0.0, gradient_norm=0.0,
                    effective_kernel_mass=1.0)
    pis = pi_hat(fit, crit, basis)
    assert np.all(pis == 0.0)
    assert fit.cue_clip_count == basis.shape[0]
