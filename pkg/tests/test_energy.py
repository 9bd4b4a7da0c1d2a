import numpy as np
import pytest

from netfield import (
    Box,
    ConstantField,
    FuncField,
    Kernel,
    fit_loglog,
    local_energy,
    nonlocal_energy,
    nonlocal_energy_grid,
    sigma_eta,
)


def flat(value=1.0):
    return ConstantField(value)


def test_sigma_eta_matches_kernel_moment():
    m = sigma_eta(Kernel("indicator"), 2)
    assert m.sigma_eta == pytest.approx(np.pi / 4.0, abs=1e-12)


def test_local_energy_closed_form_1d():
    # rho=1, g=1: int_0^1 (d/dx sin(2x))^2 = int 4 cos^2(2x) = 2 + sin(4)/2
    dom = Box([0.0], [1.0])
    u = FuncField(lambda p: np.sin(2.0 * p[:, 0]), name="sin2x")
    val = local_energy(dom, flat(), flat(), u, tol=1e-8)
    assert val == pytest.approx(2.0 + np.sin(4.0) / 2.0, rel=1e-6)


def test_local_energy_g_dependence_1d():
    # g = 2 divides the integrand by 2^{d+2} = 8
    dom = Box([0.0], [1.0])
    u = FuncField(lambda p: np.sin(2.0 * p[:, 0]), name="sin2x")
    base = local_energy(dom, flat(), flat(), u, tol=1e-8)
    halved = local_energy(dom, flat(), flat(2.0), u, tol=1e-8)
    assert halved == pytest.approx(base / 8.0, rel=1e-6)


def test_local_energy_rejects_sign_changing_g():
    dom = Box([0.0], [1.0])
    u = FuncField(lambda p: p[:, 0], name="x")
    bad = FuncField(lambda p: p[:, 0] - 0.5, name="signed")
    with pytest.raises(ValueError):
        local_energy(dom, flat(), bad, u)


def test_nonlocal_energy_mc_agrees_with_grid():
    dom = Box([0.0, 0.0], [1.0, 1.0])
    u = FuncField(lambda p: np.sin(2.0 * p[:, 0]) + p[:, 1], name="mix")
    g = FuncField(lambda p: 1.0 + 0.25 * p[:, 0], name="ramp")
    eps = 0.15
    kern = Kernel("indicator")
    det = nonlocal_energy_grid(dom, flat(), g, u, eps, kern, nx=96, ns=24)
    mc, se = nonlocal_energy(dom, flat(), g, u, eps, kern,
                             mc_pairs=60000, seed=3)
    assert mc == pytest.approx(det, abs=max(4.0 * se, 0.02 * det))


def test_nonlocal_energy_grid_requires_box():
    from netfield import Ball
    u = FuncField(lambda p: p[:, 0], name="x")
    with pytest.raises(ValueError):
        nonlocal_energy_grid(Ball([0.0, 0.0], 1.0), flat(), flat(), u, 0.1,
                             Kernel("indicator"))


def test_nonlocal_approaches_local_small_eps():
    # 1-d, smooth everything: I_eps -> I as eps -> 0
    dom = Box([0.0], [1.0])
    u = FuncField(lambda p: np.sin(2.0 * p[:, 0]), name="sin2x")
    g = FuncField(lambda p: 1.0 + 0.2 * p[:, 0], name="ramp")
    local = local_energy(dom, flat(), g, u, tol=1e-8)
    coarse = nonlocal_energy_grid(dom, flat(), g, u, 0.1, Kernel("triangular"),
                                  nx=1024, ns=256)
    fine = nonlocal_energy_grid(dom, flat(), g, u, 0.025, Kernel("triangular"),
                                nx=1024, ns=256)
    assert abs(fine - local) < abs(coarse - local)
    assert fine == pytest.approx(local, rel=0.05)


def test_fit_loglog_exact_power_law():
    x = np.array([0.02, 0.04, 0.08, 0.16, 0.32])
    y = 3.0 * x**1.7
    slope, intercept, resid = fit_loglog(x, y)
    assert slope == pytest.approx(1.7, abs=1e-12)
    assert intercept == pytest.approx(np.log(3.0), abs=1e-12)
    assert resid < 1e-13


def test_fit_loglog_drop_largest():
    x = np.array([0.02, 0.04, 0.08, 0.16, 0.32])
    y = 3.0 * x**2.0
    y[-1] *= 10.0  # corrupt the coarsest point
    slope, _, _ = fit_loglog(x, y, drop_largest=True)
    assert slope == pytest.approx(2.0, abs=1e-12)


def test_fit_loglog_validation():
    with pytest.raises(ValueError):
        fit_loglog([0.1, 0.2, 0.4], [1.0, 2.0, 4.0])
    with pytest.raises(ValueError):
        fit_loglog([0.1, 0.2, 0.4, 0.8], [1.0, -2.0, 4.0, 8.0])
