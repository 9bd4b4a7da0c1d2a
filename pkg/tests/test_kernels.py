import numpy as np
import pytest

from netfield import Kernel, kernel_moment


def test_exp_square_values():
    k = Kernel("exp-square")
    assert k.eta(0.0) == 1.0
    assert k.eta(0.3) == pytest.approx(np.exp(-0.09), rel=1e-15)
    np.testing.assert_allclose(k.eta(np.array([0.0, 1.0, 2.0])),
                               [1.0, np.exp(-1.0), np.exp(-4.0)])


def test_indicator_and_triangular_values():
    ind = Kernel("indicator")
    tri = Kernel("triangular")
    t = np.array([0.0, 0.5, 0.999, 1.0, 1.5])
    np.testing.assert_array_equal(ind.eta(t), [1.0, 1.0, 1.0, 0.0, 0.0])
    np.testing.assert_allclose(tri.eta(t), [1.0, 0.5, 0.001, 0.0, 0.0])


def test_eta_rejects_negative_argument():
    with pytest.raises(ValueError):
        Kernel("exp-square").eta(-0.5)


def test_unknown_profile_rejected():
    with pytest.raises(ValueError):
        Kernel("boxcar")


def test_eta_inv_round_trip():
    k = Kernel("exp-square")
    t = np.linspace(0.05, 2.5, 40)
    np.testing.assert_allclose(k.eta_inv(k.eta(t)), t, rtol=1e-12)
    tri = Kernel("triangular")
    s = np.linspace(0.0, 1.0, 11)
    np.testing.assert_allclose(tri.eta_inv(tri.eta(s)), s, atol=1e-15)


def test_eta_inv_domain_checks():
    k = Kernel("exp-square")
    with pytest.raises(ValueError):
        k.eta_inv(0.0)
    with pytest.raises(ValueError):
        k.eta_inv(1.5)
    with pytest.raises(ValueError):
        Kernel("indicator").eta_inv(0.5)
    assert not Kernel("indicator").invertible


def test_support_radius():
    assert Kernel("indicator").support_radius() == 1.0
    assert Kernel("triangular").support_radius() == 1.0
    r = Kernel("exp-square").support_radius(weight_floor=1e-12)
    assert np.exp(-(r**2)) == pytest.approx(1e-12, rel=1e-12)


def test_moment_indicator_closed_forms():
    # (S_{d-1}/d) * 1/(d+2): 2/3, pi/4, 4pi/15
    expected = {1: 2.0 / 3.0, 2: np.pi / 4.0, 3: 4.0 * np.pi / 15.0}
    for d, val in expected.items():
        m = kernel_moment(Kernel("indicator"), d)
        assert m.sigma_eta == pytest.approx(val, abs=1e-12)
        assert m.truncation_gap == 0.0


def test_moment_triangular_d1():
    # 2 * int_0^1 (1-r) r^2 dr = 2 * (1/3 - 1/4) = 1/6
    m = kernel_moment(Kernel("triangular"), 1)
    assert m.sigma_eta == pytest.approx(1.0 / 6.0, abs=1e-10)


def test_moment_exp_square_d2_and_truncation():
    # pi * int_0^1 e^{-r^2} r^3 dr = pi/2 * (1 - 2/e)
    m = kernel_moment(Kernel("exp-square"), 2)
    closed = np.pi / 2.0 * (1.0 - 2.0 / np.e)
    assert m.sigma_eta == pytest.approx(closed, abs=1e-10)
    assert m.sigma_eta + m.truncation_gap == pytest.approx(np.pi / 2.0, abs=1e-10)


def test_moment_rejects_bad_dimension():
    with pytest.raises(ValueError):
        kernel_moment(Kernel("indicator"), 4)


def test_kernel_spec_round_trip():
    for profile in ("exp-square", "indicator", "triangular"):
        k = Kernel(profile)
        clone = Kernel(**k.spec())
        assert clone.profile == k.profile
