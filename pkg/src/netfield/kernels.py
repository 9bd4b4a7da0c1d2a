"""Edge-weight kernel profiles and their second-moment constants."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

_SPHERE_AREA = {1: 2.0, 2: 2.0 * np.pi, 3: 4.0 * np.pi}  # |S^{d-1}|

# exp-square edges below this weight are dropped during graph construction
WEIGHT_FLOOR = 1e-12


class Kernel:
    """Nonincreasing profile eta(t) for t >= 0.

    ``indicator`` and ``triangular`` vanish on [1, inf) as the theory
    assumes; ``exp-square`` does not, so graph builders truncate it at
    WEIGHT_FLOOR and the moment constant records the truncation mismatch.
    """

    def __init__(self, profile="exp-square"):
        if profile not in ("exp-square", "indicator", "triangular"):
            raise ValueError(f"unknown kernel profile {profile!r}")
        self.profile = profile

    def __repr__(self):
        return f"Kernel({self.profile!r})"

    def eta(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-15):
            raise ValueError("kernel argument must be >= 0")
        t = np.maximum(t, 0.0)
        if self.profile == "exp-square":
            return np.exp(-(t**2))
        if self.profile == "indicator":
            return (t < 1.0).astype(float)
        return np.maximum(1.0 - t, 0.0)

    def eta_inv(self, w):
        """Inverse on the range of eta restricted to its support."""
        w = np.asarray(w, dtype=float)
        if self.profile == "exp-square":
            if np.any(w <= 0) or np.any(w > 1):
                raise ValueError("exp-square inverse needs weights in (0, 1]")
            return np.sqrt(-np.log(w))
        if self.profile == "triangular":
            if np.any(w < 0) or np.any(w > 1):
                raise ValueError("triangular inverse needs weights in [0, 1]")
            return 1.0 - w
        raise ValueError("indicator kernel is not invertible")

    @property
    def invertible(self):
        return self.profile in ("exp-square", "triangular")

    def support_radius(self, weight_floor=WEIGHT_FLOOR):
        """Largest t with eta(t) above the floor (1.0 for compact profiles)."""
        if self.profile == "exp-square":
            return float(np.sqrt(-np.log(weight_floor)))
        return 1.0

    def spec(self):
        return {"profile": self.profile}


@dataclass(frozen=True)
class KernelMoment:
    """sigma_eta = integral over the unit ball of eta(|w|) * w_1^2.

    For exp-square the integral is taken over B_1 only (matching how the
    graph normalization is defined); ``truncation_gap`` is the mass the
    full-space integral would add.
    """

    sigma_eta: float
    d: int
    tol: float
    truncation_gap: float = 0.0


def kernel_moment(kernel: Kernel, d: int, tol=1e-9) -> KernelMoment:
    """Compute sigma_eta by reduction to a radial integral.

    integral_{B_1} eta(|w|) w_1^2 dw = (|S^{d-1}| / d) * integral_0^1 eta(r) r^{d+1} dr
    """
    if d not in (1, 2, 3):
        raise ValueError("d must be 1, 2, or 3")
    area = _SPHERE_AREA[d]
    if kernel.profile == "indicator":
        val = area / (d * (d + 2))
        return KernelMoment(sigma_eta=val, d=d, tol=tol)
    radial, err = integrate.quad(
        lambda r: kernel.eta(r) * r ** (d + 1), 0.0, 1.0, epsabs=tol * 1e-3, epsrel=tol * 1e-3
    )
    val = area / d * radial
    gap = 0.0
    if kernel.profile == "exp-square":
        # closed form over all of R^d: pi^{d/2} / 2
        full = np.pi ** (d / 2.0) / 2.0
        gap = full - val
    return KernelMoment(sigma_eta=float(val), d=d, tol=tol, truncation_gap=float(gap))
