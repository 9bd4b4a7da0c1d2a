"""Scalar fields over a spatial domain.

Fields are immutable callables mapping point arrays of shape ``(n, d)``
(or a single point of shape ``(d,)``) to values.  They play four roles in
the pipeline: connectivity density ``g``, sampling density ``rho``, test
functions ``u``, and learned approximations of ``g``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_points(p):
    """Coerce to an (n, d) array, remembering whether input was a single point."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        return p[None, :], True
    if p.ndim != 2:
        raise ValueError(f"points must have shape (d,) or (n, d), got {p.shape}")
    return p, False


class ScalarField:
    """Base class for scalar fields.  Subclasses implement ``_values``."""

    kind = "abstract"

    def _values(self, pts):
        raise NotImplementedError

    def __call__(self, p):
        pts, single = _as_points(p)
        vals = self._values(pts)
        return float(vals[0]) if single else vals

    def spec(self):
        """Serializable description: kind tag plus parameter map."""
        raise NotImplementedError


class ConstantField(ScalarField):
    kind = "constant"

    def __init__(self, value):
        self.value = float(value)

    def _values(self, pts):
        return np.full(len(pts), self.value)

    def spec(self):
        return {"kind": self.kind, "value": self.value}


class SigmoidRadialField(ScalarField):
    """Logistic profile of the radius: sigma(-a * (|p| - b)) + c.

    Bounded in (c, 1 + c); positive whenever c > 0, so it is admissible as
    a connectivity density.
    """

    kind = "sigmoid-radial"

    def __init__(self, a=4.0, b=1.0, c=0.5):
        if a <= 0:
            raise ValueError("sharpness a must be positive")
        if c <= 0:
            raise ValueError("offset c must be positive")
        self.a, self.b, self.c = float(a), float(b), float(c)

    def _values(self, pts):
        r = np.linalg.norm(pts, axis=1)
        t = -self.a * (r - self.b)
        # numerically stable logistic
        out = np.empty_like(t)
        pos = t >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
        e = np.exp(t[~pos])
        out[~pos] = e / (1.0 + e)
        return out + self.c

    def spec(self):
        return {"kind": self.kind, "a": self.a, "b": self.b, "c": self.c}


class CosineRadialField(ScalarField):
    """Radial cosine wave: A * cos(pi - a * (|p| - b)) + c.

    Requires c - A > 0 so the field stays strictly positive.
    """

    kind = "cosine-radial"

    def __init__(self, A=0.3, a=2.0, b=1.0, c=0.5):
        if A <= 0 or a <= 0:
            raise ValueError("amplitude A and frequency a must be positive")
        if c - A <= 0:
            raise ValueError("need c - A > 0 for a positive field")
        self.A, self.a, self.b, self.c = float(A), float(a), float(b), float(c)

    def _values(self, pts):
        r = np.linalg.norm(pts, axis=1)
        return self.A * np.cos(np.pi - self.a * (r - self.b)) + self.c

    def spec(self):
        return {"kind": self.kind, "A": self.A, "a": self.a, "b": self.b, "c": self.c}


class LinearField(ScalarField):
    """Affine field coeffs . p + offset (test functions, exact-gradient cases)."""

    kind = "linear"

    def __init__(self, coeffs, offset=0.0):
        self.coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
        self.offset = float(offset)

    def _values(self, pts):
        return pts @ self.coeffs + self.offset

    def spec(self):
        return {"kind": self.kind, "coeffs": self.coeffs.tolist(), "offset": self.offset}


class SinusoidField(ScalarField):
    """amp * sin(freq . p + phase); the standing smooth test function."""

    kind = "sinusoid"

    def __init__(self, freq, phase=0.0, amp=1.0):
        self.freq = np.atleast_1d(np.asarray(freq, dtype=float))
        self.phase = float(phase)
        self.amp = float(amp)

    def _values(self, pts):
        return self.amp * np.sin(pts @ self.freq + self.phase)

    def spec(self):
        return {"kind": self.kind, "freq": self.freq.tolist(), "phase": self.phase,
                "amp": self.amp}


class GridField(ScalarField):
    """Field sampled on a regular grid, evaluated by linear interpolation.

    ``values`` has shape (m1, ..., md); node k of axis i sits at
    ``origin[i] + k * spacing``.  Queries outside the grid clamp to the
    nearest node value.
    """

    kind = "grid-sampled"

    def __init__(self, values, spacing, origin):
        from scipy.interpolate import RegularGridInterpolator

        self.values = np.asarray(values, dtype=float)
        self.spacing = float(spacing)
        self.origin = np.asarray(origin, dtype=float)
        axes = [
            self.origin[i] + self.spacing * np.arange(self.values.shape[i])
            for i in range(self.values.ndim)
        ]
        self._interp = RegularGridInterpolator(
            axes, self.values, method="linear", bounds_error=False, fill_value=None
        )
        self._lo = np.array([a[0] for a in axes])
        self._hi = np.array([a[-1] for a in axes])

    def _values(self, pts):
        clamped = np.clip(pts, self._lo, self._hi)
        return self._interp(clamped)

    def spec(self):
        return {
            "kind": self.kind,
            "shape": list(self.values.shape),
            "spacing": self.spacing,
            "origin": self.origin.tolist(),
        }


class FuncField(ScalarField):
    """Wrap an arbitrary vectorized function as a field (tests, ad-hoc use)."""

    kind = "function"

    def __init__(self, fn, name="function"):
        self._fn = fn
        self.name = name

    def _values(self, pts):
        return np.asarray(self._fn(pts), dtype=float).reshape(len(pts))

    def spec(self):
        raise TypeError("function-backed fields are not serializable")


_FIELD_KINDS = {
    "constant": lambda s: ConstantField(s["value"]),
    "sigmoid-radial": lambda s: SigmoidRadialField(s["a"], s["b"], s["c"]),
    "cosine-radial": lambda s: CosineRadialField(s["A"], s["a"], s["b"], s["c"]),
    "linear": lambda s: LinearField(s["coeffs"], s.get("offset", 0.0)),
    "sinusoid": lambda s: SinusoidField(s["freq"], s.get("phase", 0.0), s.get("amp", 1.0)),
}


def field_from_spec(spec):
    """Build a field from its kind tag + parameter map."""
    kind = spec.get("kind")
    if kind not in _FIELD_KINDS:
        raise ValueError(f"unknown field kind {kind!r}")
    return _FIELD_KINDS[kind](spec)


@dataclass(frozen=True)
class FieldBounds:
    """Sampled estimates of a field's range and smoothness.

    For a connectivity field the relevant entries are ``lo``/``hi``
    (inner approximations of inf/sup), ``lam = hi/lo + 1``, and ``lip``;
    for a test function, ``lip`` and the second-difference estimate
    ``c11``.  Estimates are taken over finite samples, so ``lo`` and
    ``lip`` are conservative from the experiment-gating point of view
    (lo >= true inf, lip <= true Lipschitz constant).
    """

    lo: float
    hi: float
    lam: float
    lip: float
    c11: float

    def require_positive(self):
        if self.lo <= 0:
            raise ValueError(
                f"field violates the positivity gate: sampled infimum {self.lo:.3e} <= 0"
            )
        return self


def gradient_fd(f, p, h=1e-5, domain=None):
    """Central-difference gradient of ``f`` at point(s) ``p``.

    Returns ``(grad, fallback)`` where ``fallback`` marks entries that had
    to use a one-sided stencil because ``p +/- h e_k`` left ``domain``.
    ``grad`` has shape (n, d) for (n, d) input, (d,) for a single point.
    """
    pts, single = _as_points(p)
    n, d = pts.shape
    grad = np.empty((n, d))
    fallback = np.zeros((n, d), dtype=bool)
    for k in range(d):
        step = np.zeros(d)
        step[k] = h
        plus = pts + step
        minus = pts - step
        if domain is not None:
            ok_p = domain.contains(plus)
            ok_m = domain.contains(minus)
        else:
            ok_p = np.ones(n, dtype=bool)
            ok_m = np.ones(n, dtype=bool)
        fp, fm, f0 = f(plus), f(minus), None
        central = ok_p & ok_m
        gk = np.empty(n)
        gk[central] = (fp[central] - fm[central]) / (2 * h)
        onesided = ~central
        if np.any(onesided):
            f0 = f(pts)
            fwd = onesided & ok_p
            bwd = onesided & ok_m & ~ok_p
            gk[fwd] = (fp[fwd] - f0[fwd]) / h
            gk[bwd] = (f0[bwd] - fm[bwd]) / h
            dead = onesided & ~ok_p & ~ok_m
            if np.any(dead):
                raise ValueError("both one-sided stencils leave the domain")
            fallback[onesided, k] = True
        grad[:, k] = gk
    if single:
        return grad[0], fallback[0]
    return grad, fallback


def estimate_bounds(f, domain, samples=4096, seed=0, pair_radius_frac=0.1):
    """Estimate range and smoothness of ``f`` by dense sampling of ``domain``.

    Range comes from point evaluations; the Lipschitz estimate is the max
    pairwise slope over sampled pairs separated by at most
    ``pair_radius_frac * diam``; ``c11`` is the max symmetric
    second-difference quotient along random directions.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    pts = domain.sample_uniform(samples, rng)
    vals = f(pts)
    lo, hi = float(np.min(vals)), float(np.max(vals))

    diam = domain.diameter()
    radius = pair_radius_frac * diam
    # partner points: random offsets within the pairing radius, kept in-domain
    offs = rng.standard_normal(pts.shape)
    offs /= np.linalg.norm(offs, axis=1, keepdims=True)
    offs *= radius * rng.random(len(pts))[:, None] ** (1.0 / domain.d)
    partners = pts + offs
    keep = domain.contains(partners)
    lip = 0.0
    if np.any(keep):
        a, b = pts[keep], partners[keep]
        dist = np.linalg.norm(a - b, axis=1)
        ok = dist > 1e-12
        slopes = np.abs(f(a[ok]) - f(b[ok])) / dist[ok]
        if slopes.size:
            lip = float(np.max(slopes))

    # second differences along the same offsets, where the full stencil fits
    hstep = 1e-3 * diam
    unit = offs / np.maximum(np.linalg.norm(offs, axis=1, keepdims=True), 1e-300)
    pp, mm = pts + hstep * unit, pts - hstep * unit
    keep2 = domain.contains(pp) & domain.contains(mm)
    c11 = 0.0
    if np.any(keep2):
        second = np.abs(f(pp[keep2]) + f(mm[keep2]) - 2 * vals[keep2]) / hstep**2
        if second.size:
            c11 = float(np.max(second))

    lam = hi / lo + 1.0 if lo > 0 else float("inf")
    return FieldBounds(lo=lo, hi=hi, lam=lam, lip=lip, c11=c11)
