"""Continuum energies, kernel moments, and convergence-rate experiments.

The nonlocal energy

    I_eps[u] = (1/(sigma_eta eps^d)) iint eta(d_g(x,y)/eps) (u(x)-u(y))^2/eps^2
               rho(x) rho(y) dy dx

is the population counterpart of the discrete Dirichlet energy, and

    I[u] = int rho^2 |grad u|^2 / g^{d+2}

is its eps -> 0 limit.  Both gaps (discrete vs nonlocal across n, nonlocal
vs local across eps) are measured empirically here.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .fields import gradient_fd
from .geometry import Box, sample_points
from .graph import build_graph, dirichlet_energy, eps_scaling
from .kernels import WEIGHT_FLOOR, Kernel, KernelMoment, kernel_moment
from .metric import SegmentQuadrature, segment_weight_batch

_UNIT_BALL_VOLUME = {1: 2.0, 2: np.pi, 3: 4.0 * np.pi / 3.0}


def sigma_eta(kernel: Kernel, d: int, tol=1e-9) -> KernelMoment:
    """Second-moment normalization constant of the kernel profile."""
    return kernel_moment(kernel, d, tol)


# ---------------------------------------------------------------------------
# local energy

def _midpoint_grid(domain, n_per_axis):
    lo, hi = domain.bounding_box()
    axes = [lo[i] + (hi[i] - lo[i]) * (np.arange(n_per_axis) + 0.5) / n_per_axis
            for i in range(domain.d)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([a.ravel() for a in grids], axis=1)
    cell = float(np.prod((hi - lo) / n_per_axis))
    return pts, cell


def local_energy(domain, rho, g, u, tol=1e-6, start=None, max_doublings=8,
                 h_grad=1e-5):
    """int rho^2 |grad u|^2 / g^{d+2} by midpoint quadrature.

    The grid is refined (doubling per axis) until two successive values
    agree to ``tol`` relative.  Non-box domains use an indicator midpoint
    rule, whose boundary error decays only linearly, so convergence there
    is slower; a warning fires if the tolerance is not reached.
    """
    if start is None:
        start = {1: 256, 2: 64, 3: 16}[domain.d]
    prev = None
    n = start
    val = None
    for _ in range(max_doublings):
        pts, cell = _midpoint_grid(domain, n)
        if domain.kind != "box":
            keep = domain.contains(pts)
            pts = pts[keep]
        gvals = g(pts)
        if np.any(gvals <= 0):
            raise ValueError("g must be positive on the domain")
        grad, _ = gradient_fd(u, pts, h=h_grad, domain=domain)
        integrand = rho(pts) ** 2 * np.sum(grad**2, axis=1) / gvals ** (domain.d + 2)
        val = float(np.sum(integrand) * cell)
        if prev is not None and abs(val - prev) <= tol * max(abs(val), 1e-300):
            return val
        prev = val
        n *= 2
    warnings.warn(f"local_energy stopped before reaching tol={tol} (last change "
                  f"{abs(val - prev) / max(abs(val), 1e-300):.2e})")
    return val


# ---------------------------------------------------------------------------
# nonlocal energy: Monte Carlo and deterministic tensor-grid evaluators

def _field_min(f, domain, samples=2048, seed=0):
    rng = np.random.default_rng(seed)
    return float(np.min(f(domain.sample_uniform(samples, rng))))


def nonlocal_energy(domain, rho, g, u, eps, kernel, mc_pairs=20000, seed=0,
                    quad=None, g_lo=None, weight_floor=WEIGHT_FLOOR):
    """Monte Carlo estimate of I_eps[u]; returns (value, standard error).

    x is drawn uniformly on the domain and y uniformly on the Euclidean
    ball of radius eps * support / g_lo around x (the kernel's support
    under the metric lower bound), with points leaving the domain counted
    as zero.  d_g uses the straight-segment quadrature, appropriate for
    convex domains.  rho is assumed normalized (integral 1) when comparing
    against discrete energies.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if mc_pairs < 1000:
        raise ValueError("need mc_pairs >= 1000 for a usable standard error")
    quad = quad or SegmentQuadrature()
    if g_lo is None:
        g_lo = 0.95 * _field_min(g, domain)
    if g_lo <= 0:
        raise ValueError("g must be positive on the domain")
    d = domain.d
    R = eps * kernel.support_radius(weight_floor) / g_lo
    rng = np.random.default_rng(seed)
    X = domain.sample_uniform(mc_pairs, rng)
    v = rng.standard_normal((mc_pairs, d))
    v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-300)
    r = R * rng.random(mc_pairs) ** (1.0 / d)
    Y = X + r[:, None] * v
    inside = domain.contains(Y)

    samples = np.zeros(mc_pairs)
    if np.any(inside):
        Xi, Yi = X[inside], Y[inside]
        dg = segment_weight_batch(Xi, Yi, g, quad)
        w = kernel.eta(dg / eps)
        du = u(Xi) - u(Yi)
        samples[inside] = w * du * du / eps**2 * rho(Xi) * rho(Yi)

    sigma = kernel_moment(kernel, d).sigma_eta
    scale = domain.volume() * _UNIT_BALL_VOLUME[d] * R**d / (sigma * eps**d)
    value = scale * float(np.mean(samples))
    stderr = scale * float(np.std(samples, ddof=1)) / np.sqrt(mc_pairs)
    return value, stderr


def nonlocal_energy_grid(domain, rho, g, u, eps, kernel, nx=128, ns=32,
                         quad=None, g_lo=None, weight_floor=WEIGHT_FLOOR,
                         x_predicate=None):
    """Deterministic tensor-grid evaluation of I_eps[u] on box domains.

    After substituting y = x + eps*s the inner integral runs over the
    fixed ball |s| <= support/g_lo, so the quadrature grids decouple from
    eps.  Midpoint rule on both grids; cost O(nx^d * ns^d * N).

    ``x_predicate`` optionally restricts the outer integral (used for
    boundary-band exclusion studies).
    """
    if not isinstance(domain, Box):
        raise ValueError("tensor-grid evaluator requires a box domain")
    quad = quad or SegmentQuadrature()
    if g_lo is None:
        g_lo = 0.95 * _field_min(g, domain)
    if g_lo <= 0:
        raise ValueError("g must be positive on the domain")
    d = domain.d
    R = kernel.support_radius(weight_floor) / g_lo

    X, vx = _midpoint_grid(domain, nx)
    if x_predicate is not None:
        X = X[x_predicate(X)]
    s_axis = -R + 2 * R * (np.arange(ns) + 0.5) / ns
    s_grids = np.meshgrid(*([s_axis] * d), indexing="ij")
    S = np.stack([a.ravel() for a in s_grids], axis=1)
    S = S[np.linalg.norm(S, axis=1) <= R]
    vs = (2 * R / ns) ** d

    rho_x = rho(X)
    u_x = u(X)
    sigma = kernel_moment(kernel, d).sigma_eta
    total = 0.0
    for s in S:
        Y = X + eps * s
        inside = domain.contains(Y)
        if not np.any(inside):
            continue
        Xi, Yi = X[inside], Y[inside]
        dg = segment_weight_batch(Xi, Yi, g, quad)
        w = kernel.eta(dg / eps)
        du = u_x[inside] - u(Yi)
        total += float(np.sum(w * du * du / eps**2 * rho_x[inside] * rho(Yi))) * vx * vs
    return total / sigma


# ---------------------------------------------------------------------------
# rate experiments

@dataclass
class RateReport:
    """Sweep of an energy gap against a scale parameter, with a log-log fit."""

    sweep_name: str
    sweep_values: np.ndarray
    gaps: np.ndarray
    stderrs: np.ndarray
    slope: float
    intercept: float
    fit_residual: float
    extra: dict = field(default_factory=dict)


def fit_loglog(x, y, drop_largest=False):
    """Least-squares slope of log y against log x.

    Needs at least 4 points (after optionally dropping the largest-x one).
    Returns (slope, intercept, rms residual).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if drop_largest:
        keep = x < np.max(x)
        x, y = x[keep], y[keep]
    if len(x) < 4:
        raise ValueError("slope fit needs at least 4 sweep points")
    if np.any(y <= 0):
        raise ValueError("gaps must be positive for a log-log fit")
    lx, ly = np.log(x), np.log(y)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid**2)))


def rate_experiment_nonlocal_vs_local(domain, rho, g, u, eps_values, kernel,
                                      nx=2048, ns=512, quad=None,
                                      local_tol=1e-7, drop_largest=False):
    """|I_eps[u] - I[u]| across an eps sweep with deterministic quadrature."""
    eps_values = np.asarray(sorted(eps_values), dtype=float)
    if len(eps_values) < 5:
        raise ValueError("need at least 5 eps values")
    limit = local_energy(domain, rho, g, u, tol=local_tol)
    gaps = np.array([
        abs(nonlocal_energy_grid(domain, rho, g, u, e, kernel, nx=nx, ns=ns,
                                 quad=quad) - limit)
        for e in eps_values
    ])
    slope, intercept, resid = fit_loglog(eps_values, gaps, drop_largest=drop_largest)
    return RateReport(
        sweep_name="eps",
        sweep_values=eps_values,
        gaps=gaps,
        stderrs=np.zeros_like(gaps),
        slope=slope,
        intercept=intercept,
        fit_residual=resid,
        extra={"local_energy": limit},
    )


def rate_experiment_discrete_vs_nonlocal(domain, rho, g, u, n_values, n_seeds,
                                         kernel, C=1.0, rule="per-d-plus-2",
                                         quad=None, nx=128, ns=32,
                                         base_seed=0):
    """|E_n[u] - I_eps(n)[u]| medians across an n sweep, many seeds per n.

    Both energies share the segment metric and kernel, so the gap isolates
    sampling fluctuation (the concentration statement) rather than metric
    modelling error.  Reported gaps are per-n medians; quartiles ride along
    in ``extra``.
    """
    quad = quad or SegmentQuadrature()
    d = domain.d
    n_values = sorted(int(n) for n in n_values)
    g_lo = 0.95 * _field_min(g, domain)
    medians, q25, q75, eps_list, all_gaps = [], [], [], [], []
    for n in n_values:
        eps = eps_scaling(n, d, C=C, rule=rule)
        target = nonlocal_energy_grid(domain, rho, g, u, eps, kernel,
                                      nx=nx, ns=ns, quad=quad, g_lo=g_lo)
        gaps = []
        for k in range(n_seeds):
            cloud = sample_points(domain, rho, n, seed=base_seed + 1000 * len(eps_list) + k)
            graph = build_graph(cloud, eps, kernel, g=g, backend="segment",
                                domain=None, quad=quad, g_lo=g_lo)
            en = dirichlet_energy(graph, u(cloud.points))
            gaps.append(abs(en - target))
        gaps = np.array(gaps)
        medians.append(float(np.median(gaps)))
        q25.append(float(np.quantile(gaps, 0.25)))
        q75.append(float(np.quantile(gaps, 0.75)))
        eps_list.append(eps)
        all_gaps.append(gaps)
    n_arr = np.array(n_values, dtype=float)
    med = np.array(medians)
    slope, intercept, resid = fit_loglog(n_arr, med)
    return RateReport(
        sweep_name="n",
        sweep_values=n_arr,
        gaps=med,
        stderrs=(np.array(q75) - np.array(q25)) / 2.0,
        slope=slope,
        intercept=intercept,
        fit_residual=resid,
        extra={
            "eps_values": eps_list,
            "q25": q25,
            "q75": q75,
            "gap_samples": [g.tolist() for g in all_gaps],
        },
    )


def rate_experiment_straight_line(g, domain, x0, radii, h, bounds, B=0.0,
                                  include_diagonals=True):
    """Residual |d_g(x,y) - g(x)|x-y|| across a pair-distance sweep.

    One grid oracle solve per field (the varying g and the constant g(x0))
    serves every target; targets sit exactly on lattice nodes along the
    axis (and optionally diagonal) directions, so there is no snapping
    error.  The reported gap per radius is the mean corrected residual
    over directions, with the oracle's own bias removed by the constant-
    field subtraction.
    """
    from .metric import GridMetricOracle, check_straight_line_bound, constant_field_oracle

    oracle = GridMetricOracle(domain, g, h)
    src = oracle.node_index(np.asarray(x0, dtype=float))
    xs = oracle.node_position(src)
    dist_field = oracle.distances_from(xs)
    const_field = constant_field_oracle(oracle, g(xs)).distances_from(xs)

    dirs = []
    d = domain.d
    for ax in range(d):
        for s in (-1, 1):
            e = np.zeros(d, dtype=int)
            e[ax] = s
            dirs.append(e)
    if include_diagonals and d >= 2:
        from itertools import product as _prod
        for off in _prod((-1, 1), repeat=d):
            dirs.append(np.array(off, dtype=int))

    sweep_r, sweep_resid, reports = [], [], []
    for r in sorted(radii):
        vals, rvals = [], []
        for e in dirs:
            steps = int(np.round(r / (h * np.linalg.norm(e))))
            if steps < 1:
                continue
            idx = tuple(np.array(src) + steps * e)
            if any(not (0 <= idx[i] < oracle.shape[i]) for i in range(d)):
                continue
            if not oracle.inside[idx]:
                continue
            y = oracle.node_position(idx)
            rep = check_straight_line_bound(xs, y, g, oracle, bounds, B=B,
                                            dist_field=dist_field,
                                            const_field=const_field)
            vals.append(rep.corrected_residual)
            rvals.append(float(np.linalg.norm(y - xs)))
            reports.append(rep)
        if vals:
            sweep_r.append(float(np.mean(rvals)))
            sweep_resid.append(float(np.mean(vals)))
    sweep_r = np.array(sweep_r)
    sweep_resid = np.array(sweep_resid)
    slope, intercept, resid = fit_loglog(sweep_r, sweep_resid)
    return RateReport(
        sweep_name="pair-distance",
        sweep_values=sweep_r,
        gaps=sweep_resid,
        stderrs=np.zeros_like(sweep_resid),
        slope=slope,
        intercept=intercept,
        fit_residual=resid,
        extra={
            "within_envelope": all(r.within_envelope for r in reports),
            "n_pairs": len(reports),
        },
    )


# ---------------------------------------------------------------------------
# W^{1,1}-style limit check

def w11_limit_check(g, rho, domain, eps_values, bounds, nx=48, shells=8,
                    dirs_per_shell=None):
    """Convergence of int sup_{B_r(x)} |grad g| rho dx as r = 4 lam eps / g_lo -> 0.

    The sup is sampled on a fixed master ladder of absolute shell radii,
    each eps keeping the shells that fit inside its ball.  Nesting makes
    the sequence monotone by construction; the limit is the same grid's
    integral of |grad g(x)| rho(x).
    """
    eps_values = np.asarray(sorted(eps_values)[::-1], dtype=float)  # decreasing
    d = domain.d
    lam = bounds.lam
    r_of = 4.0 * lam * eps_values / bounds.lo
    r_max = r_of[0]

    if dirs_per_shell is None:
        dirs_per_shell = {1: 2, 2: 16, 3: 26}[d]
    if d == 1:
        dirs = np.array([[-1.0], [1.0]])
    elif d == 2:
        ang = 2 * np.pi * np.arange(dirs_per_shell) / dirs_per_shell
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        from itertools import product as _prod
        dirs = np.array([v for v in _prod((-1, 0, 1), repeat=3) if any(v)], dtype=float)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    shell_radii = r_max * (np.arange(1, shells + 1) / shells)

    pts, cell = _midpoint_grid(domain, nx)
    if domain.kind != "box":
        pts = pts[domain.contains(pts)]
    rho_vals = rho(pts)
    base_grad, _ = gradient_fd(g, pts, h=1e-5, domain=domain)
    base_norm = np.linalg.norm(base_grad, axis=1)
    limit = float(np.sum(base_norm * rho_vals) * cell)

    # |grad g| at every (point, shell, direction) offset that stays in domain
    sup_tables = np.tile(base_norm[:, None], (1, shells + 1))  # col 0: center
    for si, rr in enumerate(shell_radii):
        best = np.zeros(len(pts))
        for v in dirs:
            q = pts + rr * v
            ok = domain.contains(q)
            if not np.any(ok):
                continue
            gq, _ = gradient_fd(g, q[ok], h=1e-5, domain=domain)
            vals = np.zeros(len(pts))
            vals[ok] = np.linalg.norm(gq, axis=1)
            best = np.maximum(best, vals)
        sup_tables[:, si + 1] = best

    values = []
    for r in r_of:
        k = int(np.sum(shell_radii <= r + 1e-12))
        sup_vals = np.max(sup_tables[:, : k + 1], axis=1)
        values.append(float(np.sum(sup_vals * rho_vals) * cell))
    values = np.array(values)
    gaps = values - limit
    monotone = bool(np.all(np.diff(values) <= 1e-12))
    return {
        "eps_values": eps_values.tolist(),
        "values": values.tolist(),
        "limit": limit,
        "gaps": gaps.tolist(),
        "monotone_decreasing": monotone,
        "final_rel_gap": float(gaps[-1] / max(abs(limit), 1e-300)),
    }
