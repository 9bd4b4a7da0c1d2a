"""Domains, point sampling, coordinate normalization, and boundary queries.

Three domain kinds cover everything downstream: axis-aligned boxes, balls,
and voxel masks (the stand-in for irregular anatomical regions).  All are
bounded subsets of R^d with d in {1, 2, 3}.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import NumericalError

_UNIT_BALL_VOLUME = {1: 2.0, 2: np.pi, 3: 4.0 * np.pi / 3.0}


def _pts2d(p):
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        return p[None, :], True
    return p, False


class Domain:
    """Bounded region with membership, sampling, and boundary distance."""

    kind = "abstract"
    d: int

    def contains(self, p):
        pts, single = _pts2d(p)
        mask = self._contains(pts)
        return bool(mask[0]) if single else mask

    def _contains(self, pts):
        raise NotImplementedError

    def bounding_box(self):
        """(lo, hi) corner arrays of an axis-aligned bounding box."""
        raise NotImplementedError

    def volume(self):
        raise NotImplementedError

    def diameter(self):
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))

    def distance_to_boundary(self, p):
        """Distance from interior points to the domain boundary (>= 0)."""
        pts, single = _pts2d(p)
        vals = self._dist_boundary(pts)
        return float(vals[0]) if single else vals

    def _dist_boundary(self, pts):
        raise NotImplementedError

    def sample_uniform(self, n, rng):
        """n points uniform on the domain (exact for box/ball, cell-level for masks)."""
        raise NotImplementedError

    def spec(self):
        raise NotImplementedError


class Box(Domain):
    kind = "box"

    def __init__(self, lo, hi):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if self.lo.shape != self.hi.shape or np.any(self.hi <= self.lo):
            raise ValueError("box needs lo < hi per axis")
        self.d = len(self.lo)
        if self.d not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2, or 3")

    def _contains(self, pts):
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    def volume(self):
        return float(np.prod(self.hi - self.lo))

    def _dist_boundary(self, pts):
        inside = np.minimum(pts - self.lo, self.hi - pts)
        return np.maximum(np.min(inside, axis=1), 0.0)

    def sample_uniform(self, n, rng):
        return self.lo + (self.hi - self.lo) * rng.random((n, self.d))

    def spec(self):
        return {"kind": self.kind, "lo": self.lo.tolist(), "hi": self.hi.tolist()}


class Ball(Domain):
    kind = "ball"

    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        self.d = len(self.center)
        if self.d not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2, or 3")

    def _contains(self, pts):
        return np.linalg.norm(pts - self.center, axis=1) <= self.radius

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def volume(self):
        return float(_UNIT_BALL_VOLUME[self.d] * self.radius**self.d)

    def diameter(self):
        return 2.0 * self.radius

    def _dist_boundary(self, pts):
        r = np.linalg.norm(pts - self.center, axis=1)
        return np.maximum(self.radius - r, 0.0)

    def sample_uniform(self, n, rng):
        # direction from isotropic normals, radius from the d-th root law
        v = rng.standard_normal((n, self.d))
        v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-300)
        r = self.radius * rng.random(n) ** (1.0 / self.d)
        return self.center + r[:, None] * v

    def spec(self):
        return {"kind": self.kind, "center": self.center.tolist(), "radius": self.radius}


class VoxelMask(Domain):
    """Union of grid cells where ``mask`` is true.

    Cell index i occupies the half-open box
    origin + [i*h, (i+1)*h) per axis; cell centers sit at
    origin + (i + 0.5) * h.  The mask must be a single face-connected
    component (flood-fill check).
    """

    kind = "voxel-mask"

    def __init__(self, mask, spacing, origin=None):
        self.mask = np.ascontiguousarray(np.asarray(mask).astype(bool))
        self.d = self.mask.ndim
        if self.d not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2, or 3")
        self.spacing = float(spacing)
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        self.origin = (
            np.zeros(self.d) if origin is None else np.atleast_1d(np.asarray(origin, dtype=float))
        )
        if not self.mask.any():
            raise ValueError("empty mask")
        structure = ndimage.generate_binary_structure(self.d, 1)  # faces only
        _, ncomp = ndimage.label(self.mask, structure=structure)
        if ncomp != 1:
            raise ValueError(f"mask has {ncomp} connected components, need exactly 1")
        # distance (in cells) from each active cell center to the nearest
        # inactive cell center; shifted by half a cell to approximate the
        # distance to the mask boundary surface
        edt = ndimage.distance_transform_edt(self.mask)
        self._bdist = np.maximum(edt - 0.5, 0.0) * self.spacing
        self._active = np.argwhere(self.mask)

    def _cell_index(self, pts):
        return np.floor((pts - self.origin) / self.spacing).astype(int)

    def _contains(self, pts):
        idx = self._cell_index(pts)
        ok = np.all((idx >= 0) & (idx < np.array(self.mask.shape)), axis=1)
        out = np.zeros(len(pts), dtype=bool)
        if np.any(ok):
            out[ok] = self.mask[tuple(idx[ok].T)]
        return out

    def bounding_box(self):
        lo = self.origin + self._active.min(axis=0) * self.spacing
        hi = self.origin + (self._active.max(axis=0) + 1) * self.spacing
        return lo, hi

    def volume(self):
        return float(self.mask.sum()) * self.spacing**self.d

    def _dist_boundary(self, pts):
        # cell-level approximation, O(h) accurate
        idx = self._cell_index(pts)
        ok = np.all((idx >= 0) & (idx < np.array(self.mask.shape)), axis=1)
        out = np.zeros(len(pts))
        if np.any(ok):
            iok = idx[ok]
            vals = self._bdist[tuple(iok.T)]
            vals = np.where(self.mask[tuple(iok.T)], vals, 0.0)
            out[ok] = vals
        return out

    def cell_centers(self):
        """Centers of all active cells, shape (n_active, d)."""
        return self.origin + (self._active + 0.5) * self.spacing

    def sample_uniform(self, n, rng):
        picks = rng.integers(0, len(self._active), size=n)
        jitter = rng.random((n, self.d))
        return self.origin + (self._active[picks] + jitter) * self.spacing

    def spec(self):
        return {
            "kind": self.kind,
            "shape": list(self.mask.shape),
            "spacing": self.spacing,
            "origin": self.origin.tolist(),
        }


def ball_mask(shape, spacing, center=None, radius=None, origin=None):
    """Convenience voxel mask: cells whose centers lie in a ball."""
    shape = tuple(shape)
    d = len(shape)
    origin = np.zeros(d) if origin is None else np.asarray(origin, dtype=float)
    if center is None:
        center = origin + np.array(shape) * spacing / 2.0
    if radius is None:
        radius = 0.45 * min(shape) * spacing
    grids = np.meshgrid(*[origin[i] + (np.arange(shape[i]) + 0.5) * spacing for i in range(d)],
                        indexing="ij")
    r2 = sum((grids[i] - center[i]) ** 2 for i in range(d))
    return VoxelMask(r2 <= radius**2, spacing, origin)


# ---------------------------------------------------------------------------
# voxel-mask file format
#
# ASCII header, then raw payload:
#   line 1: b"voxelmask 1\n"
#   line 2: b"shape <m1> [<m2> [<m3>]]\n"
#   line 3: b"spacing <h>\n"
#   line 4: b"origin <o1> [...]\n"
#   line 5: b"data\n"
#   then prod(shape) bytes, row-major (C order), each 0x00 or 0x01.
# Floats are written with repr (shortest round-trip decimal).

def write_voxel_mask(path, domain: VoxelMask):
    with open(path, "wb") as fh:
        fh.write(b"voxelmask 1\n")
        fh.write(("shape " + " ".join(str(m) for m in domain.mask.shape) + "\n").encode())
        fh.write(f"spacing {float(domain.spacing)!r}\n".encode())
        fh.write(("origin " + " ".join(repr(float(v)) for v in domain.origin) + "\n").encode())
        fh.write(b"data\n")
        fh.write(domain.mask.astype(np.uint8).tobytes(order="C"))


def read_voxel_mask(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)

    def line():
        return buf.readline().decode().strip()

    if line() != "voxelmask 1":
        raise ValueError("not a voxelmask file (bad magic)")
    fields = {}
    for _ in range(3):
        parts = line().split()
        fields[parts[0]] = parts[1:]
    if line() != "data":
        raise ValueError("malformed voxelmask header")
    shape = tuple(int(v) for v in fields["shape"])
    spacing = float(fields["spacing"][0])
    origin = np.array([float(v) for v in fields["origin"]])
    count = int(np.prod(shape))
    payload = buf.read(count)
    if len(payload) != count:
        raise ValueError("voxelmask payload truncated")
    mask = np.frombuffer(payload, dtype=np.uint8).reshape(shape).astype(bool)
    return VoxelMask(mask, spacing, origin)


_DOMAIN_KINDS = {
    "box": lambda s: Box(s["lo"], s["hi"]),
    "ball": lambda s: Ball(s["center"], s["radius"]),
}


def domain_from_spec(spec):
    kind = spec.get("kind")
    if kind == "voxel-mask":
        if "path" in spec:
            return read_voxel_mask(spec["path"])
        raise ValueError("voxel-mask domain spec needs a 'path' to a mask file")
    if kind == "ball-mask":
        return ball_mask(spec["shape"], spec["spacing"],
                         center=spec.get("center"), radius=spec.get("radius"),
                         origin=spec.get("origin"))
    if kind not in _DOMAIN_KINDS:
        raise ValueError(f"unknown domain kind {kind!r}")
    return _DOMAIN_KINDS[kind](spec)


# ---------------------------------------------------------------------------
# point clouds

@dataclass
class PointCloud:
    points: np.ndarray  # (n, d)
    density: np.ndarray | None = None  # rho at each point
    seed: int | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2:
            raise ValueError("points must be (n, d)")
        if len(self.points) < 2:
            raise ValueError("need at least 2 points")
        if self.density is not None:
            self.density = np.asarray(self.density, dtype=float)
            if self.density.shape != (len(self.points),):
                raise ValueError("density must have one value per point")

    @property
    def n(self):
        return len(self.points)

    @property
    def d(self):
        return self.points.shape[1]


@dataclass(frozen=True)
class NormalizationStats:
    """Per-axis standard-score transform: x -> (x - mu) / var.

    ``var`` holds the per-axis standard deviation.
    """

    mu: np.ndarray
    var: np.ndarray

    def apply(self, pts):
        return (np.asarray(pts, dtype=float) - self.mu) / self.var

    def invert(self, pts):
        return np.asarray(pts, dtype=float) * self.var + self.mu


def sample_points(domain, rho, n, seed, max_bound_doublings=30):
    """n i.i.d. points from density rho restricted to the domain.

    Rejection sampling against the uniform proposal.  The envelope constant
    starts from a sampled estimate of max(rho); if an evaluation exceeds it,
    the envelope is enlarged and sampling restarts from a re-seeded stream
    so results stay a deterministic function of ``seed``.  Aborts when the
    observed acceptance rate falls below 1e-4.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if rho is None:
        rng = np.random.default_rng(seed)
        pts = domain.sample_uniform(n, rng)
        return PointCloud(points=pts, density=np.ones(n), seed=seed)
    probe_rng = np.random.default_rng(seed)
    probe = domain.sample_uniform(4096, probe_rng)
    rho_vals = rho(probe)
    if np.any(rho_vals < 0):
        raise ValueError("rho must be nonnegative on the domain")
    bound = float(np.max(rho_vals)) * 1.2
    if bound <= 0:
        raise ValueError("rho vanishes on the whole probe sample")

    for _ in range(max_bound_doublings):
        rng = np.random.default_rng(seed)
        accepted = np.empty((0, domain.d))
        proposed = 0
        restart = False
        while len(accepted) < n:
            batch = max(2 * (n - len(accepted)), 256)
            cand = domain.sample_uniform(batch, rng)
            vals = rho(cand)
            if np.any(vals > bound):
                bound = max(float(np.max(vals)) * 1.2, bound * 1.5)
                restart = True
                break
            keep = rng.random(batch) * bound < vals
            accepted = np.vstack([accepted, cand[keep]])
            proposed += batch
            if proposed >= max(10_000, 50 * n) and len(accepted) / proposed < 1e-4:
                raise NumericalError(
                    f"rejection sampling acceptance rate {len(accepted) / proposed:.2e} "
                    "< 1e-4; density too concentrated for the uniform proposal"
                )
        if restart:
            continue
        pts = accepted[:n]
        return PointCloud(points=pts, density=np.asarray(rho(pts), dtype=float), seed=seed)
    raise NumericalError("rejection envelope failed to stabilize")


def normalize(cloud: PointCloud):
    """Standard-score normalization; returns (new cloud, stats)."""
    mu = cloud.points.mean(axis=0)
    sd = cloud.points.std(axis=0)
    if np.any(sd <= 1e-15):
        raise ValueError("degenerate cloud: zero variance along an axis")
    stats = NormalizationStats(mu=mu, var=sd)
    return PointCloud(points=stats.apply(cloud.points), density=cloud.density,
                      seed=cloud.seed), stats


def denormalize(cloud: PointCloud, stats: NormalizationStats):
    return PointCloud(points=stats.invert(cloud.points), density=cloud.density,
                      seed=cloud.seed)


def boundary_band(domain, width):
    """Predicate: x is within ``width`` of the domain boundary (and inside)."""
    if width <= 0:
        raise ValueError("band width must be positive")

    def predicate(p):
        pts, single = _pts2d(p)
        inside = domain._contains(pts)
        near = domain._dist_boundary(pts) < width
        out = inside & near
        return bool(out[0]) if single else out

    return predicate
