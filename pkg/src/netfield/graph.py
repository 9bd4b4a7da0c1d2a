"""Epsilon-graph construction, discrete Dirichlet energy, graph Laplacian."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud
from .kernels import WEIGHT_FLOOR, Kernel, kernel_moment
from .metric import (SegmentQuadrature, segment_weight_batch,
                     segments_in_domain_batch)


def eps_scaling(n, d, C=1.0, rule="per-d-plus-2"):
    """Neighborhood scale from the sample count.

    per-d:        C (log n / n)^{1/d}
    per-d-plus-2: C (log n / n)^{1/(d+2)}
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if C <= 0:
        raise ValueError("need C > 0")
    base = np.log(n) / n
    if rule == "per-d":
        return float(C * base ** (1.0 / d))
    if rule == "per-d-plus-2":
        return float(C * base ** (1.0 / (d + 2)))
    raise ValueError(f"unknown eps rule {rule!r}")


def candidate_pairs(points, radius):
    """All index pairs (i < j) with |x_i - x_j| <= radius.

    Uniform cell grid with cell size = radius; each point is compared against
    points in its own and neighboring cells only.
    """
    points = np.asarray(points, dtype=float)
    n, d = points.shape
    if radius <= 0:
        raise ValueError("radius must be positive")
    lo = points.min(axis=0)
    cells = np.floor((points - lo) / radius).astype(np.int64)
    buckets = {}
    for idx, key in enumerate(map(tuple, cells)):
        buckets.setdefault(key, []).append(idx)

    offsets = np.stack(np.meshgrid(*([[-1, 0, 1]] * d), indexing="ij"), axis=-1).reshape(-1, d)
    out_i, out_j = [], []
    for key, members in buckets.items():
        members_arr = np.array(members)
        neigh = []
        for off in offsets:
            other = tuple(np.array(key) + off)
            if other in buckets:
                neigh.extend(buckets[other])
        neigh = np.array(neigh)
        # i < j keeps each unordered pair once
        for i in members_arr:
            cand = neigh[neigh > i]
            if len(cand) == 0:
                continue
            dist = np.linalg.norm(points[cand] - points[i], axis=1)
            keep = cand[dist <= radius]
            out_i.extend([i] * len(keep))
            out_j.extend(keep.tolist())
    if not out_i:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    i = np.array(out_i, dtype=np.int64)
    j = np.array(out_j, dtype=np.int64)
    order = np.lexsort((j, i))
    return i[order], j[order]


@dataclass
class EpsGraph:
    """Weighted epsilon-graph over a point cloud.

    Edges are stored once with i < j; w_ij = eta(d_ij / eps).
    """

    cloud: PointCloud
    eps: float
    kernel: Kernel
    edge_i: np.ndarray
    edge_j: np.ndarray
    edge_dist: np.ndarray
    edge_weight: np.ndarray
    backend: str
    _sigma: float | None = field(default=None, repr=False)

    @property
    def n(self):
        return self.cloud.n

    @property
    def dim(self):
        return self.cloud.d

    @property
    def n_edges(self):
        return len(self.edge_i)

    def sigma_eta(self):
        if self._sigma is None:
            self._sigma = kernel_moment(self.kernel, self.dim).sigma_eta
        return self._sigma


def build_graph(cloud, eps, kernel, g=None, backend="euclidean", domain=None,
                quad=None, oracle=None, g_lo=None, weight_floor=WEIGHT_FLOOR,
                segment_checks=16):
    """Construct the epsilon-graph.

    backend "euclidean" takes d_ij = |x_i - x_j| (g is ignored); "segment"
    integrates g along straight segments (pairs whose segment leaves the
    domain are discarded when a nonconvex domain is given); "grid-oracle"
    queries a GridMetricOracle for shortest-path distances.

    g_lo bounds g from below and sets the Euclidean candidate radius
    eps * support / g_lo.  If omitted it is taken as the minimum of g over
    the cloud (adequate for smooth fields at experiment scale).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    pts = cloud.points
    if backend == "euclidean":
        g_lo = 1.0 if g_lo is None else float(g_lo)
    else:
        if g is None:
            raise ValueError(f"backend {backend!r} needs the connectivity field g")
        if g_lo is None:
            g_lo = float(np.min(g(pts)))
        if g_lo <= 0:
            raise ValueError("connectivity field must be positive (g_lo > 0)")
    radius = eps * kernel.support_radius(weight_floor) / g_lo

    i, j = candidate_pairs(pts, radius)
    xi, xj = pts[i], pts[j]

    if backend == "euclidean":
        dist = np.linalg.norm(xj - xi, axis=1)
    elif backend == "segment":
        quad = quad or SegmentQuadrature()
        if domain is not None:
            ok = segments_in_domain_batch(xi, xj, domain, checks=segment_checks)
            i, j, xi, xj = i[ok], j[ok], xi[ok], xj[ok]
        dist = segment_weight_batch(xi, xj, g, quad)
    elif backend == "grid-oracle":
        if oracle is None:
            raise ValueError("grid-oracle backend needs an oracle instance")
        dist = np.empty(len(i))
        for src in np.unique(i):
            sel = i == src
            fieldvals = oracle.distances_from(pts[src])
            for k in np.where(sel)[0]:
                dist[k] = fieldvals[oracle.node_index(pts[j[k]])]
        if np.any(~np.isfinite(dist)):
            raise ValueError("grid oracle found unreachable pairs")
    else:
        raise ValueError(f"unknown metric backend {backend!r}")

    w = kernel.eta(dist / eps)
    keep = w > weight_floor
    return EpsGraph(
        cloud=cloud,
        eps=float(eps),
        kernel=kernel,
        edge_i=i[keep],
        edge_j=j[keep],
        edge_dist=dist[keep],
        edge_weight=w[keep],
        backend=backend,
    )


def dirichlet_energy(graph: EpsGraph, u):
    """(1/(sigma_eta n^2 eps^{d+2})) sum_{i,j} w_ij (u_i - u_j)^2.

    The double sum counts each unordered edge twice.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (graph.n,):
        raise ValueError("u must have one value per node")
    diff = u[graph.edge_i] - u[graph.edge_j]
    total = 2.0 * float(np.sum(graph.edge_weight * diff * diff))
    norm = graph.sigma_eta() * graph.n**2 * graph.eps ** (graph.dim + 2)
    return total / norm


def graph_laplacian_apply(graph: EpsGraph, u):
    """(L u)(x_i) = (2/(sigma_eta n eps^{d+2})) sum_j w_ij (u_i - u_j)."""
    u = np.asarray(u, dtype=float)
    if u.shape != (graph.n,):
        raise ValueError("u must have one value per node")
    diff = u[graph.edge_i] - u[graph.edge_j]
    out = np.zeros(graph.n)
    np.add.at(out, graph.edge_i, graph.edge_weight * diff)
    np.add.at(out, graph.edge_j, -graph.edge_weight * diff)
    norm = graph.sigma_eta() * graph.n * graph.eps ** (graph.dim + 2)
    return 2.0 * out / norm


def write_edge_list(path, graph: EpsGraph):
    """Text export: header lines then one `i j d_ij w_ij` row per edge."""
    with open(path, "w") as fh:
        fh.write(f"# n {graph.n}\n")
        fh.write(f"# d {graph.dim}\n")
        fh.write(f"# eps {graph.eps!r}\n")
        fh.write(f"# kernel {graph.kernel.profile}\n")
        fh.write(f"# backend {graph.backend}\n")
        fh.write("# i j d_ij w_ij\n")
        for i, j, dist, w in zip(graph.edge_i, graph.edge_j, graph.edge_dist,
                                 graph.edge_weight):
            fh.write(f"{i} {j} {float(dist)!r} {float(w)!r}\n")
    return path


def read_edge_list(path):
    """Parse an exported edge list; returns (header dict, i, j, d_ij, w_ij)."""
    header = {}
    i, j, dist, w = [], [], [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2:
                    header[parts[0]] = parts[1]
                continue
            a, b, dd, ww = line.split()
            i.append(int(a))
            j.append(int(b))
            dist.append(float(dd))
            w.append(float(ww))
    return header, np.array(i), np.array(j), np.array(dist), np.array(w)
