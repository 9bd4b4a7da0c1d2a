"""Recovery of the connectivity field from synthetic edge weights.

Given a point cloud and pairwise weights w_ij = eta(t_ij), where t_ij is
the straight-segment integral of the ground-truth field, a small MLP
g_theta is fit by minimizing the mean squared mismatch between its own
segment quadrature and eta^{-1}(w_ij).  Gradients are hand-derived for the
fixed [d, 8, 8, 1] architecture and checked against finite differences in
the tests.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .fields import ScalarField
from .graph import candidate_pairs
from .kernels import Kernel
from .metric import SegmentQuadrature, segment_weight_batch, segments_in_domain_batch


def _sigmoid(z, out=None):
    # logistic via tanh: numpy's tanh is SIMD-vectorized, the scipy ufunc
    # is several times slower on the blocks the training loop pushes through
    out = np.multiply(z, 0.5, out=out)
    np.tanh(out, out=out)
    out += 1.0
    out *= 0.5
    return out


def _silu(z):
    return z * _sigmoid(z)


def _silu_prime(z):
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def _softplus(z):
    return np.logaddexp(0.0, z)


class MlpField(ScalarField):
    """[d, 8, 8, 1] perceptron with SiLU hidden and Softplus output.

    The Softplus range makes the output strictly positive for every
    parameter value, so the learned field always passes the positivity
    gate.  Parameters live in a flat vector (property ``params``) ordered
    W1, b1, W2, b2, W3, b3, row-major.
    """

    kind = "learned"

    def __init__(self, d, hidden=8, seed=0):
        self.d = int(d)
        self.hidden = int(hidden)
        rng = np.random.default_rng(seed)

        def init(fan_in, shape):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        h = self.hidden
        self.W1 = init(d, (h, d))
        self.b1 = init(d, (h,))
        self.W2 = init(h, (h, h))
        self.b2 = init(h, (h,))
        self.W3 = init(h, (1, h))
        self.b3 = init(h, (1,))

    @property
    def widths(self):
        return [self.d, self.hidden, self.hidden, 1]

    @property
    def params(self):
        return np.concatenate([a.ravel() for a in
                               (self.W1, self.b1, self.W2, self.b2, self.W3, self.b3)])

    @params.setter
    def params(self, vec):
        vec = np.asarray(vec, dtype=float)
        offset = 0
        for a in (self.W1, self.b1, self.W2, self.b2, self.W3, self.b3):
            a.flat[:] = vec[offset:offset + a.size]
            offset += a.size
        if offset != len(vec):
            raise ValueError("parameter vector length mismatch")

    @property
    def n_params(self):
        return self.W1.size + self.b1.size + self.W2.size + self.b2.size + \
            self.W3.size + self.b3.size

    def _forward(self, X, cache=False):
        # sigmoids are kept for backprop: silu(z) = z*sig, silu' = sig*(1+z*(1-sig))
        z1 = X @ self.W1.T + self.b1
        sig1 = _sigmoid(z1)
        a1 = z1 * sig1
        z2 = a1 @ self.W2.T + self.b2
        sig2 = _sigmoid(z2)
        a2 = z2 * sig2
        z3 = a2 @ self.W3.T + self.b3
        out = _softplus(z3[:, 0])
        if cache:
            return out, (X, z1, sig1, a1, z2, sig2, a2, z3)
        return out

    def _values(self, pts):
        return self._forward(pts)

    def backprop(self, cache, s):
        """Parameter gradient given d(loss)/d(output) weights s, one per row."""
        X, z1, sig1, a1, z2, sig2, a2, z3 = cache
        dz3 = (s * _sigmoid(z3[:, 0]))[:, None]
        gW3 = dz3.T @ a2
        gb3 = dz3.sum(axis=0)
        da2 = dz3 @ self.W3
        dz2 = da2 * (sig2 * (1.0 + z2 * (1.0 - sig2)))
        gW2 = dz2.T @ a1
        gb2 = dz2.sum(axis=0)
        da1 = dz2 @ self.W2
        dz1 = da1 * (sig1 * (1.0 + z1 * (1.0 - sig1)))
        gW1 = dz1.T @ X
        gb1 = dz1.sum(axis=0)
        return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2, gW3.ravel(), gb3])

    def spec(self):
        return {"kind": self.kind, "widths": self.widths}


def mlp_forward(model: MlpField, p):
    """Evaluate the network at a point (or batch); strictly positive."""
    return model(p)


@dataclass
class PairDataset:
    """Admissible pairs with synthesized weights and inverted targets."""

    i: np.ndarray
    j: np.ndarray
    xi: np.ndarray
    xj: np.ndarray
    w: np.ndarray
    target: np.ndarray  # eta^{-1}(w)
    eps: float
    quad: SegmentQuadrature
    kernel_profile: str

    @property
    def size(self):
        return len(self.w)

    @property
    def d(self):
        return self.xi.shape[1]

    def subset(self, idx):
        return PairDataset(self.i[idx], self.j[idx], self.xi[idx], self.xj[idx],
                           self.w[idx], self.target[idx], self.eps, self.quad,
                           self.kernel_profile)


def synthesize_weights(cloud, g_true, eps, kernel: Kernel, quad=None,
                       domain=None, checks=16):
    """Build the training set: all pairs with |x_i - x_j| < eps.

    t_ij is the segment quadrature of g_true (no eps inside the kernel
    argument), w_ij = eta(t_ij), and the stored target is eta^{-1}(w_ij).
    Pairs whose segment leaves a (nonconvex) domain are discarded.
    """
    if not kernel.invertible:
        raise ValueError(f"kernel {kernel.profile!r} has no inverse; "
                         "cannot synthesize invertible targets")
    quad = quad or SegmentQuadrature()
    pts = cloud.points
    i, j = candidate_pairs(pts, eps)
    strict = np.linalg.norm(pts[j] - pts[i], axis=1) < eps
    i, j = i[strict], j[strict]
    xi, xj = pts[i], pts[j]
    if domain is not None:
        ok = segments_in_domain_batch(xi, xj, domain, checks=checks)
        i, j, xi, xj = i[ok], j[ok], xi[ok], xj[ok]
    if len(i) == 0:
        raise ValueError("no admissible pairs at this eps")
    t = segment_weight_batch(xi, xj, g_true, quad)
    w = kernel.eta(t)
    if np.any(w <= 0):
        raise ValueError("a synthesized weight underflowed the kernel's "
                         "invertible range")
    target = kernel.eta_inv(w)
    if not np.all(np.isfinite(target)):
        raise ValueError("non-finite inverted target")
    return PairDataset(i=i, j=j, xi=xi, xj=xj, w=w, target=target, eps=float(eps),
                       quad=quad, kernel_profile=kernel.profile)


class _TrainingCache:
    """Precomputed quadrature geometry plus reusable work buffers.

    The training loop calls loss_and_grad tens of thousands of times on the
    same node set, so every (points x hidden) intermediate is allocated once
    and overwritten in place.
    """

    def __init__(self, dataset: PairDataset):
        quad = dataset.quad
        m, d = dataset.xi.shape
        t = np.arange(quad.N + 1) / quad.N
        nodes = dataset.xi[:, None, :] + t[None, :, None] * (dataset.xj - dataset.xi)[:, None, :]
        self.points = np.ascontiguousarray(nodes.reshape(-1, d))
        self.coeff = quad.coefficients()
        self.dist = np.linalg.norm(dataset.xj - dataset.xi, axis=1)
        self.target = dataset.target
        self.m = m
        self.nodes_per_pair = quad.N + 1
        self._buf = None

    def _buffers(self, h):
        if self._buf is None or self._buf[0].shape[1] != h:
            P = len(self.points)
            self._buf = (tuple(np.empty((P, h)) for _ in range(7))
                         + (np.empty((P, 1)), np.empty(P)))
        return self._buf

    def loss_and_grad(self, model: MlpField, want_grad=True):
        z1, sig1, a1, z2, sig2, a2, w, zcol, out = self._buffers(model.hidden)
        X = self.points
        np.matmul(X, model.W1.T, out=z1)
        z1 += model.b1
        _sigmoid(z1, out=sig1)
        np.multiply(z1, sig1, out=a1)
        np.matmul(a1, model.W2.T, out=z2)
        z2 += model.b2
        _sigmoid(z2, out=sig2)
        np.multiply(z2, sig2, out=a2)
        np.matmul(a2, model.W3.T, out=zcol)
        zcol += model.b3
        z3 = zcol[:, 0]
        # softplus(z3) = max(z3, 0) + log1p(exp(-|z3|)), stable on both tails
        np.abs(z3, out=out)
        np.negative(out, out=out)
        np.exp(out, out=out)
        np.log1p(out, out=out)
        out += np.maximum(z3, 0.0)

        G = out.reshape(self.m, self.nodes_per_pair)
        q = G @ self.coeff
        q *= self.dist
        resid = q
        resid -= self.target
        loss = float(resid @ resid) / self.m
        if not want_grad:
            return loss, None

        # d(loss)/d(out_pk) = (2/m) resid_p dist_p coeff_k, chained through
        # softplus' = sigmoid; dz3 reuses the out buffer
        sw = (2.0 / self.m) * resid
        sw *= self.dist
        _sigmoid(z3, out=out)
        dz3 = out.reshape(self.m, self.nodes_per_pair)
        dz3 *= sw[:, None]
        dz3 *= self.coeff[None, :]
        dz3 = out.reshape(-1, 1)
        gW3 = dz3.T @ a2
        gb3 = dz3.sum(axis=0)
        da2 = np.matmul(dz3, model.W3, out=w)
        # silu'(z) = sig*(1 + z*(1-sig)); a2 is free once gW3 is done
        dz2 = a2
        np.subtract(1.0, sig2, out=dz2)
        dz2 *= z2
        dz2 += 1.0
        dz2 *= sig2
        dz2 *= da2
        gW2 = dz2.T @ a1
        gb2 = dz2.sum(axis=0)
        da1 = np.matmul(dz2, model.W2, out=w)
        dz1 = a1
        np.subtract(1.0, sig1, out=dz1)
        dz1 *= z1
        dz1 += 1.0
        dz1 *= sig1
        dz1 *= da1
        gW1 = dz1.T @ X
        gb1 = dz1.sum(axis=0)
        return loss, np.concatenate(
            [gW1.ravel(), gb1, gW2.ravel(), gb2, gW3.ravel(), gb3])


def loss(model, dataset: PairDataset):
    """Mean squared mismatch between model quadrature and eta^{-1}(w).

    ``model`` may be any scalar field, not just an MlpField; substituting the
    ground truth must yield exactly zero when the dataset was synthesized
    with the same quadrature.
    """
    if dataset.size == 0:
        raise ValueError("empty dataset")
    if isinstance(model, MlpField):
        val, _ = _TrainingCache(dataset).loss_and_grad(model, want_grad=False)
        return val
    t = segment_weight_batch(dataset.xi, dataset.xj, model, dataset.quad)
    return float(np.mean((t - dataset.target) ** 2))


def loss_gradient(model: MlpField, dataset: PairDataset):
    """(loss, flat parameter gradient) for external gradient checks."""
    return _TrainingCache(dataset).loss_and_grad(model)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_iters: int = 200_000
    loss_threshold: float = 1e-7
    plateau_patience: int = 5_000
    plateau_tol: float = 1e-9
    seed: int = 0
    k_folds: int = 5
    n_quad: int | None = None  # None: use the dataset's quadrature

    def __post_init__(self):
        if self.loss_threshold <= 0:
            raise ValueError("loss threshold must be positive")
        if self.k_folds < 2:
            raise ValueError("need k >= 2 folds")


@dataclass
class TrainResult:
    model: MlpField
    trace: np.ndarray
    stop_reason: str
    n_iters: int
    best_loss: float


def train(model: MlpField, dataset: PairDataset, config: TrainConfig):
    """Full-batch adaptive-moment descent; returns the best-loss parameters.

    Stops at the loss threshold, on a plateau (no improvement beyond
    plateau_tol for plateau_patience iterations), or at the iteration cap.
    Deterministic given the model's initial parameters and the dataset.
    """
    if dataset.size == 0:
        raise ValueError("empty dataset")
    cache = _TrainingCache(dataset)
    if config.n_quad is not None and config.n_quad != dataset.quad.N:
        cache = _TrainingCache(PairDataset(
            dataset.i, dataset.j, dataset.xi, dataset.xj, dataset.w,
            dataset.target, dataset.eps,
            SegmentQuadrature(N=config.n_quad, rule=dataset.quad.rule),
            dataset.kernel_profile))

    theta = model.params
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    trace = np.empty(config.max_iters)
    best_loss = np.inf
    best_theta = theta.copy()
    # plateau detection is windowed: slow smooth descent improves the best by
    # less than plateau_tol per step yet far more than that per window, so a
    # per-step test would abort runs that are still making real progress
    window_ref = np.inf
    window_start = 0
    stop = "max_iters"
    it = 0
    for it in range(config.max_iters):
        model.params = theta
        val, grad = cache.loss_and_grad(model)
        trace[it] = val
        if not np.isfinite(val):
            err = NumericalError(f"training diverged at iteration {it}")
            err.trace = trace[: it + 1]
            raise err
        if val < best_loss:
            best_loss = val
            best_theta = theta.copy()
        if val <= config.loss_threshold:
            stop = "threshold"
            break
        if it - window_start >= config.plateau_patience:
            if window_ref - best_loss < config.plateau_tol:
                stop = "plateau"
                break
            window_ref = best_loss
            window_start = it
        m1 = config.beta1 * m1 + (1 - config.beta1) * grad
        m2 = config.beta2 * m2 + (1 - config.beta2) * grad**2
        bc1 = 1 - config.beta1 ** (it + 1)
        bc2 = 1 - config.beta2 ** (it + 1)
        theta = theta - config.lr * (m1 / bc1) / (np.sqrt(m2 / bc2) + config.adam_eps)
    model.params = best_theta
    return TrainResult(model=model, trace=trace[: it + 1], stop_reason=stop,
                       n_iters=it + 1, best_loss=best_loss)


@dataclass
class RecoveryMetrics:
    mae: float
    rmse: float
    rmae: float
    rrmse: float
    final_train_loss: float = np.nan
    val_loss: float = np.nan


def evaluate_recovery(model, g_true, test_points, d_exponent=None):
    """Field errors at test points; relative errors on D = 1/g^{d+2}."""
    pts = np.asarray(test_points, dtype=float)
    if d_exponent is None:
        d_exponent = pts.shape[1] + 2
    gt = np.asarray(g_true(pts), dtype=float)
    if np.any(gt <= 0):
        raise ValueError("ground truth must be positive at test points")
    gm = np.asarray(model(pts), dtype=float)
    err = gm - gt
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))
    Dt = 1.0 / gt**d_exponent
    Dm = 1.0 / gm**d_exponent
    rel = (Dm - Dt) / Dt
    rmae = float(np.mean(np.abs(rel)))
    rrmse = float(np.sqrt(np.mean(rel**2)))
    return RecoveryMetrics(mae=mae, rmse=rmse, rmae=rmae, rrmse=rrmse)


def aggregate_log_stats(values):
    """(geometric mean, multiplicative std) of positive values.

    Report intervals as gm * mstd**{+-1}, i.e. exp(mu +- sigma) of the logs.
    """
    v = np.asarray(values, dtype=float)
    if np.any(v <= 0):
        raise ValueError("log statistics need positive values")
    logs = np.log(v)
    return float(np.exp(np.mean(logs))), float(np.exp(np.std(logs)))


def kfold_cv(dataset: PairDataset, config: TrainConfig, k=None):
    """Deterministic k-fold split over pairs; trains one model per fold.

    Returns a list of (train_loss, val_loss) per fold.
    """
    k = k or config.k_folds
    if dataset.size < k:
        raise ValueError("fewer pairs than folds")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(dataset.size)
    folds = np.array_split(perm, k)
    out = []
    for fi, hold in enumerate(folds):
        if len(hold) == 0:
            raise ValueError("empty validation fold")
        train_idx = np.setdiff1d(perm, hold)
        model = MlpField(dataset.d, seed=config.seed + 101 + fi)
        res = train(model, dataset.subset(train_idx), config)
        val = loss(res.model, dataset.subset(hold))
        out.append((res.best_loss, val))
    return out


# ---------------------------------------------------------------------------
# dataset and checkpoint files

def write_pair_dataset(path, ds: PairDataset):
    d = ds.d
    cols = (["i", "j"] + [f"xi{k}" for k in range(d)] + [f"xj{k}" for k in range(d)]
            + ["w_ij", "eta_inv_target"])
    with open(path, "w") as fh:
        fh.write(f"# eps {ds.eps!r}\n")
        fh.write(f"# N {ds.quad.N}\n")
        fh.write(f"# rule {ds.quad.rule}\n")
        fh.write(f"# kernel {ds.kernel_profile}\n")
        fh.write(", ".join(cols) + "\n")
        for r in range(ds.size):
            row = ([str(int(ds.i[r])), str(int(ds.j[r]))]
                   + [repr(float(v)) for v in ds.xi[r]]
                   + [repr(float(v)) for v in ds.xj[r]]
                   + [repr(float(ds.w[r])), repr(float(ds.target[r]))])
            fh.write(", ".join(row) + "\n")


def read_pair_dataset(path):
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, val = line[1:].split(maxsplit=1)
                meta[key] = val
                continue
            if line.startswith("i,") or line.startswith("i ,"):
                continue
            rows.append([float(v) for v in line.split(",")])
    arr = np.array(rows)
    d = (arr.shape[1] - 4) // 2
    quad = SegmentQuadrature(N=int(meta["N"]), rule=meta["rule"])
    return PairDataset(
        i=arr[:, 0].astype(int),
        j=arr[:, 1].astype(int),
        xi=arr[:, 2:2 + d],
        xj=arr[:, 2 + d:2 + 2 * d],
        w=arr[:, -2],
        target=arr[:, -1],
        eps=float(meta["eps"]),
        quad=quad,
        kernel_profile=meta["kernel"],
    )


@dataclass
class RecoveryRun:
    dataset: PairDataset
    result: TrainResult
    metrics: RecoveryMetrics
    eps: float
    stats: object  # the NormalizationStats used for train and test points
    test_points: np.ndarray


def recovery_experiment(domain, g_true, n, kernel=None, rule="per-d-plus-2",
                        C=1.0, n_test=200, seed=0, config=None, quad=None,
                        rho=None, d_exponent=None):
    """One full synthetic-recovery run.

    Samples n points, standard-score normalizes them (g_true is read on the
    normalized coordinates), synthesizes pair weights at the scale given by
    the eps rule, fits a fresh MLP, and scores it on n_test points drawn
    disjointly from the same distribution and pushed through the identical
    normalization.
    """
    from .geometry import normalize, sample_points
    from .graph import eps_scaling

    kernel = kernel or Kernel("exp-square")
    config = config or TrainConfig(seed=seed)
    raw = sample_points(domain, rho, n, seed)
    cloud, stats = normalize(raw)
    d = cloud.points.shape[1]
    eps = eps_scaling(n, d, C=C, rule=rule)
    dataset = synthesize_weights(cloud, g_true, eps, kernel, quad=quad)
    model = MlpField(d, seed=config.seed)
    result = train(model, dataset, config)
    # offset far past any plausible sweep of base seeds
    test_raw = sample_points(domain, rho, n_test, seed + 7919)
    test_points = stats.apply(test_raw.points)
    metrics = evaluate_recovery(result.model, g_true, test_points,
                                d_exponent=d_exponent)
    metrics.final_train_loss = result.best_loss
    return RecoveryRun(dataset=dataset, result=result, metrics=metrics,
                       eps=eps, stats=stats, test_points=test_points)


def save_checkpoint(path, model: MlpField):
    """Flat parameter vector, explicit little-endian float64, ASCII header."""
    with open(path, "wb") as fh:
        fh.write(b"mlpfield 1\n")
        fh.write(("widths " + " ".join(str(w) for w in model.widths) + "\n").encode())
        fh.write(b"dtype float64-le\n")
        fh.write(f"count {model.n_params}\n".encode())
        fh.write(b"data\n")
        fh.write(model.params.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)
    if buf.readline().decode().strip() != "mlpfield 1":
        raise ValueError("not a checkpoint file (bad magic)")
    fields = {}
    for _ in range(3):
        parts = buf.readline().decode().split()
        fields[parts[0]] = parts[1:]
    if buf.readline().decode().strip() != "data":
        raise ValueError("malformed checkpoint header")
    widths = [int(v) for v in fields["widths"]]
    if len(widths) != 4 or widths[1] != widths[2] or widths[3] != 1:
        raise ValueError(f"unsupported architecture {widths}")
    count = int(fields["count"][0])
    params = np.frombuffer(buf.read(count * 8), dtype="<f8")
    if len(params) != count:
        raise ValueError("checkpoint payload truncated")
    model = MlpField(widths[0], hidden=widths[1], seed=0)
    if model.n_params != count:
        raise ValueError("parameter count does not match architecture")
    model.params = params.astype(float)
    return model
