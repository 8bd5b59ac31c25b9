"""Proxy-mediated feature transform.

Each head projects point features through a proxy matrix after mixing them
with distance-based neighborhood attention; head outputs are summed. Proxy
matrices across heads are pushed toward mutual orthonormality by a pair of
constraint losses with closed-form gradients.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .geometry import NeighborTable, PointCloud, knn
from .features import FeatureMatrix

MAGIC = b"PMT1"
GROUPNORM_GROUPS = 4
GROUPNORM_EPS = 1e-5
LEAKY_SLOPE = 0.1


@dataclass(frozen=True)
class ProxySet:
    """Per-head projection matrices plus per-side scalar weights."""

    proxies: np.ndarray    # (N_h, D_proxy, D_emb)
    weights_x: np.ndarray  # (N_h,)
    weights_y: np.ndarray  # (N_h,)

    def __post_init__(self):
        P = np.asarray(self.proxies, dtype=np.float64)
        wx = np.asarray(self.weights_x, dtype=np.float64).reshape(-1)
        wy = np.asarray(self.weights_y, dtype=np.float64).reshape(-1)
        if P.ndim != 3 or P.shape[0] < 1 or P.shape[1] < 1 or P.shape[2] < 1:
            raise ValueError("proxies must be (N_h, D_proxy, D_emb) with positive dims")
        if wx.shape != (P.shape[0],) or wy.shape != (P.shape[0],):
            raise ValueError("one weight per head per side required")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(wx)) and np.all(np.isfinite(wy))):
            raise ValueError("non-finite proxy data")
        object.__setattr__(self, "proxies", P)
        object.__setattr__(self, "weights_x", wx)
        object.__setattr__(self, "weights_y", wy)

    @property
    def n_heads(self) -> int:
        return self.proxies.shape[0]

    @property
    def d_proxy(self) -> int:
        return self.proxies.shape[1]

    @property
    def d_emb(self) -> int:
        return self.proxies.shape[2]


@dataclass(frozen=True)
class PmtLayerConfig:
    n_heads: int = 4
    d_proxy: int = 32
    d_emb: int = 512
    epsilon: int = 16          # neighborhood width for local attention
    scope: str = "local"       # "local" | "global"

    def __post_init__(self):
        if self.n_heads < 1 or self.d_proxy < 1 or self.d_emb < 1 or self.epsilon < 1:
            raise ValueError("config dims must be positive")
        if self.scope not in ("local", "global"):
            raise ValueError("scope must be 'local' or 'global'")


@dataclass(frozen=True)
class SparseAttention:
    """Per-head row-stochastic neighbor weights aligned with a NeighborTable."""

    weights: np.ndarray       # (N_h, Q, k)
    table: NeighborTable
    bandwidths: np.ndarray    # (N_h,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        bw = np.asarray(self.bandwidths, dtype=np.float64).reshape(-1)
        if w.ndim != 3:
            raise ValueError("attention weights must be (N_h, Q, k)")
        if w.shape[1:] != self.table.indices.shape:
            raise ValueError("attention weights misaligned with neighbor table")
        if bw.shape != (w.shape[0],) or np.any(bw <= 0):
            raise ValueError("one positive bandwidth per head required")
        if np.any(w < 0):
            raise ValueError("attention weights must be nonnegative")
        if np.any(w[:, ~self.table.valid] != 0.0):
            raise ValueError("padded entries must carry zero weight")
        sums = w.sum(axis=2)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise ValueError("attention rows must sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bandwidths", bw)

    @property
    def n_heads(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class ConstraintLoss:
    orthonormal: float
    cross_zero: float
    weight_orthonormal: float = 1.0
    weight_cross_zero: float = 1.0

    @property
    def combined(self) -> float:
        return (self.weight_orthonormal * self.orthonormal
                + self.weight_cross_zero * self.cross_zero)


def init_proxies(cfg: PmtLayerConfig, mode: str = "practical", seed: int = 0) -> ProxySet:
    """Build per-head proxy matrices.

    feasible: orthonormalize a seeded random d_proxy x (n_heads * d_emb)
    matrix and slice it into per-head column blocks, so cross-head products
    are exactly delta_ij * I. Requires d_proxy >= n_heads * d_emb.

    practical: independent random entries, std 1 / sqrt(d_emb).
    """
    rng = np.random.default_rng(seed)
    h, dp, de = cfg.n_heads, cfg.d_proxy, cfg.d_emb
    if mode == "feasible":
        if dp < h * de:
            raise ValueError("constraints infeasible at these dims")
        raw = rng.normal(size=(dp, h * de))
        q, _ = np.linalg.qr(raw)
        proxies = np.stack([q[:, i * de:(i + 1) * de] for i in range(h)])
    elif mode == "practical":
        proxies = rng.normal(scale=1.0 / np.sqrt(de), size=(h, dp, de))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    w = np.full(h, 1.0 / h)
    return ProxySet(proxies, w, w.copy())


def constraint_losses(
    proxy_set: ProxySet, weight_orthonormal: float = 1.0, weight_cross_zero: float = 1.0
) -> ConstraintLoss:
    """Squared-Frobenius residuals of the orthonormality system.

    orthonormal: sum_i ||P_i^T P_i - I||_F^2
    cross_zero:  sum over head pairs i < j of ||P_i^T P_j||_F^2
    """
    P = proxy_set.proxies
    h, _, de = P.shape
    eye = np.eye(de)
    orth = 0.0
    cross = 0.0
    for i in range(h):
        orth += float(np.sum((P[i].T @ P[i] - eye) ** 2))
        for j in range(i + 1, h):
            cross += float(np.sum((P[i].T @ P[j]) ** 2))
    return ConstraintLoss(orth, cross, weight_orthonormal, weight_cross_zero)


def constraint_grad(
    proxy_set: ProxySet, weight_orthonormal: float = 1.0, weight_cross_zero: float = 1.0
) -> np.ndarray:
    """Gradient of the combined constraint loss with respect to each proxy.

    d/dP_k [sum_i ||P_i^T P_i - I||^2] = 4 P_k (P_k^T P_k - I)
    d/dP_k [sum_{i<j} ||P_i^T P_j||^2]  = 2 (sum_{j!=k} P_j P_j^T) P_k
    """
    P = proxy_set.proxies
    h, dp, de = P.shape
    eye = np.eye(de)
    outer_total = np.einsum("hde,hfe->df", P, P)  # sum_j P_j P_j^T
    grad = np.empty_like(P)
    for k in range(h):
        gram_k = P[k].T @ P[k]
        outer_rest = outer_total - P[k] @ P[k].T
        grad[k] = (4.0 * weight_orthonormal * (P[k] @ (gram_k - eye))
                   + 2.0 * weight_cross_zero * (outer_rest @ P[k]))
    return grad


def fit_proxies(
    proxy_set: ProxySet,
    steps: int = 500,
    step_size: float = 0.05,
    weight_orthonormal: float = 1.0,
    weight_cross_zero: float = 1.0,
) -> tuple[ProxySet, np.ndarray]:
    """Gradient descent on the constraint losses.

    The returned trace (length steps + 1, leading entry is the starting
    loss) is monotonically non-increasing: a step that would increase the
    loss is rejected and the step size halved; accepted steps regrow it.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    P = proxy_set.proxies.copy()
    lr = step_size
    lr_cap = step_size * 16.0

    def loss_of(mat):
        return constraint_losses(
            ProxySet(mat, proxy_set.weights_x, proxy_set.weights_y),
            weight_orthonormal, weight_cross_zero,
        ).combined

    current = loss_of(P)
    trace = [current]
    for _ in range(steps):
        g = constraint_grad(
            ProxySet(P, proxy_set.weights_x, proxy_set.weights_y),
            weight_orthonormal, weight_cross_zero,
        )
        candidate = P - lr * g
        new = loss_of(candidate)
        if new <= current:
            P = candidate
            current = new
            lr = min(lr * 1.3, lr_cap)
        else:
            lr *= 0.5
        trace.append(current)
    return (
        ProxySet(P, proxy_set.weights_x.copy(), proxy_set.weights_y.copy()),
        np.array(trace),
    )


def build_attention(
    points: PointCloud,
    neighbors: NeighborTable | None,
    cfg: PmtLayerConfig,
    bandwidths: np.ndarray,
) -> SparseAttention:
    """Distance-kernel attention, one row-stochastic matrix per head.

    Unnormalized score for a neighbor at distance d under head h is
    exp(-(d / sigma_h)^2); padded entries are masked to exactly zero before
    row normalization. Global scope attends over the whole cloud.
    """
    bw = np.asarray(bandwidths, dtype=np.float64).reshape(-1)
    if bw.shape != (cfg.n_heads,):
        raise ValueError("one bandwidth per head required")
    if np.any(bw <= 0):
        raise ValueError("bandwidths must be positive")
    if cfg.scope == "global":
        neighbors = knn(points, points, len(points))
    elif neighbors is None:
        raise ValueError("local attention requires a neighbor table")

    d = neighbors.distances
    scores = np.exp(-((d[None, :, :] / bw[:, None, None]) ** 2))
    scores = scores * neighbors.valid[None, :, :]
    sums = scores.sum(axis=2, keepdims=True)
    weights = scores / np.maximum(sums, 1e-300)
    return SparseAttention(weights, neighbors, bw)


def pmt_forward(
    features: FeatureMatrix | np.ndarray,
    attention: SparseAttention,
    proxy_set: ProxySet,
    side: str = "X",
) -> np.ndarray:
    """sum_h A_h F P_h^T w_h, evaluated head by head in index order.

    Output rows live in proxy space: (|X|, d_proxy).
    """
    F = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    if F.ndim != 2:
        raise ValueError("features must be 2-D")
    if F.shape[1] != proxy_set.d_emb:
        raise ValueError(
            f"feature dim {F.shape[1]} does not match proxy d_emb {proxy_set.d_emb}")
    if F.shape[0] != attention.table.indices.shape[0]:
        raise ValueError("attention not aligned with feature rows")
    if attention.n_heads != proxy_set.n_heads:
        raise ValueError("attention and proxies disagree on head count")
    if side == "X":
        w = proxy_set.weights_x
    elif side == "Y":
        w = proxy_set.weights_y
    else:
        raise ValueError("side must be 'X' or 'Y'")

    idx = attention.table.indices
    out = np.zeros((F.shape[0], proxy_set.d_proxy))
    for h in range(proxy_set.n_heads):
        projected = F @ proxy_set.proxies[h].T          # (N, d_proxy)
        gathered = projected[idx]                        # (N, k, d_proxy)
        mixed = np.einsum("nk,nkd->nd", attention.weights[h], gathered)
        out += mixed * w[h]
    return out


def pmt_forward_positional(
    features: FeatureMatrix | np.ndarray,
    attention: SparseAttention,
    proxy_set: ProxySet,
    side: str = "X",
) -> np.ndarray:
    """Per-position reference evaluation of the head sum (naive loops).

    Oracle for pmt_forward: out[x] = sum_h w_h * sum_{n in N(x)} a_h[x,n] P_h f_n.
    """
    F = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    w = proxy_set.weights_x if side == "X" else proxy_set.weights_y
    idx = attention.table.indices
    valid = attention.table.valid
    n, k = idx.shape
    out = np.zeros((n, proxy_set.d_proxy))
    for x in range(n):
        for h in range(proxy_set.n_heads):
            acc = np.zeros(proxy_set.d_proxy)
            for j in range(k):
                if not valid[x, j]:
                    continue
                acc += attention.weights[h, x, j] * (proxy_set.proxies[h] @ F[idx[x, j]])
            out[x] += w[h] * acc
    return out


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def group_norm(x: np.ndarray, groups: int = GROUPNORM_GROUPS, eps: float = GROUPNORM_EPS) -> np.ndarray:
    """Per-row group normalization: zero mean, unit variance per group."""
    out = np.empty_like(x)
    for block in np.array_split(np.arange(x.shape[1]), groups):
        if block.size == 0:
            continue
        seg = x[:, block]
        mu = seg.mean(axis=1, keepdims=True)
        var = seg.var(axis=1, keepdims=True)
        out[:, block] = (seg - mu) / np.sqrt(var + eps)
    return out


@dataclass(frozen=True)
class PmtStackLayer:
    attention: SparseAttention
    proxies: ProxySet
    activate: bool = True  # leaky-ReLU + group norm after this layer


def pmt_stack(
    features: FeatureMatrix | np.ndarray,
    layers: list[PmtStackLayer],
    side: str = "X",
) -> np.ndarray:
    """Sequential proxy transforms with activation between layers."""
    F = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    for i, layer in enumerate(layers):
        if F.shape[1] != layer.proxies.d_emb:
            raise ValueError(
                f"layer {i}: input dim {F.shape[1]} does not chain into d_emb "
                f"{layer.proxies.d_emb}")
        F = pmt_forward(F, layer.attention, layer.proxies, side)
        if layer.activate:
            F = group_norm(leaky_relu(F))
    return F


def save_proxies(path: str, proxy_set: ProxySet) -> None:
    """Little-endian binary: magic, uint32 dims, float64 matrices + weights."""
    h, dp, de = proxy_set.proxies.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", h, dp, de))
        f.write(np.ascontiguousarray(proxy_set.proxies, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(proxy_set.weights_x, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(proxy_set.weights_y, dtype="<f8").tobytes())


def load_proxies(path: str) -> ProxySet:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        h, dp, de = struct.unpack("<III", f.read(12))
        n = h * dp * de
        proxies = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(h, dp, de)
        wx = np.frombuffer(f.read(8 * h), dtype="<f8")
        wy = np.frombuffer(f.read(8 * h), dtype="<f8")
        if wy.size != h:
            raise ValueError(f"{path}: truncated file")
    return ProxySet(proxies.copy(), wx.copy(), wy.copy())
