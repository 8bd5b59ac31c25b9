"""Coarse-to-fine correspondence pipeline.

Coarse pyramid features are refined by a proxy-transform stack under global
attention and scored densely; the best coarse pairs seed patch-level
assignment problems over their grouped fine points, each solved by
entropy-regularized optimal transport with dustbins.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .features import Pyramid
from .geometry import knn
from .pmt import PmtLayerConfig, PmtStackLayer, ProxySet, build_attention, init_proxies, pmt_stack

BANDWIDTH_SCALES = (0.25, 0.5, 0.75, 1.0)

# Rescales unit-row fine descriptors before the Gaussian patch scores.
# Calibrated so a typical matching pair scores close to the dustbin
# constant: at the default transport temperature only scores within a few
# tenths of the dustbin attract mass, so an overscaled descriptor space
# sends every patch row to the dustbin and extraction returns nothing.
FINE_SCALE = 0.45


@dataclass(frozen=True)
class MatchConfig:
    k: int = 128                  # top coarse pairs to expand
    sinkhorn_iterations: int = 100
    temperature: float = 0.1
    dustbin_score: float = 1.0
    epsilon: int = 16             # local attention neighborhood
    n_heads: int = 4
    emb_dims: tuple[int, int, int] = (512, 256, 128)        # coarse..fine
    proxy_dims: tuple[tuple[int, int], ...] = ((32, 128), (16, 64), (8, 32))
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.sinkhorn_iterations < 1:
            raise ValueError("k and iterations must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if len(self.proxy_dims) != 3 or len(self.emb_dims) != 3:
            raise ValueError("three levels required")

    @property
    def n_layers(self) -> int:
        return len(self.proxy_dims[0])

    def canonical(self) -> dict:
        return {
            "k": self.k,
            "sinkhorn_iterations": self.sinkhorn_iterations,
            "temperature": self.temperature,
            "dustbin_score": self.dustbin_score,
            "epsilon": self.epsilon,
            "n_heads": self.n_heads,
            "emb_dims": list(self.emb_dims),
            "proxy_dims": [list(p) for p in self.proxy_dims],
            "seed": self.seed,
        }

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class CoarseMatch:
    x: int
    y: int
    score: float


@dataclass(frozen=True)
class PatchAssignment:
    """One coarse match expanded to its fine members and transport plan."""

    coarse: CoarseMatch
    members_x: np.ndarray
    members_y: np.ndarray
    plan: np.ndarray       # (m+1, n+1) with dustbins
    confidence: float


@dataclass(frozen=True)
class Correspondences:
    src_indices: np.ndarray   # fine-level indices into cloud X
    dst_indices: np.ndarray
    weights: np.ndarray       # transport mass, each in (0, 1]
    src_points: np.ndarray    # (n, 3)
    dst_points: np.ndarray

    def __len__(self) -> int:
        return self.src_indices.shape[0]


@dataclass(frozen=True)
class NoMatch:
    """Typed empty outcome: the pipeline ran but extracted nothing."""

    reason: str


@dataclass(frozen=True)
class MatcherProxies:
    """Per-level, per-layer proxy sets (coarse..fine outer, layer inner)."""

    stacks: tuple[tuple[ProxySet, ...], ...]


def build_matcher_proxies(cfg: MatchConfig) -> MatcherProxies:
    """Deterministic proxy sets for all three levels from cfg.seed."""
    stacks = []
    for level in range(3):
        d_in = cfg.emb_dims[level]
        layer_sets = []
        for layer, d_out in enumerate(cfg.proxy_dims[level]):
            lc = PmtLayerConfig(
                n_heads=cfg.n_heads, d_proxy=d_out, d_emb=d_in,
                epsilon=cfg.epsilon)
            layer_sets.append(
                init_proxies(lc, mode="practical",
                             seed=cfg.seed * 100 + level * 10 + layer))
            d_in = d_out
        stacks.append(tuple(layer_sets))
    return MatcherProxies(tuple(stacks))


def _bandwidths(distances: np.ndarray, valid: np.ndarray, n_heads: int) -> np.ndarray:
    """Per-head Gaussian widths anchored to the nearest-neighbor spacing.

    The anchor is the median over points of each point's smallest positive
    neighbor distance, so heads average over 0.5x..4x the local sample
    spacing instead of blurring across the whole shape.
    """
    masked = np.where(valid & (distances > 0), distances, np.inf)
    nearest = masked.min(axis=1)
    nearest = nearest[np.isfinite(nearest)]
    scale = float(np.median(nearest)) if nearest.size else 1e-6
    scale = max(scale, 1e-9)
    mults = [BANDWIDTH_SCALES[h % len(BANDWIDTH_SCALES)] for h in range(n_heads)]
    return scale * np.array(mults)


def _level_stack(cloud, level: int, cfg: MatchConfig, proxies: MatcherProxies):
    """Attention plus proxy layers for one pyramid level (0 = coarse)."""
    scope = "global" if level == 0 else "local"
    k = len(cloud) if scope == "global" else min(cfg.epsilon, len(cloud))
    table = knn(cloud, cloud, k)
    lc = PmtLayerConfig(
        n_heads=cfg.n_heads, d_proxy=cfg.proxy_dims[level][0],
        d_emb=cfg.emb_dims[level], epsilon=k, scope=scope)
    att = build_attention(cloud, table, lc, _bandwidths(table.distances, table.valid, cfg.n_heads))
    return [PmtStackLayer(att, ps, activate=True) for ps in proxies.stacks[level]]


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return mat / np.maximum(norms, 1e-12)


def coarse_scores(F_x: np.ndarray, F_y: np.ndarray) -> np.ndarray:
    """Dense similarity exp(-||f_x - f_y||^2), each entry in (0, 1]."""
    F_x = np.asarray(F_x, dtype=np.float64)
    F_y = np.asarray(F_y, dtype=np.float64)
    if F_x.shape[1] != F_y.shape[1]:
        raise ValueError("feature dims must match")
    return np.exp(-cdist(F_x, F_y, "sqeuclidean"))


def topk_matches(scores: np.ndarray, k: int) -> list[CoarseMatch]:
    """Globally highest k entries, descending; ties by (row, col) order."""
    m, n = scores.shape
    total = m * n
    if k > total:
        warnings.warn(f"k={k} exceeds {total} score entries; clamping")
        k = total
    flat = scores.ravel()
    rows, cols = np.divmod(np.arange(total), n)
    order = np.lexsort((cols, rows, -flat))[:k]
    return [CoarseMatch(int(rows[i]), int(cols[i]), float(flat[i])) for i in order]


def group_point_to_node(
    parent_fine_to_mid: np.ndarray,
    parent_mid_to_coarse: np.ndarray,
    n_coarse: int,
) -> list[np.ndarray]:
    """Fine-point index lists per coarse node via the pyramid ancestry."""
    ancestor = np.asarray(parent_mid_to_coarse)[np.asarray(parent_fine_to_mid)]
    order = np.argsort(ancestor, kind="stable")
    sorted_anc = ancestor[order]
    groups = [np.empty(0, dtype=np.int64) for _ in range(n_coarse)]
    if order.size:
        starts = np.concatenate([[0], np.nonzero(np.diff(sorted_anc))[0] + 1])
        ends = np.concatenate([starts[1:], [order.size]])
        for s, e in zip(starts, ends):
            groups[sorted_anc[s]] = order[s:e].astype(np.int64)
    return groups


def sinkhorn_ot(scores: np.ndarray, cfg: MatchConfig) -> np.ndarray:
    """Log-domain Sinkhorn over the dustbin-augmented score matrix.

    Marginals: each real row and column carries unit mass; the dustbin row
    absorbs up to n and the dustbin column up to m, so both sides total
    m + n. Returns the (m+1) x (n+1) transport plan.
    """
    S = np.asarray(scores, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] < 1 or S.shape[1] < 1:
        raise ValueError("scores must be a nonempty 2-D matrix")
    if np.any(np.isnan(S)):
        raise ValueError("NaN score")
    m, n = S.shape
    aug = np.full((m + 1, n + 1), cfg.dustbin_score)
    aug[:m, :n] = S
    logk = aug / cfg.temperature
    log_a = np.log(np.concatenate([np.ones(m), [float(n)]]))
    log_b = np.log(np.concatenate([np.ones(n), [float(m)]]))
    u = np.zeros(m + 1)
    v = np.zeros(n + 1)
    for _ in range(cfg.sinkhorn_iterations):
        ku = logk + v[None, :]
        u = log_a - _logsumexp_rows(ku)
        kv = logk + u[:, None]
        v = log_b - _logsumexp_rows(kv.T)
    return np.exp(logk + u[:, None] + v[None, :])


def _logsumexp_rows(x: np.ndarray) -> np.ndarray:
    peak = x.max(axis=1, keepdims=True)
    return (peak + np.log(np.exp(x - peak).sum(axis=1, keepdims=True))).ravel()


def marginal_violation(plan: np.ndarray) -> float:
    """Worst absolute deviation of the plan from its prescribed marginals."""
    m = plan.shape[0] - 1
    n = plan.shape[1] - 1
    row_target = np.concatenate([np.ones(m), [float(n)]])
    col_target = np.concatenate([np.ones(n), [float(m)]])
    dr = np.abs(plan.sum(axis=1) - row_target).max()
    dc = np.abs(plan.sum(axis=0) - col_target).max()
    return float(max(dr, dc))


def refined_fine_descriptors(
    pyramid: Pyramid, cfg: MatchConfig, proxies: MatcherProxies, side: str
) -> np.ndarray:
    """Per-fine-point matching descriptor from the two local-scope stacks.

    The fine stack output is concatenated with its mid-level parent's
    refined row; both blocks are unit-normalized and the concatenation is
    rescaled to unit length.
    """
    mid_out = pmt_stack(pyramid.features[1], _level_stack(pyramid.clouds[1], 1, cfg, proxies), side)
    fine_out = pmt_stack(pyramid.features[2], _level_stack(pyramid.clouds[2], 2, cfg, proxies), side)
    mid_block = _unit_rows(mid_out)[pyramid.parent_fine_to_mid]
    fine_block = _unit_rows(fine_out)
    return FINE_SCALE * np.hstack([fine_block, mid_block]) / np.sqrt(2.0)


def match_pair(
    pyramid_x: Pyramid,
    pyramid_y: Pyramid,
    cfg: MatchConfig | None = None,
    proxies: MatcherProxies | None = None,
    return_patches: bool = False,
):
    """Full coarse-to-fine matching between two pyramids.

    Returns Correspondences, or NoMatch when nothing clears the transport
    threshold. With return_patches=True, returns (result, patches).
    """
    cfg = cfg or MatchConfig()
    proxies = proxies or build_matcher_proxies(cfg)

    coarse_x = _unit_rows(pmt_stack(
        pyramid_x.features[0], _level_stack(pyramid_x.clouds[0], 0, cfg, proxies), "X"))
    coarse_y = _unit_rows(pmt_stack(
        pyramid_y.features[0], _level_stack(pyramid_y.clouds[0], 0, cfg, proxies), "Y"))
    scores = coarse_scores(coarse_x, coarse_y)
    matches = topk_matches(scores, min(cfg.k, scores.size))

    groups_x = group_point_to_node(
        pyramid_x.parent_fine_to_mid, pyramid_x.parent_mid_to_coarse, len(pyramid_x.clouds[0]))
    groups_y = group_point_to_node(
        pyramid_y.parent_fine_to_mid, pyramid_y.parent_mid_to_coarse, len(pyramid_y.clouds[0]))
    desc_x = refined_fine_descriptors(pyramid_x, cfg, proxies, "X")
    desc_y = refined_fine_descriptors(pyramid_y, cfg, proxies, "Y")

    src_parts, dst_parts, w_parts = [], [], []
    patches = []
    for cm in matches:
        mem_x = groups_x[cm.x]
        mem_y = groups_y[cm.y]
        if mem_x.size == 0 or mem_y.size == 0:
            continue
        patch = coarse_scores(desc_x[mem_x], desc_y[mem_y])
        plan = sinkhorn_ot(patch, cfg)
        interior = plan[:-1, :-1]
        threshold = 1.0 / (mem_x.size + mem_y.size)
        rows, cols = np.nonzero(interior > threshold)
        if return_patches:
            conf = float(interior[rows, cols].sum())
            patches.append(PatchAssignment(cm, mem_x, mem_y, plan, conf))
        if rows.size:
            src_parts.append(mem_x[rows])
            dst_parts.append(mem_y[cols])
            w_parts.append(interior[rows, cols])

    if not src_parts:
        result = NoMatch("no transport mass above threshold")
        return (result, patches) if return_patches else result

    src = np.concatenate(src_parts)
    dst = np.concatenate(dst_parts)
    w = np.concatenate(w_parts)
    # keep the best pair per fine source point; ties resolve to the earliest
    # extraction (stable sort on weight descending within source index)
    order = np.lexsort((np.arange(src.size), -w, src))
    first = np.concatenate([[True], np.diff(src[order]) != 0])
    keep = order[first]
    keep = keep[np.argsort(keep)]  # restore extraction order
    src, dst, w = src[keep], dst[keep], w[keep]

    result = Correspondences(
        src_indices=src,
        dst_indices=dst,
        weights=w,
        src_points=pyramid_x.clouds[2].points[src],
        dst_points=pyramid_y.clouds[2].points[dst],
    )
    return (result, patches) if return_patches else result


def correspondences_to_json(
    corr: Correspondences, cfg: MatchConfig,
    pyramid_x: Pyramid, pyramid_y: Pyramid,
) -> dict:
    return {
        "pairs": [
            {
                "src": [float(v) for v in corr.src_points[i]],
                "dst": [float(v) for v in corr.dst_points[i]],
                "w": float(corr.weights[i]),
            }
            for i in range(len(corr))
        ],
        "meta": {
            "config_digest": cfg.digest(),
            "level_sizes_x": [len(c) for c in pyramid_x.clouds],
            "level_sizes_y": [len(c) for c in pyramid_y.clouds],
        },
    }
