"""Rigid-transform estimation, pairwise assembly, and multi-part synchronization.

A robust consensus loop turns weighted correspondences into a rigid motion;
pairs of parts are assembled end to end through the matching pipeline; and
multi-part pose graphs are solved by spanning-tree initialization plus
confidence-weighted rotation/translation averaging anchored at the largest
part.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import PyramidConfig, build_pyramid
from .geometry import (DegenerateGeometryError, PointCloud, RigidTransform,
                       kabsch_weighted)
from .matcher import (Correspondences, MatchConfig, MatcherProxies, NoMatch,
                      build_matcher_proxies, match_pair)
from .metrics import MetricBundle, evaluate_poses

INLIER_RADIUS_FACTOR = 0.05
POLISH_ROUNDS = 3


@dataclass(frozen=True)
class AssemblyResult:
    """Outcome of assembling one ordered part pair (X aligned onto Y)."""

    transform: RigidTransform | None
    correspondence_count: int
    inlier_ratio: float
    failure: str | None = None
    metrics: MetricBundle | None = None

    @property
    def ok(self) -> bool:
        return self.transform is not None


@dataclass(frozen=True)
class PoseGraphEdge:
    source: int
    target: int
    transform: RigidTransform   # maps source-part points into target frame
    confidence: float


@dataclass(frozen=True)
class PoseGraph:
    n_parts: int
    anchor: int
    edges: tuple[PoseGraphEdge, ...]

    def __post_init__(self):
        if not 0 <= self.anchor < self.n_parts:
            raise ValueError("anchor must index a part")
        for e in self.edges:
            if not (0 <= e.source < self.n_parts and 0 <= e.target < self.n_parts):
                raise ValueError("edge endpoints must index parts")
            if e.source == e.target:
                raise ValueError("self edges are not allowed")


def _corr_extent(corr: Correspondences) -> float:
    pts = np.vstack([corr.src_points, corr.dst_points])
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def _residuals(T: RigidTransform, corr: Correspondences) -> np.ndarray:
    return np.linalg.norm(T.apply(corr.src_points) - corr.dst_points, axis=1)


def estimate_transform(
    corr: Correspondences,
    hypotheses: int = 64,
    inlier_radius: float | None = None,
    seed: int = 0,
) -> RigidTransform:
    """Robust rigid fit: weighted-Kabsch hypotheses on random 60% subsets
    (plus the full set), scored by inlier count, then re-fit on the best
    hypothesis's inliers with a few radius-tightening polish rounds.

    The polish rounds repeat the inlier/re-fit step at shrinking radii so an
    approximately right consensus converges onto the exact inlier geometry.
    """
    n = len(corr)
    if n < 3:
        raise DegenerateGeometryError("need at least 3 correspondences")
    if hypotheses < 1:
        raise ValueError("hypotheses must be >= 1")
    rho = inlier_radius
    if rho is None:
        rho = INLIER_RADIUS_FACTOR * max(_corr_extent(corr), 1e-12)

    rng = np.random.default_rng(seed)
    subset_size = max(3, int(np.ceil(0.6 * n)))
    candidates: list[RigidTransform] = []
    for _ in range(hypotheses):
        idx = rng.choice(n, size=subset_size, replace=False)
        try:
            candidates.append(kabsch_weighted(
                corr.src_points[idx], corr.dst_points[idx], corr.weights[idx]))
        except DegenerateGeometryError:
            continue
    try:
        candidates.append(kabsch_weighted(
            corr.src_points, corr.dst_points, corr.weights))
    except DegenerateGeometryError as e:
        if not candidates:
            raise DegenerateGeometryError(
                f"all correspondence subsets degenerate: {e}") from e
    if not candidates:
        raise DegenerateGeometryError("no valid hypothesis could be fit")

    counts = [int((_residuals(T, corr) < rho).sum()) for T in candidates]
    best = candidates[int(np.argmax(counts))]

    # re-fit on the winning inlier set, then polish at tightening radii
    T = best
    radius = rho
    for round_i in range(1 + POLISH_ROUNDS):
        resid = _residuals(T, corr)
        mask = resid < radius
        if mask.sum() < 3:
            break
        try:
            refit = kabsch_weighted(corr.src_points[mask],
                                    corr.dst_points[mask],
                                    corr.weights[mask])
        except DegenerateGeometryError:
            break  # degrade gracefully to the last well-posed fit
        T = refit
        inl = resid[mask]
        # shrink toward the surviving residual scale but never below a floor
        radius = max(float(np.median(inl)) * 3.0, rho / 64.0)
    return T


def assemble_pair(
    part_x: PointCloud,
    part_y: PointCloud,
    cfg: MatchConfig | None = None,
    pyramid_cfg: PyramidConfig | None = None,
    proxies: MatcherProxies | None = None,
    hypotheses: int = 64,
    gt_transform: RigidTransform | None = None,
) -> AssemblyResult:
    """Full pipeline for one pair: pyramids, matching, robust estimation.

    The returned transform maps part X points into part Y's frame. When the
    ground-truth relative transform is supplied, a rotation/translation error
    summary is attached.
    """
    if part_x is None or part_y is None or len(part_x) == 0 or len(part_y) == 0:
        raise ValueError("empty input")
    cfg = cfg or MatchConfig()
    pyr_x = build_pyramid(part_x, pyramid_cfg)
    pyr_y = build_pyramid(part_y, pyramid_cfg)
    res = match_pair(pyr_x, pyr_y, cfg, proxies)
    if isinstance(res, NoMatch):
        return AssemblyResult(None, 0, 0.0, failure=res.reason)
    try:
        T = estimate_transform(res, hypotheses=hypotheses, seed=cfg.seed)
    except DegenerateGeometryError as e:
        return AssemblyResult(None, len(res), 0.0, failure=str(e))
    rho = INLIER_RADIUS_FACTOR * max(_corr_extent(res), 1e-12)
    ratio = float((_residuals(T, res) < rho).mean())
    metrics = None
    if gt_transform is not None:
        identity = RigidTransform.identity()
        metrics = evaluate_poses([part_x, part_y],
                                 [T, identity],
                                 [gt_transform, identity],
                                 anchor=1)
    return AssemblyResult(T, len(res), ratio, metrics=metrics)


def _quat_from_rotation(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation matrix."""
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        return np.array([0.25 * s,
                         (R[2, 1] - R[1, 2]) / s,
                         (R[0, 2] - R[2, 0]) / s,
                         (R[1, 0] - R[0, 1]) / s])
    i = int(np.argmax(np.diag(R)))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k], 0.0) + 1.0) * 2.0
    q = np.empty(4)
    q[0] = (R[k, j] - R[j, k]) / s
    q[1 + i] = 0.25 * s
    q[1 + j] = (R[j, i] + R[i, j]) / s
    q[1 + k] = (R[k, i] + R[i, k]) / s
    return q


def _rotation_from_quat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def _connected_components(n: int, edges) -> list[list[int]]:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in edges:
        ra, rb = find(e.source), find(e.target)
        if ra != rb:
            parent[ra] = rb
    comps: dict[int, list[int]] = {}
    for i in range(n):
        comps.setdefault(find(i), []).append(i)
    return sorted(comps.values())


def synchronize(graph: PoseGraph, rounds: int = 10) -> list[RigidTransform]:
    """Globally consistent per-part poses from pairwise relative transforms.

    The anchor's pose is the identity. Poses are initialized by composing
    edge transforms along a maximum-confidence spanning tree, then refined by
    confidence-weighted averaging: each node's rotation is re-estimated as
    the weighted quaternion mean of what its neighbors' poses imply, and
    translations solve the same weighted least-squares consistency.

    An edge (i, j, T_ij) states pose_i = pose_j composed with T_ij, i.e.
    T_ij carries part i's points into part j's frame.
    """
    comps = _connected_components(graph.n_parts, graph.edges)
    if len(comps) > 1:
        raise ValueError(f"pose graph is disconnected: components {comps}")

    # adjacency with both directions: (neighbor, transform into neighbor frame)
    adj: dict[int, list[tuple[int, RigidTransform, float]]] = {
        i: [] for i in range(graph.n_parts)}
    for e in graph.edges:
        adj[e.source].append((e.target, e.transform, e.confidence))
        adj[e.target].append((e.source, e.transform.inverse(), e.confidence))

    # maximum-confidence spanning tree (Prim) from the anchor
    poses: list[RigidTransform | None] = [None] * graph.n_parts
    poses[graph.anchor] = RigidTransform.identity()
    visited = {graph.anchor}
    frontier = [(c, graph.anchor, nb, T) for nb, T, c in adj[graph.anchor]]
    while len(visited) < graph.n_parts:
        frontier = [f for f in frontier if f[2] not in visited]
        conf, src, nb, T = max(frontier, key=lambda f: (f[0], -f[2]))
        # T carries src points into nb's frame, so pose_nb = pose_src ∘ T⁻¹
        poses[nb] = poses[src].compose(T.inverse())
        visited.add(nb)
        frontier += [(c, nb, n2, T2) for n2, T2, c in adj[nb]]

    for _ in range(rounds):
        new_poses = list(poses)
        for node in range(graph.n_parts):
            if node == graph.anchor or not adj[node]:
                continue
            quats = []
            weights = []
            trans_rows = []
            for nb, T, c in adj[node]:
                implied = poses[nb].compose(T)
                quats.append(_quat_from_rotation(implied.rotation))
                weights.append(c)
                trans_rows.append(implied.translation)
            q0 = quats[0]
            acc = np.zeros(4)
            for q, c in zip(quats, weights):
                if np.dot(q, q0) < 0:
                    q = -q
                acc += c * q
            w = np.asarray(weights)
            t = (w[:, None] * np.asarray(trans_rows)).sum(axis=0) / w.sum()
            new_poses[node] = RigidTransform(_rotation_from_quat(acc), t)
        poses = new_poses
    return [p for p in poses]


def assemble_multi(
    parts: list[PointCloud],
    cfg: MatchConfig | None = None,
    pyramid_cfg: PyramidConfig | None = None,
    hypotheses: int = 64,
    gt_poses: list[RigidTransform] | None = None,
) -> dict:
    """All-pairs matching, pose graph construction, and synchronization.

    Returns {anchor, poses, edges, connected, skipped_pairs, metrics}; poses
    map each part into the anchor frame. When edge failures disconnect the
    graph, the result is flagged partial: parts outside the anchor's
    component get identity poses and are listed. Ground-truth poses, when
    supplied (any common anchoring), are re-anchored to the predicted anchor
    and scored into a metric bundle.
    """
    if len(parts) < 2:
        raise ValueError("need at least 2 parts")
    if any(len(p) == 0 for p in parts):
        raise ValueError("empty input")
    cfg = cfg or MatchConfig()
    proxies = build_matcher_proxies(cfg)

    anchor = int(np.argmax([len(p) for p in parts]))
    edges = []
    skipped = []
    for i in range(len(parts)):
        for j in range(i + 1, len(parts)):
            pyr_i = build_pyramid(parts[i], pyramid_cfg)
            pyr_j = build_pyramid(parts[j], pyramid_cfg)
            res = match_pair(pyr_i, pyr_j, cfg, proxies)
            if isinstance(res, NoMatch):
                skipped.append((i, j, res.reason))
                continue
            try:
                T = estimate_transform(res, hypotheses=hypotheses, seed=cfg.seed)
            except DegenerateGeometryError as e:
                skipped.append((i, j, str(e)))
                continue
            conf = len(res) * float(res.weights.mean())
            edges.append(PoseGraphEdge(i, j, T, conf))

    comps = _connected_components(len(parts), edges)
    anchor_comp = next(c for c in comps if anchor in c)
    connected = len(comps) == 1
    if connected:
        graph = PoseGraph(len(parts), anchor, tuple(edges))
        poses = synchronize(graph)
    else:
        # synchronize the anchor's component; identity elsewhere, flagged
        sub = sorted(anchor_comp)
        remap = {p: k for k, p in enumerate(sub)}
        sub_edges = tuple(
            PoseGraphEdge(remap[e.source], remap[e.target], e.transform,
                          e.confidence)
            for e in edges if e.source in remap and e.target in remap)
        sub_graph = PoseGraph(len(sub), remap[anchor], sub_edges)
        sub_poses = synchronize(sub_graph)
        poses = [RigidTransform.identity() for _ in parts]
        for p, k in remap.items():
            poses[p] = sub_poses[k]
    metrics = None
    if gt_poses is not None:
        if len(gt_poses) != len(parts):
            raise ValueError("gt_poses must align with parts")
        inv_anchor = gt_poses[anchor].inverse()
        gt_rel = [inv_anchor.compose(g) for g in gt_poses]
        metrics = evaluate_poses(parts, poses, gt_rel, anchor=anchor)
    return {
        "anchor": anchor,
        "poses": poses,
        "edges": edges,
        "connected": connected,
        "skipped_pairs": skipped,
        "metrics": metrics,
    }


def result_to_json(result: dict) -> dict:
    """JSON-ready form of an assemble_multi result."""
    return {
        "anchor": result["anchor"],
        "poses": [
            {
                "part": i,
                "R": [float(v) for v in pose.rotation.ravel()],
                "t": [float(v) for v in pose.translation],
            }
            for i, pose in enumerate(result["poses"])
        ],
        "edges": [
            {
                "source": e.source,
                "target": e.target,
                "R": [float(v) for v in e.transform.rotation.ravel()],
                "t": [float(v) for v in e.transform.translation],
                "confidence": e.confidence,
            }
            for e in result["edges"]
        ],
        "connected": result["connected"],
        "skipped_pairs": [list(map(str, s)) for s in result["skipped_pairs"]],
        "metrics": (result["metrics"].to_dict()
                    if result.get("metrics") is not None else None),
    }
