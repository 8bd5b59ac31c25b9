"""Point cloud containers, neighborhood search, downsampling, and rigid transforms."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


class DegenerateGeometryError(ValueError):
    """Raised when an input configuration cannot support the requested solve."""


@dataclass(frozen=True)
class PointCloud:
    """Sampled surface points of one part, optionally with unit normals.

    Coordinates are model units; shapes are normalized to fit in the unit
    cube. Normals, when present, are unit length within 1e-6.
    """

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("empty input")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite values")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64)
            if nrm.shape != pts.shape:
                raise ValueError("normals must match points shape")
            lengths = np.linalg.norm(nrm, axis=1)
            if not np.all(np.abs(lengths - 1.0) < 1e-6):
                raise ValueError("normals must be unit length")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def extent(self) -> float:
        """Diagonal of the axis-aligned bounding box."""
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.linalg.norm(span))


@dataclass(frozen=True)
class NeighborTable:
    """Fixed-width k-nearest-neighbor rows over a reference cloud.

    Rows are sorted by ascending distance with ties broken by lower point
    index. When the reference cloud has fewer than k points, rows are padded
    by repeating the nearest entry and the padding is masked out in `valid`.
    """

    indices: np.ndarray   # (Q, k) int64
    distances: np.ndarray  # (Q, k) float64
    valid: np.ndarray      # (Q, k) bool, False on padded entries

    @property
    def k(self) -> int:
        return self.indices.shape[1]


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation acting as p -> R @ p + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation determinant must be +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return self after other: (self @ other)(p) = self(other(p))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


def knn(cloud: PointCloud, queries: PointCloud, k: int) -> NeighborTable:
    """k nearest neighbors of each query in `cloud` by Euclidean distance.

    Results are bit-compatible with an exhaustive scan: rows are sorted by
    (distance, index), so ties resolve to the lower index. Self-matches are
    allowed when the query set is the reference set.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pts = cloud.points
    qry = queries.points
    n = pts.shape[0]
    k_eff = min(k, n)

    tree = cKDTree(pts)
    dist, idx = tree.query(qry, k=k_eff)
    if k_eff == 1:
        dist = dist[:, None]
        idx = idx[:, None]

    # The tree may order exact ties arbitrarily; re-rank candidates at the
    # boundary radius with exact distances so ties break by lower index.
    out_idx = np.empty((qry.shape[0], k_eff), dtype=np.int64)
    out_dst = np.empty((qry.shape[0], k_eff), dtype=np.float64)
    boundary = dist[:, -1]
    margin = boundary * 1e-9 + 1e-12
    candidates = tree.query_ball_point(qry, boundary + margin)
    for i, cand in enumerate(candidates):
        cand = np.asarray(cand, dtype=np.int64)
        d = np.linalg.norm(pts[cand] - qry[i], axis=1)
        order = np.lexsort((cand, d))[:k_eff]
        out_idx[i] = cand[order]
        out_dst[i] = d[order]

    if k_eff < k:
        pad = k - k_eff
        out_idx = np.hstack([out_idx, np.repeat(out_idx[:, :1], pad, axis=1)])
        out_dst = np.hstack([out_dst, np.repeat(out_dst[:, :1], pad, axis=1)])
        valid = np.zeros((qry.shape[0], k), dtype=bool)
        valid[:, :k_eff] = True
    else:
        valid = np.ones((qry.shape[0], k), dtype=bool)
    return NeighborTable(out_idx, out_dst, valid)


def knn_bruteforce(cloud: PointCloud, queries: PointCloud, k: int) -> NeighborTable:
    """Exhaustive O(N*Q) scan; the reference oracle for `knn`."""
    if k < 1:
        raise ValueError("k must be >= 1")
    pts = cloud.points
    qry = queries.points
    n = pts.shape[0]
    k_eff = min(k, n)
    diff = qry[:, None, :] - pts[None, :, :]
    d = np.linalg.norm(diff, axis=2)
    idx_all = np.arange(n)
    out_idx = np.empty((qry.shape[0], k_eff), dtype=np.int64)
    out_dst = np.empty((qry.shape[0], k_eff), dtype=np.float64)
    for i in range(qry.shape[0]):
        order = np.lexsort((idx_all, d[i]))[:k_eff]
        out_idx[i] = order
        out_dst[i] = d[i, order]
    if k_eff < k:
        pad = k - k_eff
        out_idx = np.hstack([out_idx, np.repeat(out_idx[:, :1], pad, axis=1)])
        out_dst = np.hstack([out_dst, np.repeat(out_dst[:, :1], pad, axis=1)])
        valid = np.zeros((qry.shape[0], k), dtype=bool)
        valid[:, :k_eff] = True
    else:
        valid = np.ones((qry.shape[0], k), dtype=bool)
    return NeighborTable(out_idx, out_dst, valid)


def grid_downsample(cloud: PointCloud, cell: float) -> tuple[PointCloud, np.ndarray]:
    """Voxel-grid downsample: one centroid per occupied cell.

    Returns the coarse cloud and a parent map sending every input point to
    the index of its cell's representative. Cells are keyed off the cloud's
    minimum corner; representative order is lexicographic in cell key.
    """
    if cell <= 0:
        raise ValueError("cell size must be positive")
    pts = cloud.points
    origin = pts.min(axis=0)
    keys = np.floor((pts - origin) / cell).astype(np.int64)
    # lexicographic unique over (kx, ky, kz)
    uniq, parent = np.unique(keys, axis=0, return_inverse=True)
    parent = parent.reshape(-1)
    n_cells = uniq.shape[0]
    counts = np.bincount(parent, minlength=n_cells).astype(np.float64)
    # accumulate members in coordinate order so the result does not depend
    # on the input point order (float addition is not associative)
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], parent))
    sorted_parent = parent[order]
    starts = np.concatenate([[0], np.nonzero(np.diff(sorted_parent))[0] + 1])
    centroids = np.add.reduceat(pts[order], starts, axis=0) / counts[:, None]

    normals = None
    if cloud.normals is not None:
        sums = np.add.reduceat(cloud.normals[order], starts, axis=0)
        lengths = np.linalg.norm(sums, axis=1)
        normals = np.zeros_like(sums)
        ok = lengths > 1e-8
        normals[ok] = sums[ok] / lengths[ok, None]
        if not np.all(ok):
            # normals cancelled inside the cell: fall back to the normal of
            # the member point closest to the centroid
            for c in np.nonzero(~ok)[0]:
                members = np.nonzero(parent == c)[0]
                closest = members[np.argmin(np.linalg.norm(pts[members] - centroids[c], axis=1))]
                normals[c] = cloud.normals[closest]
    return PointCloud(centroids, normals), parent.astype(np.int64)


def apply_transform(transform: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Apply a rigid transform to every point; normals are rotated only."""
    normals = None
    if cloud.normals is not None:
        normals = cloud.normals @ transform.rotation.T
    return PointCloud(transform.apply(cloud.points), normals)


def kabsch_weighted(
    src: np.ndarray, dst: np.ndarray, weights: np.ndarray | None = None
) -> RigidTransform:
    """Weighted least-squares rigid transform mapping src points onto dst.

    SVD-based with reflection correction so det(R) = +1. Requires at least
    3 correspondences with nonzero total weight and non-collinear support.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("src and dst must both be (N, 3)")
    n = src.shape[0]
    if n < 3:
        raise DegenerateGeometryError("degenerate correspondence set: fewer than 3 pairs")
    if weights is None:
        weights = np.ones(n)
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise DegenerateGeometryError("degenerate correspondence set: zero total weight")
    w = w / total

    mu_src = w @ src
    mu_dst = w @ dst
    a = src - mu_src
    b = dst - mu_dst
    H = (a * w[:, None]).T @ b
    sv = np.linalg.svd(H, compute_uv=False)
    # rank test relative to the dominant singular value so tight clusters
    # of small spatial extent are not misread as degenerate
    if sv[0] <= 0 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateGeometryError("degenerate correspondence set")
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    S = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = Vt.T @ S @ U.T
    t = mu_dst - R @ mu_src
    return RigidTransform(R, t)


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic rotation angle of R in radians.

    Uses atan2 of the antisymmetric part against the trace, which stays
    accurate for angles near 0 where arccos loses half the precision.
    """
    s = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arctan2(np.linalg.norm(s), c))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix (quaternion method)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_rigid_transform(
    rng: np.random.Generator, translation_range: float = 0.5
) -> RigidTransform:
    """Rotation uniform over SO(3), translation uniform in a centered cube."""
    t = rng.uniform(-translation_range, translation_range, size=3)
    return RigidTransform(random_rotation(rng), t)
