"""Rotation-invariant descriptor pyramid.

Stands in for a learned feature extractor: per-point descriptors are built
from local shape statistics that do not change under rigid motion, so two
copies of the same surface in different poses produce matching rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import NeighborTable, PointCloud, grid_downsample, knn

HIST_BINS = 8


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-point embeddings for one pyramid level."""

    values: np.ndarray        # (N, dim) float64
    level: int | None = None  # 1 = coarsest .. 3 = finest, None = standalone

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature matrix contains non-finite values")
        if self.level is not None and self.level not in (1, 2, 3):
            raise ValueError("level must be 1, 2, or 3")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class PyramidConfig:
    """Downsampling cells and per-level descriptor widths.

    base_cell is the unit voxel size; the mid level uses 2x and the coarse
    level 4x. None picks 0.025 of the cloud's bounding-box diagonal. dims and
    neighbors are ordered coarse to fine; coarser levels use wider descriptor
    neighborhoods since they carry fewer points per unit area.
    """

    base_cell: float | None = None
    dims: tuple[int, int, int] = (512, 256, 128)
    neighbors: tuple[int, int, int] = (32, 24, 16)

    def __post_init__(self):
        if any(d <= 0 for d in self.dims):
            raise ValueError("level dims must be positive")
        if self.base_cell is not None and self.base_cell <= 0:
            raise ValueError("base_cell must be positive")
        if isinstance(self.neighbors, int):
            object.__setattr__(self, "neighbors", (self.neighbors,) * 3)
        if any(n < 1 for n in self.neighbors):
            raise ValueError("neighbors must be >= 1")


@dataclass(frozen=True)
class Pyramid:
    """Coarse-to-fine levels with parent maps chaining fine into coarse."""

    clouds: tuple[PointCloud, PointCloud, PointCloud]     # (coarse, mid, fine)
    features: tuple[FeatureMatrix, FeatureMatrix, FeatureMatrix]
    parent_fine_to_mid: np.ndarray    # len == |fine|, values index mid
    parent_mid_to_coarse: np.ndarray  # len == |mid|, values index coarse


def _binned_rows(ratio: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Row-normalized histograms of ratio in [0, 1] over HIST_BINS bins.

    Ratios are rounded before binning so values that are equal up to float
    noise (common on symmetric inputs) always land in the same bin.
    """
    q, k = ratio.shape
    scaled = np.round(ratio * HIST_BINS, 9)
    idx = np.clip(np.floor(scaled), 0, HIST_BINS - 1).astype(np.int64)
    flat = np.arange(q)[:, None] * HIST_BINS + idx
    hist = np.bincount(
        flat[valid].ravel(), minlength=q * HIST_BINS
    ).reshape(q, HIST_BINS).astype(np.float64)
    counts = valid.sum(axis=1)
    return hist / counts[:, None]


def describe_base(cloud: PointCloud, neighbors: NeighborTable) -> np.ndarray:
    """Raw rotation-invariant descriptor block, untiled.

    Stacks sorted normalized covariance eigenvalues, the linearity/
    planarity/sphericity triple, a distance histogram, and (when normals
    exist) a normal-deviation histogram.
    """
    pts = cloud.points
    n = pts.shape[0]
    if neighbors.indices.shape[0] != n:
        raise ValueError("neighbor table does not cover the cloud")
    if neighbors.indices.max() >= n or neighbors.indices.min() < 0:
        raise ValueError("neighbor index out of range")

    idx = neighbors.indices
    valid = neighbors.valid
    counts = valid.sum(axis=1)
    nbr = pts[idx]                                     # (n, k, 3)
    w = valid.astype(np.float64) / counts[:, None]
    mean = np.einsum("nk,nkd->nd", w, nbr)
    centered = (nbr - mean[:, None, :]) * valid[:, :, None]
    cov = np.einsum("nki,nkj->nij", centered, centered) / counts[:, None, None]

    eig = np.linalg.eigvalsh(cov)[:, ::-1]             # descending
    eig = np.clip(eig, 0.0, None)
    total = np.maximum(eig.sum(axis=1), 1e-300)
    eig_norm = eig / total[:, None]
    lam1 = np.maximum(eig[:, 0], 1e-300)
    flat_mask = eig[:, 0] > 0
    linearity = np.where(flat_mask, (eig[:, 0] - eig[:, 1]) / lam1, 0.0)
    planarity = np.where(flat_mask, (eig[:, 1] - eig[:, 2]) / lam1, 0.0)
    sphericity = np.where(flat_mask, eig[:, 2] / lam1, 0.0)
    eig_norm = np.where(flat_mask[:, None], eig_norm, 0.0)

    dist = np.where(valid, neighbors.distances, 0.0)
    dmax = dist.max(axis=1)
    ratio = dist / np.maximum(dmax, 1e-300)[:, None]
    ratio = np.where(dmax[:, None] > 0, ratio, 0.0)
    dist_hist = _binned_rows(ratio, valid)

    blocks = [eig_norm, linearity[:, None], planarity[:, None],
              sphericity[:, None], dist_hist]
    if cloud.normals is not None:
        nn = cloud.normals[idx]
        cosang = np.clip(np.einsum("nd,nkd->nk", cloud.normals, nn), -1.0, 1.0)
        ang_ratio = np.arccos(cosang) / np.pi
        blocks.append(_binned_rows(ang_ratio, valid))
    return np.hstack(blocks)


def describe(cloud: PointCloud, neighbors: NeighborTable, dim: int) -> FeatureMatrix:
    """Per-point rotation-invariant descriptor of width dim.

    The raw block from describe_base is tiled to dim with alternating signs
    per repeat and every row is L2-normalized.
    """
    if dim < 16:
        raise ValueError("descriptor dim too small")
    base = describe_base(cloud, neighbors)
    return FeatureMatrix(_tile_to_dim(base, dim))


def _pooled_rows(values: np.ndarray, table: NeighborTable) -> np.ndarray:
    """Mean and standard deviation of descriptor rows over each query's
    nearest fine points.

    Pooling over a metric neighborhood (not a voxel cell) keeps the pooled
    statistics comparable between two independently gridded clouds, and
    keeps the node descriptor sensitive to the texture around it, which
    plain node-level shape statistics smooth away.
    """
    nbr = values[table.indices]                     # (q, k, d)
    w = table.valid.astype(np.float64)
    counts = np.maximum(w.sum(axis=1), 1.0)
    mean = np.einsum("qk,qkd->qd", w, nbr) / counts[:, None]
    sq = np.einsum("qk,qkd->qd", w, nbr ** 2) / counts[:, None]
    var = np.maximum(sq - mean ** 2, 0.0)
    return np.hstack([mean, np.sqrt(var)])


def _tile_to_dim(base: np.ndarray, dim: int) -> np.ndarray:
    n, width = base.shape
    reps = -(-dim // width)
    signs = np.array([(-1.0) ** r for r in range(reps)])
    tiled = (base[:, None, :] * signs[None, :, None]).reshape(n, reps * width)
    out = tiled[:, :dim]
    norms = np.linalg.norm(out, axis=1)
    return out / np.maximum(norms, 1e-300)[:, None]


def _standardize_columns(block: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance columns, scaled so rows have norm near 1.

    Within-cloud standardization stretches the descriptor axes where the
    surface actually varies; without it, nearly flat regions collapse onto
    one point in feature space and crowd out the informative pairs in
    similarity rankings. Constant columns become zero.
    """
    mu = block.mean(axis=0)
    sd = block.std(axis=0)
    out = (block - mu) / np.maximum(sd, 1e-9)
    return out / np.sqrt(block.shape[1])


def _noise_normalize(block: np.ndarray, cloud: PointCloud) -> np.ndarray:
    """Scale each column by its estimated sampling noise.

    The per-column noise is the median absolute difference between each
    point's value and its nearest neighbor's: adjacent points see almost the
    same surface, so their descriptor difference is dominated by sampling
    randomness. Dividing by it expresses every column in noise units, so
    columns that genuinely vary across the surface dominate similarity
    rankings. The noise estimate is floored at a fraction of the column
    spread to keep near-constant columns from exploding.
    """
    if len(cloud) < 2:
        return block
    table = knn(cloud, cloud, 2)
    nn1 = table.indices[:, 1]
    noise = np.median(np.abs(block - block[nn1]), axis=0)
    floor = 0.05 * block.std(axis=0)
    denom = np.maximum(np.maximum(noise, floor), 1e-12)
    out = block / denom
    return out / np.sqrt(block.shape[1])


def relief_block(cloud: PointCloud, neighbors: NeighborTable) -> np.ndarray:
    """Rotation-invariant local relief statistics over each point's ball.

    Fits the tangent plane of the neighborhood by PCA and summarizes the
    height field over it: spread, mean magnitude, even/absolute shape
    moments, and a coarse radial profile of height magnitude. Signs are
    arranged so the block is invariant to the tangent-normal's sign
    ambiguity. Captures surface texture that eigenvalue ratios alone
    smooth away.
    """
    pts = cloud.points
    idx = neighbors.indices
    valid = neighbors.valid
    counts = np.maximum(valid.sum(axis=1), 1)
    nbr = pts[idx]
    w = valid.astype(np.float64) / counts[:, None]
    mean = np.einsum("nk,nkd->nd", w, nbr)
    centered = (nbr - mean[:, None, :]) * valid[:, :, None]
    cov = np.einsum("nki,nkj->nij", centered, centered) / counts[:, None, None]
    eigvals, eigvecs = np.linalg.eigh(cov)
    normal = eigvecs[:, :, 0]                      # smallest-variance axis
    h = np.einsum("nkd,nd->nk", centered, normal)  # heights over tangent plane
    r = np.linalg.norm(centered - h[:, :, None] * normal[:, None, :], axis=2)
    h = np.where(valid, h, 0.0)
    r = np.where(valid, r, 0.0)

    cnt = counts.astype(np.float64)
    m1 = h.sum(axis=1) / cnt
    hc = np.where(valid, h - m1[:, None], 0.0)
    var = (hc ** 2).sum(axis=1) / cnt
    sd = np.sqrt(var)
    absmean = np.abs(hc).sum(axis=1) / cnt
    # flat neighborhoods (exactly planar cells) have sd == 0; flooring well
    # above the cube/fourth-power underflow line keeps 0/0 from minting NaN
    sd_safe = np.maximum(sd, 1e-30)
    skew = np.abs((hc ** 3).sum(axis=1) / cnt) / sd_safe ** 3
    kurt = (hc ** 4).sum(axis=1) / cnt / sd_safe ** 4
    rmax = np.maximum(r.max(axis=1), 1e-300)
    rings = []
    for lo, hi in ((0.0, 1 / 3), (1 / 3, 2 / 3), (2 / 3, 1.0001)):
        in_ring = valid & (r >= lo * rmax[:, None]) & (r < hi * rmax[:, None])
        rc = np.maximum(in_ring.sum(axis=1), 1)
        rings.append(np.abs(np.where(in_ring, hc, 0.0)).sum(axis=1) / rc)
    scale = np.maximum(rmax, 1e-300)
    block = np.stack([
        sd / scale, absmean / scale,
        np.clip(skew, 0.0, 10.0), np.clip(kurt, 0.0, 30.0) / 10.0,
        rings[0] / scale, rings[1] / scale, rings[2] / scale,
    ], axis=1)
    return block


def _tile_plain(base: np.ndarray, dim: int) -> np.ndarray:
    """Tile columns (sign-alternating) to dim without row normalization."""
    n, width = base.shape
    reps = -(-dim // width)
    signs = np.array([(-1.0) ** r for r in range(reps)])
    tiled = (base[:, None, :] * signs[None, :, None]).reshape(n, reps * width)
    return tiled[:, :dim] / np.sqrt(reps)


def build_pyramid(cloud: PointCloud, cfg: PyramidConfig | None = None) -> Pyramid:
    """Three-level pyramid: the input cloud plus two voxel downsamples.

    The fine level is the input unchanged; the mid level merges cells of
    2 * base_cell; the coarse level merges mid centroids at 4 * base_cell.
    Point counts never increase toward the coarse end. Fine descriptors are
    local shape statistics; mid and coarse descriptors concatenate their own
    cell-level statistics with mean/deviation pooling of their children's
    rows, so coarser cells stay distinctive where the surface is textured.
    """
    cfg = cfg or PyramidConfig()
    cell = cfg.base_cell
    if cell is None:
        cell = max(0.025 * cloud.extent, 1e-9)

    fine = cloud
    mid, parent_fine_to_mid = grid_downsample(fine, 2.0 * cell)
    coarse, parent_mid_to_coarse = grid_downsample(mid, 4.0 * cell)

    raw = []
    levels = zip((coarse, mid), cfg.neighbors[:2])
    for c, nb in levels:
        table = knn(c, c, min(nb, len(c)))
        raw.append(describe_base(c, table))

    # fine level: multi-scale shape statistics plus relief moments, so each
    # point carries enough local texture to be individually recognizable
    nb_f = cfg.neighbors[2]
    blocks = []
    for nb in (nb_f, 2 * nb_f, 4 * nb_f):
        table = knn(fine, fine, min(nb, len(fine)))
        blocks.append(describe_base(fine, table))
    blocks.append(relief_block(fine, table))
    fine_vals = _noise_normalize(np.hstack(blocks), fine)

    mid_pool = _pooled_rows(fine_vals, knn(fine, mid, min(32, len(fine))))
    mid_vals = np.hstack([raw[1], mid_pool])
    coarse_pool = _pooled_rows(fine_vals, knn(fine, coarse, min(96, len(fine))))
    coarse_vals = np.hstack([raw[0], coarse_pool])

    feats = [
        FeatureMatrix(_tile_plain(_standardize_columns(coarse_vals), cfg.dims[0]), level=1),
        FeatureMatrix(_tile_plain(_standardize_columns(mid_vals), cfg.dims[1]), level=2),
        FeatureMatrix(_tile_plain(fine_vals, cfg.dims[2]), level=3),
    ]
    return Pyramid(
        clouds=(coarse, mid, fine),
        features=(feats[0], feats[1], feats[2]),
        parent_fine_to_mid=parent_fine_to_mid,
        parent_mid_to_coarse=parent_mid_to_coarse,
    )
