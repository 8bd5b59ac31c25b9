"""Synthetic fractured shapes with exact ground-truth poses.

A closed base surface is sampled uniformly by area, then split by a
sequence of (optionally height-jittered) planes, largest piece first. Cut
faces are sampled too, independently for each side, at the same areal
density as the outer surface, so mating surfaces carry matchable geometry.
Every part except the largest is perturbed by a random rigid motion; the
inverse perturbations are the ground truth.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, RigidTransform, random_rotation
from .io import write_ply

SHAPES = ("sphere", "box", "ellipsoid", "superquadric")
CUT_TYPES = ("plane", "jittered-plane")
MIN_PART_POINTS = 50
MAX_CUT_RETRIES = 20


@dataclass(frozen=True)
class FractureSpec:
    shape: str = "sphere"
    parts: int = 2
    cut: str = "jittered-plane"
    amplitude: float = 0.03
    frequency: float = 4.0
    total_points: int = 5000
    perturb: bool = True
    translation_range: float = 0.5
    seed: int = 0
    sq_e1: float = 0.8          # superquadric exponents
    sq_e2: float = 0.8

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        if not 2 <= self.parts <= 20:
            raise ValueError("parts must be within 2..20")
        if self.cut not in CUT_TYPES:
            raise ValueError(f"cut must be one of {CUT_TYPES}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.total_points < 200:
            raise ValueError("total_points too small")
        if self.translation_range < 0:
            raise ValueError("translation_range must be >= 0")

    def to_dict(self) -> dict:
        return {
            "shape": self.shape, "parts": self.parts, "cut": self.cut,
            "amplitude": self.amplitude, "frequency": self.frequency,
            "total_points": self.total_points, "perturb": self.perturb,
            "translation_range": self.translation_range, "seed": self.seed,
            "sq_e1": self.sq_e1, "sq_e2": self.sq_e2,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FractureSpec":
        return cls(**d)


@dataclass(frozen=True)
class FractureSample:
    parts: tuple[PointCloud, ...]      # posed part clouds
    poses: tuple[RigidTransform, ...]  # map each posed part into anchor frame
    anchor: int
    originals: tuple[PointCloud, ...]  # pre-perturbation part clouds
    spec: FractureSpec
    cuts: tuple["CutSurface", ...] = ()  # fracture surfaces, original frame


@dataclass(frozen=True)
class CutSurface:
    """A plane with an optional sinusoidal height field along its normal.

    The height field sums a few sinusoidal modes with random in-plane
    orientations, frequencies near the nominal one, and random phases.
    Mixing incommensurate modes keeps the relief aperiodic, so every
    neighborhood of the mating surface is locally unique; a single
    separable mode would repeat on a lattice and leave the two faces
    self-similar under wavelength shifts. Coefficients are normalized so
    the total displacement never exceeds the amplitude.
    """

    origin: np.ndarray
    normal: np.ndarray     # unit
    u: np.ndarray          # in-plane basis
    v: np.ndarray
    amplitude: float
    frequency: float
    wave_a: np.ndarray     # (K,) in-plane wave-vector components along u
    wave_b: np.ndarray     # (K,) components along v
    phases: np.ndarray     # (K,)
    coeffs: np.ndarray     # (K,) signed, sum of |coeffs| == amplitude

    def height(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.amplitude == 0.0:
            return np.zeros_like(a)
        args = (np.outer(a, self.wave_a) + np.outer(b, self.wave_b)
                + self.phases)
        return np.sin(args) @ self.coeffs

    def signed(self, pts: np.ndarray) -> np.ndarray:
        """Positive above the (jittered) surface, negative below."""
        rel = pts - self.origin
        a = rel @ self.u
        b = rel @ self.v
        return rel @ self.normal - self.height(a, b)

    def embed(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """3-D points of the surface at in-plane coordinates (a, b)."""
        h = self.height(a, b)
        return (self.origin + np.outer(a, self.u) + np.outer(b, self.v)
                + np.outer(h, self.normal))

    def surface_normal(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Unit normals of the height-field surface, oriented along +normal."""
        if self.amplitude == 0.0:
            return np.tile(self.normal, (a.shape[0], 1))
        args = (np.outer(a, self.wave_a) + np.outer(b, self.wave_b)
                + self.phases)
        grad = np.cos(args) * self.coeffs
        da = grad @ self.wave_a
        db = grad @ self.wave_b
        n = self.normal[None, :] - da[:, None] * self.u[None, :] - db[:, None] * self.v[None, :]
        return n / np.linalg.norm(n, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# base surfaces: triangle meshes plus implicit inside tests


def _icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return verts, faces


def _icosphere(subdivisions: int = 4):
    verts, faces = _icosahedron()
    verts = [v for v in verts]
    cache: dict = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key in cache:
            return cache[key]
        m = verts[i] + verts[j]
        m /= np.linalg.norm(m)
        verts.append(m)
        cache[key] = len(verts) - 1
        return cache[key]

    for _ in range(subdivisions):
        new_faces = []
        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.array(new_faces, dtype=np.int64)
    return np.array(verts), faces


def _box_mesh(h):
    hx, hy, hz = h
    corners = np.array([
        [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
        [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
    ])
    quads = [
        [0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4],
        [2, 3, 7, 6], [1, 2, 6, 5], [3, 0, 4, 7],
    ]
    faces = []
    for q in quads:
        faces += [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
    return corners, np.array(faces, dtype=np.int64)


def _superquadric_radius(units: np.ndarray, e1: float, e2: float) -> np.ndarray:
    x, y, z = np.abs(units[:, 0]), np.abs(units[:, 1]), np.abs(units[:, 2])
    f = (x ** (2.0 / e2) + y ** (2.0 / e2)) ** (e2 / e1) + z ** (2.0 / e1)
    return np.where(f > 0, f ** (-e1 / 2.0), 1.0)


def _base_mesh(spec: FractureSpec):
    """Triangle mesh plus an inside(points) predicate for the base shape."""
    if spec.shape == "box":
        h = np.array([0.5, 0.35, 0.25])
        verts, faces = _box_mesh(h)
        inside = lambda p: np.all(np.abs(p) <= h + 1e-12, axis=1)
        return verts, faces, inside
    verts, faces = _icosphere(4)
    if spec.shape == "sphere":
        scale = np.array([0.5, 0.5, 0.5])
        verts = verts * scale
        inside = lambda p: np.linalg.norm(p / scale, axis=1) <= 1.0 + 1e-12
    elif spec.shape == "ellipsoid":
        scale = np.array([0.5, 0.375, 0.25])
        verts = verts * scale
        inside = lambda p: np.linalg.norm(p / scale, axis=1) <= 1.0 + 1e-12
    else:  # superquadric
        scale = np.array([0.5, 0.4, 0.3])
        r = _superquadric_radius(verts, spec.sq_e1, spec.sq_e2)
        verts = verts * r[:, None] * scale
        e1, e2 = spec.sq_e1, spec.sq_e2

        def inside(p, _e1=e1, _e2=e2, _s=scale):
            q = np.abs(p / _s)
            f = ((q[:, 0] ** (2.0 / _e2) + q[:, 1] ** (2.0 / _e2)) ** (_e2 / _e1)
                 + q[:, 2] ** (2.0 / _e1))
            return f <= 1.0 + 1e-9
    return verts, faces, inside


def _face_areas_normals(verts, faces):
    a = verts[faces[:, 0]]
    b = verts[faces[:, 1]]
    c = verts[faces[:, 2]]
    cross = np.cross(b - a, c - a)
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    normals = np.zeros_like(cross)
    ok = areas > 0
    normals[ok] = cross[ok] / (2.0 * areas[ok, None])
    # orient outward (all base shapes are star-shaped about the origin)
    centroid = (a + b + c) / 3.0
    flip = np.einsum("ij,ij->i", normals, centroid) < 0
    normals[flip] *= -1.0
    return areas, normals


def _sample_mesh(rng, verts, faces, areas, normals, count):
    """Area-uniform surface samples with face normals."""
    if count <= 0:
        return np.zeros((0, 3)), np.zeros((0, 3))
    probs = areas / areas.sum()
    picks = rng.choice(areas.shape[0], size=count, p=probs)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    a = verts[faces[picks, 0]]
    b = verts[faces[picks, 1]]
    c = verts[faces[picks, 2]]
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return pts, normals[picks]


# ---------------------------------------------------------------------------
# BSP cutting


def _leaf_signs(leaf: list, pts: np.ndarray, cuts: list) -> np.ndarray:
    """Boolean membership of pts in the cell described by (cut_idx, sign)."""
    ok = np.ones(pts.shape[0], dtype=bool)
    for cut_idx, sign in leaf:
        s = cuts[cut_idx].signed(pts)
        ok &= (s >= 0) if sign > 0 else (s < 0)
    return ok


def _make_cut(rng, spec: FractureSpec, cell_pts: np.ndarray) -> CutSurface:
    centroid = cell_pts.mean(axis=0)
    span = cell_pts.max(axis=0) - cell_pts.min(axis=0)
    jitter = rng.normal(size=3) * 0.1 * np.linalg.norm(span)
    normal = rng.normal(size=3)
    normal /= np.linalg.norm(normal)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(normal[0]) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    u = np.cross(normal, helper)
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    amplitude = spec.amplitude if spec.cut == "jittered-plane" else 0.0
    n_modes = 3
    theta = rng.uniform(0, 2 * np.pi, size=n_modes)
    freqs = spec.frequency * rng.uniform(0.7, 1.4, size=n_modes)
    phases = rng.uniform(0, 2 * np.pi, size=n_modes)
    raw = rng.uniform(0.5, 1.0, size=n_modes) * rng.choice([-1.0, 1.0], size=n_modes)
    coeffs = (amplitude * raw / np.abs(raw).sum()) if amplitude > 0 else np.zeros(n_modes)
    wave = 2 * np.pi * freqs
    return CutSurface(centroid + jitter, normal, u, v, amplitude,
                      spec.frequency, wave * np.cos(theta),
                      wave * np.sin(theta), phases, coeffs)


def _sample_cut_face(rng, cut: CutSurface, inside, leaf, cuts,
                     bound_pts: np.ndarray, density: float):
    """Points on the cut surface inside the shape and the given cell.

    One jittered sample per grid cell of side 1/sqrt(density): expected
    counts stay area-proportional while the worst gap between two
    independent samplings of the same face is bounded by the cell diagonal,
    which keeps mating surfaces overlapping at sampling resolution.
    """
    rel = bound_pts - cut.origin
    a = rel @ cut.u
    b = rel @ cut.v
    margin = 0.05 * max(np.ptp(a), np.ptp(b)) + cut.amplitude + 1e-6
    lo_a, hi_a = a.min() - margin, a.max() + margin
    lo_b, hi_b = b.min() - margin, b.max() + margin
    if hi_a <= lo_a or hi_b <= lo_b or density <= 0:
        return np.zeros((0, 3)), np.zeros((0, 3))

    cell = 1.0 / np.sqrt(density)
    n_a = int(np.ceil((hi_a - lo_a) / cell))
    n_b = int(np.ceil((hi_b - lo_b) / cell))
    if n_a * n_b > 4_000_000:
        raise RuntimeError("cut-face sampling grid too large")
    ia, ib = np.meshgrid(np.arange(n_a), np.arange(n_b), indexing="ij")
    jitter = rng.random((n_a * n_b, 2))
    ca = lo_a + (ia.ravel() + jitter[:, 0]) * cell
    cb = lo_b + (ib.ravel() + jitter[:, 1]) * cell
    pts = cut.embed(ca, cb)
    ok = inside(pts) & _leaf_signs(leaf, pts, cuts)
    return pts[ok], cut.surface_normal(ca[ok], cb[ok])


def generate(spec: FractureSpec) -> FractureSample:
    """Build one fractured sample with exact ground truth."""
    rng = np.random.default_rng(spec.seed)
    verts, faces, inside = _base_mesh(spec)
    areas, face_normals = _face_areas_normals(verts, faces)
    base_area = float(areas.sum())

    # probe pool drives the cut choices and balance estimates
    pool_n = max(4000, 4 * spec.total_points // 5)
    pool, _ = _sample_mesh(rng, verts, faces, areas, face_normals, pool_n)

    cuts: list[CutSurface] = []
    leaves: list[list] = [[]]
    pool_members = [np.arange(pool_n)]
    min_pool = int(np.ceil(60.0 * pool_n / spec.total_points))
    for _ in range(spec.parts - 1):
        # split the cell with the most pool points (ties to the lowest index)
        sizes = [m.size for m in pool_members]
        cell = int(np.argmax(sizes))
        parent_leaf = leaves[cell]
        parent_members = pool_members[cell]
        ok_cut = None
        for _attempt in range(1 + MAX_CUT_RETRIES):
            cand = _make_cut(rng, spec, pool[parent_members])
            s = cand.signed(pool[parent_members])
            n_pos = int((s >= 0).sum())
            n_neg = parent_members.size - n_pos
            if n_pos >= min_pool and n_neg >= min_pool:
                ok_cut = cand
                break
        if ok_cut is None:
            raise RuntimeError(
                f"could not find a balanced cut after {MAX_CUT_RETRIES} retries")
        cut_idx = len(cuts)
        cuts.append(ok_cut)
        s = ok_cut.signed(pool[parent_members])
        leaves[cell] = parent_leaf + [(cut_idx, 1)]
        leaves.append(parent_leaf + [(cut_idx, -1)])
        pool_members[cell] = parent_members[s >= 0]
        pool_members.append(parent_members[s < 0])

    # measure cut-face areas with a probe pass to set the shared density
    probe_rng = np.random.default_rng(rng.integers(2 ** 63))
    cut_parents = []
    for idx in range(len(cuts)):
        # the cell a cut split is described by the constraints older than it,
        # a shared prefix of every leaf descending from that cut
        descendant = next(lf for lf in leaves if any(c == idx for c, _ in lf))
        cut_parents.append([c for c in descendant if c[0] < idx])

    density0 = spec.total_points / base_area
    face_areas = []
    for idx, cut in enumerate(cuts):
        sub = pool[_leaf_signs(cut_parents[idx], pool, cuts)]
        if sub.shape[0] < 8:
            face_areas.append(0.0)
            continue
        pts, _ = _sample_cut_face(
            probe_rng, cut, inside, cut_parents[idx], cuts, sub, density0)
        face_areas.append(pts.shape[0] / max(density0, 1e-12))
    total_area = base_area + 2.0 * float(np.sum(face_areas))
    density = spec.total_points / total_area

    # final surface sampling at the shared density
    n_base = int(round(density * base_area))
    base_pts, base_nrm = _sample_mesh(rng, verts, faces, areas, face_normals, n_base)

    part_pts = [[] for _ in leaves]
    part_nrm = [[] for _ in leaves]
    for li, leaf in enumerate(leaves):
        sel = _leaf_signs(leaf, base_pts, cuts)
        part_pts[li].append(base_pts[sel])
        part_nrm[li].append(base_nrm[sel])

    for idx, cut in enumerate(cuts):
        parent = cut_parents[idx]
        sub = pool[_leaf_signs(parent, pool, cuts)]
        if sub.shape[0] < 8:
            continue
        for side in (1, -1):
            pts, nrm = _sample_cut_face(rng, cut, inside, parent, cuts, sub, density)
            if pts.shape[0] == 0:
                continue
            # outward normal points away from the owning side
            nrm_signed = -side * nrm
            # route each point to the leaf cell on this side of the cut
            for li, leaf in enumerate(leaves):
                if (idx, side) not in leaf:
                    continue
                rest = [c for c in leaf if c != (idx, side)]
                sel = _leaf_signs(rest, pts, cuts)
                if sel.any():
                    part_pts[li].append(pts[sel])
                    part_nrm[li].append(nrm_signed[sel])

    originals = []
    for li in range(len(leaves)):
        pts = np.vstack(part_pts[li])
        nrm = np.vstack(part_nrm[li])
        if pts.shape[0] < MIN_PART_POINTS:
            raise RuntimeError(
                f"part {li} has {pts.shape[0]} points (< {MIN_PART_POINTS})")
        originals.append(PointCloud(pts, nrm))

    counts = [len(c) for c in originals]
    anchor = int(np.argmax(counts))

    posed = []
    poses = []
    for li, cloud in enumerate(originals):
        if spec.perturb and li != anchor:
            rot = random_rotation(rng)
            t = rng.uniform(-spec.translation_range, spec.translation_range, size=3)
            T = RigidTransform(rot, t)
            moved = PointCloud(T.apply(cloud.points),
                               cloud.normals @ rot.T if cloud.normals is not None else None)
            posed.append(moved)
            poses.append(T.inverse())
        else:
            posed.append(cloud)
            poses.append(RigidTransform.identity())
    return FractureSample(tuple(posed), tuple(poses), anchor,
                          tuple(originals), spec, tuple(cuts))


def reassemble_check(sample: FractureSample) -> float:
    """Max deviation after mapping every posed part back by its GT pose."""
    worst = 0.0
    for cloud, pose, original in zip(sample.parts, sample.poses, sample.originals):
        back = pose.apply(cloud.points)
        worst = max(worst, float(np.abs(back - original.points).max()))
    return worst


def write_sample(dir_path: str, sample: FractureSample) -> None:
    """part_<i>.ply files plus gt.json with poses mapping into anchor frame."""
    os.makedirs(dir_path, exist_ok=True)
    for i, cloud in enumerate(sample.parts):
        write_ply(os.path.join(dir_path, f"part_{i}.ply"), cloud)
    gt = {
        "anchor": sample.anchor,
        "poses": [
            {
                "part": i,
                "R": [float(v) for v in pose.rotation.ravel()],
                "t": [float(v) for v in pose.translation],
            }
            for i, pose in enumerate(sample.poses)
        ],
        "spec": sample.spec.to_dict(),
        "seed": sample.spec.seed,
    }
    tmp = os.path.join(dir_path, "gt.json.tmp")
    with open(tmp, "w", encoding="ascii") as f:
        json.dump(gt, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, os.path.join(dir_path, "gt.json"))


def read_sample(dir_path: str) -> tuple[list[PointCloud], dict]:
    """Load part clouds and the ground-truth record from a sample dir."""
    from .io import read_ply

    with open(os.path.join(dir_path, "gt.json"), "r", encoding="ascii") as f:
        gt = json.load(f)
    clouds = []
    i = 0
    while True:
        path = os.path.join(dir_path, f"part_{i}.ply")
        if not os.path.exists(path):
            break
        clouds.append(read_ply(path))
        i += 1
    if not clouds:
        raise FileNotFoundError(f"no part_<i>.ply files in {dir_path}")
    return clouds, gt
