"""Evaluation metrics for rigid assembly predictions.

Distances compare the predicted assembly against the ground-truth assembly
of the same parts; rotation and translation errors compare the pose
parameters directly. Part-accuracy summaries count how many parts land
within fixed per-part distance thresholds.
"""
from __future__ import annotations

import io
import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation as ScipyRotation

from .geometry import PointCloud, RigidTransform

# Per-part accuracy thresholds.
TAU_CD = 0.01
TAU_CRD = 0.1

# Euler readings farther apart than this (degrees) are flagged as unstable.
READING_DIVERGENCE_DEG = 1.0

# Pitch this close to +-90 degrees marks a pose as gimbal-adjacent.
GIMBAL_MARGIN_DEG = 1.0


def _as_points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got {pts.shape}")
    return pts


def chamfer(a, b) -> float:
    """Sum of the two directed mean squared nearest-neighbor distances."""
    pa, pb = _as_points(a), _as_points(b)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise ValueError("empty cloud")
    d_ab, _ = cKDTree(pb).query(pa, k=1)
    d_ba, _ = cKDTree(pa).query(pb, k=1)
    return float(np.mean(d_ab ** 2) + np.mean(d_ba ** 2))


def crd(a, b) -> float:
    """Mean per-point displacement between two aligned orderings.

    Both inputs must list the same underlying points (two poses of one
    object), index-aligned.
    """
    pa, pb = _as_points(a), _as_points(b)
    if pa.shape != pb.shape:
        raise ValueError(
            f"size mismatch: {pa.shape} vs {pb.shape}; inputs must be "
            "index-aligned poses of the same points")
    if pa.shape[0] == 0:
        raise ValueError("empty cloud")
    return float(np.mean(np.linalg.norm(pa - pb, axis=1)))


def assembly_union(parts, poses) -> np.ndarray:
    """Stack every part under its pose into one assembled cloud."""
    if len(parts) != len(poses):
        raise ValueError("parts and poses must align")
    if not parts:
        raise ValueError("empty input")
    return np.vstack([pose.apply(_as_points(part))
                      for part, pose in zip(parts, poses)])


def assembly_chamfer(parts, poses_pred, poses_gt) -> float:
    """Chamfer between the predicted and ground-truth assembled clouds."""
    return chamfer(assembly_union(parts, poses_pred),
                   assembly_union(parts, poses_gt))


def assembly_crd(parts, poses_pred, poses_gt) -> float:
    """Mean per-point displacement between the two assembled clouds."""
    return crd(assembly_union(parts, poses_pred),
               assembly_union(parts, poses_gt))


def euler_xyz_degrees(rotation: np.ndarray) -> np.ndarray:
    """Intrinsic-XYZ Euler triple of a rotation matrix, in degrees."""
    R = np.asarray(rotation, dtype=np.float64)
    if R.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    return ScipyRotation.from_matrix(R).as_euler("XYZ", degrees=True)


def _wrap_degrees(diff: np.ndarray) -> np.ndarray:
    """Wrap angle differences into (-180, 180]."""
    wrapped = (np.asarray(diff, dtype=np.float64) + 180.0) % 360.0 - 180.0
    return np.where(wrapped == -180.0, 180.0, wrapped)


@dataclass(frozen=True)
class RotationErrorInfo:
    """Euler-based rotation error plus stability diagnostics.

    The angle-based alternate reading measures the same discrepancy through
    the rotation angle of the relative rotation; a gap between the readings
    marks regions where the Euler parametrization distorts distances.
    """

    value_deg: float
    angle_reading_deg: float
    gimbal_adjacent: bool
    readings_diverge: bool


def rotation_error_info(rotation_pred: np.ndarray,
                        rotation_gt: np.ndarray) -> RotationErrorInfo:
    e_pred = euler_xyz_degrees(rotation_pred)
    e_gt = euler_xyz_degrees(rotation_gt)
    diff = _wrap_degrees(e_pred - e_gt)
    value = float(np.linalg.norm(diff) / np.sqrt(3.0))

    rel = np.asarray(rotation_pred) @ np.asarray(rotation_gt).T
    cos_theta = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.degrees(np.arccos(cos_theta)) / np.sqrt(3.0))

    pitches = np.array([e_pred[1], e_gt[1]])
    gimbal = bool(np.any(np.abs(np.abs(pitches) - 90.0) < GIMBAL_MARGIN_DEG))
    diverge = bool(abs(value - angle) > READING_DIVERGENCE_DEG)
    return RotationErrorInfo(value_deg=value, angle_reading_deg=angle,
                             gimbal_adjacent=gimbal, readings_diverge=diverge)


def rmse_rotation(rotation_pred: np.ndarray, rotation_gt: np.ndarray) -> float:
    """Euler-triple RMSE in degrees: ||wrapped(e_pred - e_gt)||_2 / sqrt(3)."""
    return rotation_error_info(rotation_pred, rotation_gt).value_deg


def rmse_translation(t_pred: np.ndarray, t_gt: np.ndarray) -> float:
    """||t_pred - t_gt||_2 / sqrt(3)."""
    tp = np.asarray(t_pred, dtype=np.float64).reshape(3)
    tg = np.asarray(t_gt, dtype=np.float64).reshape(3)
    return float(np.linalg.norm(tp - tg) / np.sqrt(3.0))


def part_accuracy(parts, poses_pred, poses_gt, mode: str = "cd") -> float:
    """Percentage of parts within the per-part distance threshold.

    mode "cd": chamfer between the two poses of each part, threshold TAU_CD.
    mode "crd": mean per-point displacement, threshold TAU_CRD.
    """
    if mode not in ("cd", "crd"):
        raise ValueError("mode must be 'cd' or 'crd'")
    if not (len(parts) == len(poses_pred) == len(poses_gt)):
        raise ValueError("parts and pose lists must align")
    if not parts:
        raise ValueError("empty input")
    hits = 0
    for part, tp, tg in zip(parts, poses_pred, poses_gt):
        pts = _as_points(part)
        a, b = tp.apply(pts), tg.apply(pts)
        if mode == "cd":
            ok = chamfer(a, b) < TAU_CD
        else:
            ok = crd(a, b) < TAU_CRD
        hits += bool(ok)
    return 100.0 * hits / len(parts)


@dataclass(frozen=True)
class MetricBundle:
    """One evaluation row: assembly distances, pose errors, part accuracy."""

    cd: float
    crd: float
    rmse_r: float           # degrees
    rmse_t: float
    pa_cd: float            # percent
    pa_crd: float           # percent
    rotation_flags: tuple[RotationErrorInfo, ...] = field(default=(),
                                                          compare=False)

    def __post_init__(self):
        for name in ("cd", "crd", "rmse_r", "rmse_t"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("pa_cd", "pa_crd"):
            if not 0.0 <= getattr(self, name) <= 100.0:
                raise ValueError(f"{name} must be within [0, 100]")

    def to_dict(self) -> dict:
        return {
            "cd": self.cd, "crd": self.crd,
            "rmse_r_deg": self.rmse_r, "rmse_t": self.rmse_t,
            "pa_cd_pct": self.pa_cd, "pa_crd_pct": self.pa_crd,
        }


def evaluate_poses(parts, poses_pred, poses_gt, anchor: int = 0) -> MetricBundle:
    """Score predicted part poses against ground truth.

    Assembly distances compare the posed unions; rotation/translation RMSE
    averages over the non-anchor parts (the anchor pose is fixed, not
    predicted). Both pose lists must be anchored the same way.
    """
    if not (len(parts) == len(poses_pred) == len(poses_gt)):
        raise ValueError("parts and pose lists must align")
    if not 0 <= anchor < len(parts):
        raise ValueError("anchor out of range")
    cd_val = assembly_chamfer(parts, poses_pred, poses_gt)
    crd_val = assembly_crd(parts, poses_pred, poses_gt)
    infos = []
    r_errs, t_errs = [], []
    for i, (tp, tg) in enumerate(zip(poses_pred, poses_gt)):
        if i == anchor:
            continue
        info = rotation_error_info(tp.rotation, tg.rotation)
        infos.append(info)
        r_errs.append(info.value_deg)
        t_errs.append(rmse_translation(tp.translation, tg.translation))
    return MetricBundle(
        cd=cd_val, crd=crd_val,
        rmse_r=float(np.mean(r_errs)) if r_errs else 0.0,
        rmse_t=float(np.mean(t_errs)) if t_errs else 0.0,
        pa_cd=part_accuracy(parts, poses_pred, poses_gt, "cd"),
        pa_crd=part_accuracy(parts, poses_pred, poses_gt, "crd"),
        rotation_flags=tuple(infos),
    )


CSV_COLUMNS = ("label", "crd_x1e2", "cd_x1e3", "rmse_r_deg", "rmse_t_x1e2",
               "pa_cd_pct", "pa_crd_pct")


def metrics_csv(rows: dict[str, MetricBundle] | list[tuple[str, MetricBundle]]
                ) -> str:
    """Render labeled metric bundles as CSV in reporting units.

    Reporting units scale CRD by 1e2, CD by 1e3 and RMSE(T) by 1e2;
    RMSE(R) stays in degrees and part accuracies in percent.
    """
    if isinstance(rows, dict):
        rows = list(rows.items())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for label, m in rows:
        writer.writerow([
            label,
            f"{m.crd * 100.0:.6g}",
            f"{m.cd * 1000.0:.6g}",
            f"{m.rmse_r:.6g}",
            f"{m.rmse_t * 100.0:.6g}",
            f"{m.pa_cd:.6g}",
            f"{m.pa_crd:.6g}",
        ])
    return buf.getvalue()
