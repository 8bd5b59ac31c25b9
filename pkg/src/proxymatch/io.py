"""ASCII point cloud readers and writers (PLY and XYZ)."""
from __future__ import annotations

import os

import numpy as np

from .geometry import PointCloud


def read_ply(path: str) -> PointCloud:
    """Read an ASCII PLY vertex cloud with x,y,z and optional nx,ny,nz."""
    with open(path, "r", encoding="ascii") as f:
        line = f.readline().strip()
        if line != "ply":
            raise ValueError(f"{path}: not a PLY file")
        fmt = f.readline().strip()
        if not fmt.startswith("format ascii"):
            raise ValueError(f"{path}: only ASCII PLY is supported")
        n_vertex = None
        props: list[str] = []
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: truncated header")
            line = line.strip()
            if line.startswith("comment"):
                continue
            if line.startswith("element vertex"):
                n_vertex = int(line.split()[-1])
            elif line.startswith("element"):
                raise ValueError(f"{path}: unsupported element {line.split()[1]!r}")
            elif line.startswith("property"):
                props.append(line.split()[-1])
            elif line == "end_header":
                break
        if n_vertex is None:
            raise ValueError(f"{path}: missing vertex element")
        for need in ("x", "y", "z"):
            if need not in props:
                raise ValueError(f"{path}: missing property {need!r}")
        rows = np.loadtxt(f, dtype=np.float64, max_rows=n_vertex, ndmin=2)
        if rows.shape != (n_vertex, len(props)):
            raise ValueError(f"{path}: expected {n_vertex} rows of {len(props)} values")
    cols = {name: rows[:, i] for i, name in enumerate(props)}
    pts = np.column_stack([cols["x"], cols["y"], cols["z"]])
    normals = None
    if all(n in cols for n in ("nx", "ny", "nz")):
        normals = np.column_stack([cols["nx"], cols["ny"], cols["nz"]])
        lengths = np.linalg.norm(normals, axis=1)
        # renormalize against ASCII round-off
        ok = lengths > 1e-8
        if not np.all(ok):
            raise ValueError(f"{path}: zero-length normal")
        normals = normals / lengths[:, None]
    return PointCloud(pts, normals)


def write_ply(path: str, cloud: PointCloud) -> None:
    """Write an ASCII PLY file. Deterministic: %.17g floats, fixed order."""
    has_normals = cloud.normals is not None
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    lines += ["property double x", "property double y", "property double z"]
    if has_normals:
        lines += ["property double nx", "property double ny", "property double nz"]
    lines.append("end_header")
    data = cloud.points if not has_normals else np.hstack([cloud.points, cloud.normals])
    for row in data:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_xyz(path: str) -> PointCloud:
    """Read whitespace-separated rows: x y z [nx ny nz]."""
    rows = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if rows.shape[1] not in (3, 6):
        raise ValueError(f"{path}: expected 3 or 6 columns, got {rows.shape[1]}")
    normals = None
    if rows.shape[1] == 6:
        normals = rows[:, 3:6]
        lengths = np.linalg.norm(normals, axis=1)
        if np.any(lengths <= 1e-8):
            raise ValueError(f"{path}: zero-length normal")
        normals = normals / lengths[:, None]
    return PointCloud(rows[:, :3], normals)
