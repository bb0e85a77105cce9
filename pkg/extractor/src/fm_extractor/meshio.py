"""Wavefront OBJ loading and labeled surface sampling.

Faces inherit the active ``g``/``o`` group name; groups become part labels in
declaration order.  Sampling is area-weighted with barycentric coordinates
and per-face normals, then normalized to a unit bounding-box diagonal
centered at the origin (the coordinate convention the downstream pipeline
expects).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) vertex indices, triangulated
    face_labels: np.ndarray  # (F,) group index
    group_names: list[str]


@dataclass
class SampledCloud:
    positions: np.ndarray  # (N, 3), normalized space
    normals: np.ndarray  # (N, 3)
    labels: np.ndarray  # (N,)
    group_names: list[str]


def load_obj(path: Path | str) -> Mesh:
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    face_labels: list[int] = []
    groups: list[str] = []
    current = None
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "v":
            vertices.append([float(x) for x in parts[1:4]])
        elif parts[0] in ("g", "o"):
            name = parts[1] if len(parts) > 1 else "default"
            if name not in groups:
                groups.append(name)
            current = groups.index(name)
        elif parts[0] == "f":
            ids = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
            if current is None:
                if "default" not in groups:
                    groups.append("default")
                current = groups.index("default")
            for k in range(1, len(ids) - 1):  # fan-triangulate
                faces.append([ids[0], ids[k], ids[k + 1]])
                face_labels.append(current)
    if not faces:
        raise ValueError(f"{path}: no faces")
    return Mesh(
        vertices=np.asarray(vertices, dtype=np.float64),
        faces=np.asarray(faces, dtype=np.int64),
        face_labels=np.asarray(face_labels, dtype=np.int64),
        group_names=groups,
    )


def sample_surface(mesh: Mesh, num_points: int, seed: int = 0) -> SampledCloud:
    """Area-weighted samples with face normals and group labels, normalized."""
    tri = mesh.vertices[mesh.faces]  # (F, 3, 3)
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    keep = areas > 1e-14
    tri, cross, areas = tri[keep], cross[keep], areas[keep]
    labels_f = mesh.face_labels[keep]
    normals_f = cross / np.linalg.norm(cross, axis=1, keepdims=True)

    rng = np.random.default_rng(seed)
    pick = rng.choice(len(areas), size=num_points, p=areas / areas.sum())
    r1 = np.sqrt(rng.uniform(size=num_points))
    r2 = rng.uniform(size=num_points)
    a, b, c = tri[pick, 0], tri[pick, 1], tri[pick, 2]
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c

    mins, maxs = pts.min(axis=0), pts.max(axis=0)
    diag = float(np.linalg.norm(maxs - mins))
    if diag < 1e-12:
        raise ValueError("degenerate mesh: zero bounding diagonal")
    pts = (pts - 0.5 * (mins + maxs)) / diag
    return SampledCloud(
        positions=pts.astype(np.float32).astype(np.float64),
        normals=normals_f[pick].astype(np.float32).astype(np.float64),
        labels=labels_f[pick],
        group_names=mesh.group_names,
    )
