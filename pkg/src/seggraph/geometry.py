"""Point clouds, pinhole cameras, and point-splat visibility.

Clouds are normalized to a unit bounding-box diagonal centered at the origin
so that metric thresholds elsewhere in the pipeline (adjacency distance,
z-buffer tolerance) are scale-free.  Visibility uses a 2x2 pixel splat
z-buffer with a depth tolerance, since raw point clouds are not watertight
and a one-pixel buffer over-culls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, ProjectionSingularError

DEFAULT_RADIUS = 2.2
DEFAULT_RESOLUTION = (518, 518)
DEFAULT_FOV_DEG = 30.0
DEFAULT_SPLAT = 2
DEFAULT_EPS_Z = 0.01


@dataclass(frozen=True)
class PointCloud:
    positions: np.ndarray  # (N, 3)
    normals: np.ndarray  # (N, 3), unit length
    colors: np.ndarray | None = None  # (N, 3) in [0, 1]
    labels: np.ndarray | None = None  # (N,) in [-1, k)
    category: str = ""
    k: int = 0

    def __post_init__(self):
        if self.positions.ndim != 2 or self.positions.shape[1] != 3 or len(self.positions) < 1:
            raise DegenerateGeometryError(f"positions must be (N, 3) with N >= 1, got {self.positions.shape}")
        if self.normals.shape != self.positions.shape:
            raise DegenerateGeometryError("normals must match positions shape")
        norms = np.linalg.norm(self.normals, axis=1)
        if not np.all(np.abs(norms - 1.0) <= 1e-4):
            worst = float(np.abs(norms - 1.0).max())
            raise DegenerateGeometryError(f"normals must be unit length (worst deviation {worst:.2e})")
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.min(initial=0) < -1 or (self.k > 0 and lab.max(initial=-1) >= self.k):
                raise DegenerateGeometryError("labels must lie in [-1, k)")

    @property
    def num_points(self) -> int:
        return len(self.positions)

    def bounding_diagonal(self) -> float:
        span = self.positions.max(axis=0) - self.positions.min(axis=0)
        return float(np.linalg.norm(span))

    def assert_normalized(self, tol: float = 1e-6) -> None:
        center = 0.5 * (self.positions.max(axis=0) + self.positions.min(axis=0))
        if abs(self.bounding_diagonal() - 1.0) > tol or np.abs(center).max() > tol:
            raise DegenerateGeometryError("cloud is not normalized to a unit diagonal at the origin")


@dataclass(frozen=True)
class CameraView:
    view_id: int
    position: np.ndarray  # (3,)
    look_at: np.ndarray  # (3,)
    up: np.ndarray  # (3,)
    focal: float  # pixels
    principal_point: np.ndarray  # (2,) pixels
    resolution: tuple[int, int]  # (W, H)

    def __post_init__(self):
        if self.resolution[0] <= 0 or self.resolution[1] <= 0:
            raise DegenerateGeometryError("resolution components must be positive")
        fwd = np.asarray(self.look_at, dtype=np.float64) - np.asarray(self.position, dtype=np.float64)
        if np.linalg.norm(fwd) < 1e-12:
            raise DegenerateGeometryError("camera position equals look_at")
        fwd = fwd / np.linalg.norm(fwd)
        up = np.asarray(self.up, dtype=np.float64)
        if np.linalg.norm(np.cross(fwd, up)) < 1e-9:
            raise DegenerateGeometryError("up vector is parallel to the view direction")

    def frame(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal (right, down, forward) axes of the camera."""
        forward = self.look_at - self.position
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, self.up)
        right = right / np.linalg.norm(right)
        down = np.cross(forward, right)
        return right, down, forward


@dataclass(frozen=True)
class VisibilityMap:
    view_id: int
    pixel_owner: np.ndarray  # (H, W) int32, point id or -1
    u: np.ndarray  # (N,) projected column coordinate
    v: np.ndarray  # (N,) projected row coordinate
    depth: np.ndarray  # (N,) distance along the view axis
    visible: np.ndarray  # (N,) bool

    @property
    def num_visible(self) -> int:
        return int(self.visible.sum())


def normalize_cloud(
    raw_positions: np.ndarray,
    normals: np.ndarray,
    colors: np.ndarray | None = None,
    labels: np.ndarray | None = None,
    category: str = "",
    k: int = 0,
) -> PointCloud:
    """Translate and uniformly scale a cloud to a unit bbox diagonal at the origin."""
    pts = np.asarray(raw_positions, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 1:
        raise DegenerateGeometryError(f"positions must be (N, 3) with N >= 1, got {pts.shape}")
    nrm = np.asarray(normals, dtype=np.float64)
    if not np.all(np.isfinite(nrm)):
        raise DegenerateGeometryError("normals must be finite")
    lens = np.linalg.norm(nrm, axis=1)
    if np.any(lens < 1e-12):
        raise DegenerateGeometryError("zero-length normal cannot be renormalized")
    nrm = nrm / lens[:, None]

    mins, maxs = pts.min(axis=0), pts.max(axis=0)
    diag = float(np.linalg.norm(maxs - mins))
    if diag < 1e-12:
        raise DegenerateGeometryError("all points coincide; bounding diagonal is zero")
    center = 0.5 * (mins + maxs)
    pts = (pts - center) / diag
    return PointCloud(
        positions=pts,
        normals=nrm,
        colors=None if colors is None else np.asarray(colors, dtype=np.float64),
        labels=None if labels is None else np.asarray(labels, dtype=np.int64),
        category=category,
        k=k,
    )


def _fibonacci_directions(m: int) -> np.ndarray:
    if m == 1:
        return np.array([[0.0, 0.0, 1.0]])
    i = np.arange(m, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / m
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def make_cameras(
    m: int,
    radius: float = DEFAULT_RADIUS,
    resolution: tuple[int, int] = DEFAULT_RESOLUTION,
    fov_deg: float = DEFAULT_FOV_DEG,
) -> list[CameraView]:
    """Place m cameras on a Fibonacci sphere, all looking at the origin.

    Deterministic for a fixed m.  A single camera sits at (0, 0, radius).
    """
    if m < 1:
        raise DegenerateGeometryError("need at least one camera")
    w, h = resolution
    focal = (w / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
    pp = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    cams = []
    for view_id, d in enumerate(_fibonacci_directions(m)):
        # view direction is -d; fall back to +x up when it runs along the y axis
        up = np.array([1.0, 0.0, 0.0]) if 1.0 - abs(d[1]) < 1e-3 else np.array([0.0, 1.0, 0.0])
        cams.append(
            CameraView(
                view_id=view_id,
                position=radius * d,
                look_at=np.zeros(3),
                up=up,
                focal=focal,
                principal_point=pp,
                resolution=(w, h),
            )
        )
    return cams


def project_points(camera: CameraView, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized pinhole projection.

    Returns (u, v, depth); u/v are only meaningful where depth > 0.
    """
    right, down, forward = camera.frame()
    rel = np.atleast_2d(pts) - camera.position
    depth = rel @ forward
    safe = np.where(np.abs(depth) < 1e-300, 1.0, depth)
    u = camera.principal_point[0] + camera.focal * (rel @ right) / safe
    v = camera.principal_point[1] + camera.focal * (rel @ down) / safe
    return u, v, depth


def project_point(camera: CameraView, p: np.ndarray) -> tuple[float, float, float]:
    """Project one point; raises if it coincides with the camera center plane."""
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ProjectionSingularError("point must be finite")
    u, v, depth = project_points(camera, p[None, :])
    if abs(float(depth[0])) < 1e-12:
        raise ProjectionSingularError("point lies in the camera plane (zero view-axis depth)")
    return float(u[0]), float(v[0]), float(depth[0])


def _footprint_starts(coord: np.ndarray, splat: int) -> np.ndarray:
    # the splat nearest integer pixel coordinates to `coord`
    return np.ceil(coord - splat / 2.0).astype(np.int64)


def rasterize_visibility(
    cloud: PointCloud,
    camera: CameraView,
    splat: int = DEFAULT_SPLAT,
    eps_z: float = DEFAULT_EPS_Z,
) -> VisibilityMap:
    """Splat points into a z-buffer and mark occlusion-culled points invisible.

    A point is visible iff it lies in front of the camera, covers at least one
    in-bounds pixel, and its depth is within ``eps_z`` of the nearest depth
    over every point sharing any of its covered pixels.
    """
    w, h = camera.resolution
    n = cloud.num_points
    u, v, depth = project_points(camera, cloud.positions)

    front = depth > 0
    c0 = _footprint_starts(u, splat)
    r0 = _footprint_starts(v, splat)

    flat = np.full(h * w, np.inf)
    offsets = [(dr, dc) for dr in range(splat) for dc in range(splat)]
    pix_idx = []
    pix_ok = []
    for dr, dc in offsets:
        rr, cc = r0 + dr, c0 + dc
        ok = front & (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        idx = np.where(ok, rr * w + cc, 0)
        np.minimum.at(flat, idx[ok], depth[ok])
        pix_idx.append(idx)
        pix_ok.append(ok)

    # nearest competitor over each point's covered pixels
    best = np.full(n, np.inf)
    covered = np.zeros(n, dtype=bool)
    for idx, ok in zip(pix_idx, pix_ok):
        vals = np.where(ok, flat[idx], np.inf)
        best = np.minimum(best, vals)
        covered |= ok
    visible = front & covered & (depth <= best + eps_z)

    # deterministic owner: smallest (depth, id) among visible points covering a pixel
    owner = np.full(h * w, -1, dtype=np.int32)
    vis_ids = np.flatnonzero(visible)
    if len(vis_ids):
        rank = vis_ids[np.lexsort((vis_ids, depth[vis_ids]))]
        rank_pos = np.arange(len(rank))
        all_pix = []
        all_rank = []
        for idx, ok in zip(pix_idx, pix_ok):
            sel = ok[rank]
            all_pix.append(idx[rank][sel])
            all_rank.append(rank_pos[sel])
        pix = np.concatenate(all_pix)
        rnk = np.concatenate(all_rank)
        order = np.lexsort((rnk, pix))
        pix, rnk = pix[order], rnk[order]
        first = np.unique(pix, return_index=True)[1]
        owner[pix[first]] = rank[rnk[first]].astype(np.int32)

    return VisibilityMap(
        view_id=camera.view_id,
        pixel_owner=owner.reshape(h, w),
        u=u,
        v=v,
        depth=depth,
        visible=visible,
    )


def rounded_pixels(vis: VisibilityMap) -> tuple[np.ndarray, np.ndarray]:
    """Half-up rounded (row, col) pixel coordinates for every point."""
    return np.floor(vis.v + 0.5).astype(np.int64), np.floor(vis.u + 0.5).astype(np.int64)
