"""Offscreen point-splat rendering of labeled clouds to RGB images.

Cameras sit on a Fibonacci sphere looking at the origin; the exact poses
used are returned alongside the images and must be recorded verbatim in the
output manifest so downstream reprojection stays consistent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Camera:
    view_id: int
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    focal: float
    principal_point: np.ndarray
    resolution: tuple[int, int]  # (W, H)

    def record(self) -> dict:
        return {
            "view_id": self.view_id,
            "position": [float(x) for x in self.position],
            "look_at": [float(x) for x in self.look_at],
            "up": [float(x) for x in self.up],
            "focal": float(self.focal),
            "principal_point": [float(x) for x in self.principal_point],
            "resolution": [int(self.resolution[0]), int(self.resolution[1])],
        }


def fibonacci_cameras(m: int, radius: float, resolution: tuple[int, int], fov_deg: float = 30.0) -> list[Camera]:
    w, h = resolution
    focal = (w / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
    pp = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    if m == 1:
        dirs = np.array([[0.0, 0.0, 1.0]])
    else:
        i = np.arange(m, dtype=np.float64)
        z = 1.0 - 2.0 * (i + 0.5) / m
        phi = i * np.pi * (3.0 - np.sqrt(5.0))
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    cams = []
    for view_id, d in enumerate(dirs):
        up = np.array([1.0, 0.0, 0.0]) if 1.0 - abs(d[1]) < 1e-3 else np.array([0.0, 1.0, 0.0])
        cams.append(Camera(view_id, radius * d, np.zeros(3), up, focal, pp, (w, h)))
    return cams


def project(cam: Camera, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    forward = cam.look_at - cam.position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, cam.up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rel = pts - cam.position
    depth = rel @ forward
    safe = np.where(np.abs(depth) < 1e-300, 1.0, depth)
    u = cam.principal_point[0] + cam.focal * (rel @ right) / safe
    v = cam.principal_point[1] + cam.focal * (rel @ down) / safe
    return u, v, depth


def shade_colors(cloud, seed: int = 0) -> np.ndarray:
    """Albedo + two-light lambertian shading; gives SLIC texture to work with."""
    rng = np.random.default_rng(seed)
    base = 0.35 + 0.5 * (cloud.positions - cloud.positions.min(0)) / np.ptp(cloud.positions, axis=0).max()
    lights = rng.normal(size=(2, 3))
    lights /= np.linalg.norm(lights, axis=1, keepdims=True)
    lam = 0.4 + 0.6 * np.clip(cloud.normals @ lights.T, 0, 1).mean(axis=1, keepdims=True)
    return np.clip(base * lam, 0.0, 1.0)


def render_view(cloud, cam: Camera, colors: np.ndarray, splat: int, background: float = 1.0) -> np.ndarray:
    """Z-buffer point splat via far-to-near last-write-wins; (H, W, 3) in [0, 1]."""
    w, h = cam.resolution
    u, v, depth = project(cam, cloud.positions)
    img = np.full((h, w, 3), background, dtype=np.float64)
    front = np.flatnonzero(depth > 0)
    if len(front) == 0:
        return img
    c0 = np.ceil(u - splat / 2.0).astype(np.int64)
    r0 = np.ceil(v - splat / 2.0).astype(np.int64)
    pix_all, src_all = [], []
    for dr in range(splat):
        for dc in range(splat):
            rr, cc = r0[front] + dr, c0[front] + dc
            ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            pix_all.append((rr * w + cc)[ok])
            src_all.append(front[ok])
    pix = np.concatenate(pix_all)
    src = np.concatenate(src_all)
    # nearest point per pixel, ties to the lowest point id
    order = np.lexsort((src, depth[src], pix))
    pix, src = pix[order], src[order]
    first = np.unique(pix, return_index=True)[1]
    img.reshape(-1, 3)[pix[first]] = colors[src[first]]
    return img


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(img * 255.0 + 0.5, 0, 255).astype(np.uint8)
