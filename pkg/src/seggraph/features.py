"""Sample patch-grid features at projected points and pool them over views.

Patch grids are sampled at continuous coordinates with a Catmull-Rom bicubic
kernel (a = -0.5), which is exactly equivalent to bicubic-upsampling the grid
to image resolution and reading the pixel, but never materializes the
upsampled map.  A point's pooled feature is the mean over the views where it
is visible; points visible nowhere get a zero row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .geometry import PointCloud, VisibilityMap

SAMPLE_CHUNK = 4096


@dataclass(frozen=True)
class PatchFeatureGrid:
    view_id: int
    grid: np.ndarray  # (h_p, w_p, c_in)
    patch_size: int  # pixels per patch side

    @property
    def channels(self) -> int:
        return self.grid.shape[2]


@dataclass(frozen=True)
class PointFeatureBank:
    features: np.ndarray  # (N, c_in)
    view_count: np.ndarray  # (N,)

    @property
    def channels(self) -> int:
        return self.features.shape[1]


def _catmull_rom_weights(frac: np.ndarray) -> np.ndarray:
    """Weights for the four taps at offsets (-1, 0, 1, 2) around floor(coord).

    Keys cubic-convolution kernel with a = -0.5; the taps' weights sum to 1,
    the kernel interpolates, and linear ramps are reproduced exactly.
    """
    a = -0.5
    t = np.asarray(frac)
    w = np.empty(t.shape + (4,), dtype=t.dtype)
    for k, x in enumerate((1.0 + t, t, 1.0 - t, 2.0 - t)):
        ax = np.abs(x)
        near = (a + 2.0) * ax**3 - (a + 3.0) * ax**2 + 1.0
        far = a * (ax**3 - 5.0 * ax**2 + 8.0 * ax - 4.0)
        w[..., k] = np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))
    return w


def _sample_grid(grid: np.ndarray, patch_size: int, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    h_p, w_p, c = grid.shape
    su = (us + 0.5) / patch_size - 0.5  # continuous patch coordinates
    sv = (vs + 0.5) / patch_size - 0.5
    iu = np.floor(su).astype(np.int64)
    iv = np.floor(sv).astype(np.int64)
    wu = _catmull_rom_weights(su - iu)  # (n, 4)
    wv = _catmull_rom_weights(sv - iv)
    cols = np.clip(iu[:, None] + np.arange(-1, 3), 0, w_p - 1)  # (n, 4)
    rows = np.clip(iv[:, None] + np.arange(-1, 3), 0, h_p - 1)
    taps = grid[rows[:, :, None], cols[:, None, :]]  # (n, 4v, 4u, c)
    return np.einsum("ni,nj,nijc->nc", wv, wu, taps, optimize=True)


def bicubic_sample(grid: PatchFeatureGrid, u: float, v: float) -> np.ndarray:
    """Sample one feature vector at image coordinates (u, v), border-clamped."""
    return _sample_grid(grid.grid.astype(np.float64), grid.patch_size, np.array([u]), np.array([v]))[0]


def bicubic_sample_many(grid: PatchFeatureGrid, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    g = grid.grid.astype(np.float64)
    out = np.empty((len(us), grid.channels))
    for s in range(0, len(us), SAMPLE_CHUNK):
        e = min(s + SAMPLE_CHUNK, len(us))
        out[s:e] = _sample_grid(g, grid.patch_size, us[s:e], vs[s:e])
    return out


def pool_point_features(
    grids: list[PatchFeatureGrid],
    vis: list[VisibilityMap],
    cloud: PointCloud,
) -> PointFeatureBank:
    """Average bicubic samples over the views where each point is visible."""
    if len(grids) != len(vis):
        raise ConfigurationError("feature grids and visibility maps must align")
    n = cloud.num_points
    c = grids[0].channels if grids else 0
    acc = np.zeros((n, c))
    count = np.zeros(n, dtype=np.int64)
    for grid, vm in zip(grids, vis):
        if grid.view_id != vm.view_id:
            raise ConfigurationError(f"view id mismatch: features={grid.view_id} visibility={vm.view_id}")
        ids = np.flatnonzero(vm.visible)
        if len(ids) == 0:
            continue
        w = grid.patch_size * grid.grid.shape[1]
        h = grid.patch_size * grid.grid.shape[0]
        us = np.clip(vm.u[ids], 0.0, w - 1.0)
        vs = np.clip(vm.v[ids], 0.0, h - 1.0)
        acc[ids] += bicubic_sample_many(grid, us, vs)
        count[ids] += 1
    feats = np.zeros((n, c))
    seen = count > 0
    feats[seen] = acc[seen] / count[seen, None]
    return PointFeatureBank(features=feats, view_count=count)
