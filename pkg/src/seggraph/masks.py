"""Decompose overlapping per-view masks into disjoint regions and lift them to 3D.

Two pixels belong to the same region iff they are covered by exactly the same
subset of input masks; connectivity is deliberately not used, so the result
is independent of mask order.  A lifted segment collects the points visible
in one view whose rounded projection lands on one region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .geometry import CameraView, PointCloud, VisibilityMap, rounded_pixels

DEFAULT_MIN_PIXELS = 20
DEFAULT_MIN_POINTS = 5


@dataclass(frozen=True)
class MaskStack:
    view_id: int
    masks: np.ndarray  # (n_masks, H, W) bool

    def __post_init__(self):
        if self.masks.ndim != 3:
            raise ConfigurationError(f"mask stack must be (n, H, W), got {self.masks.shape}")

    @property
    def num_masks(self) -> int:
        return self.masks.shape[0]


@dataclass(frozen=True)
class RegionImage:
    view_id: int
    region_of_pixel: np.ndarray  # (H, W) int32, region id or -1
    region_count: int


@dataclass(frozen=True)
class Segment:
    segment_id: int
    view_id: int
    camera_position: np.ndarray  # (3,)
    point_ids: np.ndarray  # sorted unique int64
    centroid: np.ndarray  # (3,)


@dataclass
class SegmentSet:
    segments: list[Segment]
    point_memberships: list[list[int]]  # per point, segment ids

    @property
    def num_segments(self) -> int:
        return len(self.segments)

    def membership_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened (point_id, segment_id) pairs, ordered by segment then point."""
        pts = np.concatenate([s.point_ids for s in self.segments]) if self.segments else np.zeros(0, np.int64)
        segs = (
            np.concatenate([np.full(len(s.point_ids), s.segment_id, dtype=np.int64) for s in self.segments])
            if self.segments
            else np.zeros(0, np.int64)
        )
        return pts, segs

    def view_ids(self) -> np.ndarray:
        return np.array([s.view_id for s in self.segments], dtype=np.int64)

    def camera_positions(self) -> np.ndarray:
        if not self.segments:
            return np.zeros((0, 3))
        return np.stack([s.camera_position for s in self.segments])


def decompose_view_masks(stack: MaskStack, min_pixels: int = DEFAULT_MIN_PIXELS) -> RegionImage:
    """Partition covered pixels by their covering-set identity.

    Regions smaller than ``min_pixels`` are dropped (id -1).  Region ids are
    assigned by first pixel occurrence in row-major order, so the labeling is
    deterministic; permuting the input masks permutes only the covering keys,
    not the induced partition.
    """
    if stack.num_masks < 1:
        raise ConfigurationError("decomposition needs at least one mask")
    n, h, w = stack.masks.shape
    flat = stack.masks.reshape(n, h * w)
    covered = flat.any(axis=0)

    keys = np.packbits(flat, axis=0)  # (ceil(n/8), H*W)
    keys = np.ascontiguousarray(keys.T)
    void = keys.view([("", keys.dtype)] * keys.shape[1]).ravel()
    _, inverse = np.unique(void, return_inverse=True)
    inverse = inverse.astype(np.int64)

    region = np.full(h * w, -1, dtype=np.int64)
    region[covered] = inverse[covered]
    if not covered.any():
        return RegionImage(view_id=stack.view_id, region_of_pixel=region.reshape(h, w).astype(np.int32), region_count=0)

    num_groups = int(inverse.max()) + 1
    sizes = np.bincount(inverse[covered], minlength=num_groups)
    first = np.full(num_groups, h * w, dtype=np.int64)
    np.minimum.at(first, inverse[covered], np.flatnonzero(covered))

    keep = sizes >= min_pixels
    remap = np.full(num_groups, -1, dtype=np.int64)
    survivors = np.flatnonzero(keep)
    survivors = survivors[np.argsort(first[survivors], kind="stable")]
    remap[survivors] = np.arange(len(survivors))

    out = np.full(h * w, -1, dtype=np.int64)
    out[covered] = remap[inverse[covered]]
    return RegionImage(
        view_id=stack.view_id,
        region_of_pixel=out.reshape(h, w).astype(np.int32),
        region_count=len(survivors),
    )


def lift_segments(
    regions: list[RegionImage],
    vis: list[VisibilityMap],
    cloud: PointCloud,
    cameras: list[CameraView],
    min_points: int = DEFAULT_MIN_POINTS,
) -> SegmentSet:
    """Lift per-view regions to 3D segments of visible points.

    ``regions``, ``vis`` and ``cameras`` must be aligned by view id.
    """
    if not (len(regions) == len(vis) == len(cameras)):
        raise ConfigurationError("regions, visibility maps, and cameras must align")
    segments: list[Segment] = []
    memberships: list[list[int]] = [[] for _ in range(cloud.num_points)]
    for reg, vm, cam in zip(regions, vis, cameras):
        if not (reg.view_id == vm.view_id == cam.view_id):
            raise ConfigurationError(
                f"view id mismatch: regions={reg.view_id} visibility={vm.view_id} camera={cam.view_id}"
            )
        h, w = reg.region_of_pixel.shape
        rows, cols = rounded_pixels(vm)
        ok = vm.visible & (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        ids = np.flatnonzero(ok)
        if len(ids) == 0:
            continue
        rid = reg.region_of_pixel[rows[ids], cols[ids]].astype(np.int64)
        ids = ids[rid >= 0]
        rid = rid[rid >= 0]
        order = np.lexsort((ids, rid))
        ids, rid = ids[order], rid[order]
        boundaries = np.flatnonzero(np.diff(rid)) + 1
        for chunk in np.split(ids, boundaries):
            if len(chunk) < min_points:
                continue
            seg_id = len(segments)
            segments.append(
                Segment(
                    segment_id=seg_id,
                    view_id=vm.view_id,
                    camera_position=np.asarray(cam.position, dtype=np.float64),
                    point_ids=np.sort(chunk),
                    centroid=cloud.positions[chunk].mean(axis=0),
                )
            )
            for p in chunk:
                memberships[int(p)].append(seg_id)
    return SegmentSet(segments=segments, point_memberships=memberships)
