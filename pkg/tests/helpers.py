"""Shared test fixtures and brute-force oracles."""

import numpy as np

from seggraph.geometry import PointCloud
from seggraph.masks import Segment, SegmentSet


def partition_of(region_image):
    """region id -> frozenset of pixel indices, ignoring labels."""
    flat = region_image.region_of_pixel.ravel()
    return {frozenset(np.flatnonzero(flat == r).tolist()) for r in range(region_image.region_count)}


def brute_force_partition(masks, min_pixels):
    """Covering-set identity computed pixel by pixel with dicts."""
    n, h, w = masks.shape
    groups = {}
    for idx in range(h * w):
        r, c = divmod(idx, w)
        key = frozenset(i for i in range(n) if masks[i, r, c])
        if key:
            groups.setdefault(key, set()).add(idx)
    return {frozenset(v) for v in groups.values() if len(v) >= min_pixels}


def brute_force_lift(regions, vis_list, min_points):
    """Walk every point of every view and collect region members by rounding."""
    out = {}
    for reg, vm in zip(regions, vis_list):
        h, w = reg.region_of_pixel.shape
        rows = np.floor(vm.v + 0.5).astype(int)
        cols = np.floor(vm.u + 0.5).astype(int)
        for j in range(len(rows)):
            if not vm.visible[j]:
                continue
            if not (0 <= rows[j] < h and 0 <= cols[j] < w):
                continue
            rid = reg.region_of_pixel[rows[j], cols[j]]
            if rid >= 0:
                out.setdefault((vm.view_id, int(rid)), set()).add(j)
    return {k: frozenset(v) for k, v in out.items() if len(v) >= min_points}


def random_cloud(seed, n=160):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.5, 0.5, size=(n, 3))
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(positions=pts, normals=nrm)


def random_segment_set(seed, cloud, num_segments, num_views=4, min_size=2, max_size=24):
    """Segments as random point subsets tagged with random views."""
    rng = np.random.default_rng(seed)
    n = cloud.num_points
    cam_positions = rng.normal(size=(num_views, 3))
    cam_positions = 2.2 * cam_positions / np.linalg.norm(cam_positions, axis=1, keepdims=True)
    segments = []
    memberships = [[] for _ in range(n)]
    for seg_id in range(num_segments):
        size = int(rng.integers(min_size, max_size + 1))
        # bias toward local clusters so adjacency edges actually appear
        if rng.uniform() < 0.7:
            anchor = cloud.positions[int(rng.integers(n))]
            d = np.linalg.norm(cloud.positions - anchor, axis=1)
            ids = np.argsort(d, kind="stable")[:size]
            ids = np.sort(ids)
        else:
            ids = np.sort(rng.choice(n, size=min(size, n), replace=False))
        view = int(rng.integers(num_views))
        segments.append(
            Segment(
                segment_id=seg_id,
                view_id=view,
                camera_position=cam_positions[view],
                point_ids=np.asarray(ids, dtype=np.int64),
                centroid=cloud.positions[ids].mean(axis=0),
            )
        )
        for p in ids:
            memberships[int(p)].append(seg_id)
    return SegmentSet(segments=segments, point_memberships=memberships)
