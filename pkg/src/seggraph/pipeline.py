"""Preprocessing and artifact loading over container shape directories.

``preprocess_shape`` runs visibility, mask decomposition, lifting, feature
pooling, and graph construction for one shape directory, writes the derived
blobs, and returns per-stage timings.  Re-running on a processed directory
reproduces identical bytes.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from . import container
from .errors import ConfigurationError
from .features import PatchFeatureGrid, pool_point_features
from .geometry import DEFAULT_EPS_Z, DEFAULT_SPLAT, PointCloud, rasterize_visibility
from .graph import SegmentGraph, build_segment_graph
from .masks import MaskStack, RegionImage, Segment, SegmentSet, decompose_view_masks, lift_segments
from .model import ShapeBatch, build_shape_batch


def load_cloud(shape_dir: Path | str) -> tuple[PointCloud, dict]:
    shape_dir = Path(shape_dir)
    man = container.read_manifest(shape_dir)
    pts = container.read_blob(shape_dir / man["blobs"]["points"]).astype(np.float64)
    nrm = container.read_blob(shape_dir / man["blobs"]["normals"]).astype(np.float64)
    labels = None
    if "labels" in man["blobs"]:
        labels = container.decode_labels(container.read_blob(shape_dir / man["blobs"]["labels"]))
    colors = None
    if "colors" in man["blobs"]:
        colors = container.read_blob(shape_dir / man["blobs"]["colors"]).astype(np.float64)
    cloud = PointCloud(
        positions=pts,
        normals=nrm,
        colors=colors,
        labels=labels,
        category=man["category"],
        k=int(man["k"]),
    )
    return cloud, man


def _load_masks(shape_dir: Path, man: dict) -> list[MaskStack]:
    w = int(man["cameras"][0]["resolution"][0])
    stacks = []
    for view_id, rel in enumerate(man["blobs"]["masks"]):
        packed = container.read_blob(Path(shape_dir) / rel)
        stacks.append(MaskStack(view_id=view_id, masks=container.unpack_masks(packed, w)))
    return stacks


def _load_grids(shape_dir: Path, man: dict) -> list[PatchFeatureGrid]:
    grids = []
    for view_id, rel in enumerate(man["blobs"]["features"]):
        arr = container.read_blob(Path(shape_dir) / rel)
        grids.append(PatchFeatureGrid(view_id=view_id, grid=arr, patch_size=int(man["patch_size"])))
    return grids


def serialize_segments(segs: SegmentSet) -> list[np.ndarray]:
    views = segs.view_ids().astype(np.uint32)
    counts = np.array([len(s.point_ids) for s in segs.segments], dtype=np.uint32)
    points = (
        np.concatenate([s.point_ids for s in segs.segments]).astype(np.uint32)
        if segs.segments
        else np.zeros(0, dtype=np.uint32)
    )
    return [views, counts, points]


def deserialize_segments(arrays: list[np.ndarray], cloud: PointCloud, cameras) -> SegmentSet:
    views, counts, flat = arrays
    segments = []
    memberships: list[list[int]] = [[] for _ in range(cloud.num_points)]
    offset = 0
    for seg_id, (view, count) in enumerate(zip(views.astype(int), counts.astype(int))):
        ids = flat[offset : offset + count].astype(np.int64)
        offset += count
        segments.append(
            Segment(
                segment_id=seg_id,
                view_id=view,
                camera_position=np.asarray(cameras[view].position, dtype=np.float64),
                point_ids=ids,
                centroid=cloud.positions[ids].mean(axis=0),
            )
        )
        for p in ids:
            memberships[int(p)].append(seg_id)
    return SegmentSet(segments=segments, point_memberships=memberships)


def preprocess_shape(shape_dir: Path | str, min_pixels: int = 20, min_points: int = 5) -> dict:
    """Run the geometry-side pipeline for one shape directory.

    Returns per-stage timings keyed render / masks / build-graph.
    """
    shape_dir = Path(shape_dir)
    cloud, man = load_cloud(shape_dir)
    cloud.assert_normalized(tol=1e-5)
    cams = [container.camera_from_record(rec) for rec in man["cameras"]]
    splat = int(man.get("splat", DEFAULT_SPLAT))
    eps_z = float(man.get("eps_z", DEFAULT_EPS_Z))

    t0 = time.perf_counter()
    vis = [rasterize_visibility(cloud, cam, splat, eps_z) for cam in cams]
    t_render = time.perf_counter() - t0

    t0 = time.perf_counter()
    stacks = _load_masks(shape_dir, man)
    regions = []
    for stack in stacks:
        if stack.num_masks == 0:
            h, w = stack.masks.shape[1:]
            regions.append(
                RegionImage(view_id=stack.view_id, region_of_pixel=np.full((h, w), -1, dtype=np.int32), region_count=0)
            )
        else:
            regions.append(decompose_view_masks(stack, min_pixels))
    segs = lift_segments(regions, vis, cloud, cams, min_points)
    grids = _load_grids(shape_dir, man)
    bank = pool_point_features(grids, vis, cloud)
    t_masks = time.perf_counter() - t0

    t0 = time.perf_counter()
    graph = build_segment_graph(segs, cloud)
    t_graph = time.perf_counter() - t0

    container.write_blob(shape_dir / "bank.sgb", bank.features.astype(np.float32))
    container.write_blob(shape_dir / "view_count.sgb", bank.view_count.astype(np.uint32))
    container.write_blobs(shape_dir / "segments.sgb", serialize_segments(segs))
    container.write_blobs(
        shape_dir / "graph.sgb",
        [graph.overlap_edges.astype(np.uint32), graph.adjacency_edges.astype(np.uint32)],
    )
    man["blobs"] = {
        **man["blobs"],
        "bank": "bank.sgb",
        "view_count": "view_count.sgb",
        "segments": "segments.sgb",
        "graph": "graph.sgb",
    }
    container.write_manifest(shape_dir, man)
    return {"render": t_render, "masks": t_masks, "build-graph": t_graph}


def load_processed(shape_dir: Path | str, dtype=np.float32) -> ShapeBatch:
    """Load a preprocessed shape directory into a training-ready batch."""
    shape_dir = Path(shape_dir)
    cloud, man = load_cloud(shape_dir)
    for key in ("bank", "segments", "graph"):
        if key not in man["blobs"]:
            raise ConfigurationError(f"{shape_dir.name}: missing preprocessed blob '{key}'; run preprocess first")
    cams = [container.camera_from_record(rec) for rec in man["cameras"]]
    bank = container.read_blob(shape_dir / man["blobs"]["bank"]).astype(np.float64)
    segs = deserialize_segments(container.read_blobs(shape_dir / man["blobs"]["segments"], expect=3), cloud, cams)
    overlap, adjacency = container.read_blobs(shape_dir / man["blobs"]["graph"], expect=2)
    graph = SegmentGraph(
        node_count=segs.num_segments,
        overlap_edges=overlap.astype(np.int64),
        adjacency_edges=adjacency.astype(np.int64),
    )
    return build_shape_batch(
        name=shape_dir.name,
        cloud=cloud,
        bank_features=bank,
        segs=segs,
        graph=graph,
        labels=cloud.labels,
        dtype=dtype,
    )


def corpus_shape_dirs(corpus_dir: Path | str, split: str) -> list[Path]:
    import json

    corpus_dir = Path(corpus_dir)
    corpus = json.loads((corpus_dir / "corpus.json").read_text(encoding="utf-8"))
    if split not in ("train", "test"):
        raise ConfigurationError(f"unknown split {split!r}")
    return [corpus_dir / name for name in corpus[split]]
