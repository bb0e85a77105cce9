"""Write shape directories in the downstream container format.

This is an independent implementation of the on-disk contract (SGB1 blobs +
manifest.json); see the consumer's README for the byte layout.  Writing is
atomic per shape: blobs land in a staging directory that is renamed into
place only after everything needed by the manifest exists.
"""

from __future__ import annotations

import json
import shutil
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SGB1"
_CODES = {("f", 4): 0, ("u", 4): 1, ("u", 2): 2, ("u", 1): 3}
LABEL_SENTINEL = 0xFFFFFFFF


def blob_bytes(arr: np.ndarray) -> bytes:
    key = (arr.dtype.kind, arr.dtype.itemsize)
    if key not in _CODES:
        raise ValueError(f"dtype {arr.dtype} not representable in the container")
    header = struct.pack("<4sBB", MAGIC, _CODES[key], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()


def write_blob(path: Path, arr: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob_bytes(arr))


def encode_labels(labels: np.ndarray) -> np.ndarray:
    out = np.asarray(labels, dtype=np.int64).copy()
    out[out == -1] = LABEL_SENTINEL
    return out.astype(np.uint32)


def pack_masks(masks: np.ndarray) -> np.ndarray:
    if masks.ndim != 3:
        raise ValueError("mask stack must be (n, H, W)")
    return np.packbits(masks.astype(bool), axis=2)


def write_container(
    out_dir: Path | str,
    *,
    category: str,
    class_names: list[str],
    cloud,
    cameras: list,
    mask_stacks: list[np.ndarray],
    feature_grids: list[np.ndarray],
    patch_size: int,
    c_in: int,
    splat: int,
    eps_z: float,
    provenance: str,
) -> Path:
    """Assemble one shape directory; aborts before the manifest on any gap."""
    out_dir = Path(out_dir)
    if len(mask_stacks) != len(cameras) or len(feature_grids) != len(cameras):
        raise ValueError("per-view blobs must match the camera count")
    staging = out_dir.parent / (out_dir.name + ".staging")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)

    write_blob(staging / "points.sgb", cloud.positions.astype("<f4"))
    write_blob(staging / "normals.sgb", cloud.normals.astype("<f4"))
    write_blob(staging / "labels.sgb", encode_labels(cloud.labels))
    mask_paths, feat_paths = [], []
    for view_id, (masks, grid) in enumerate(zip(mask_stacks, feature_grids)):
        if grid.shape[2] != c_in:
            raise ValueError(f"view {view_id}: feature grid has {grid.shape[2]} channels, expected {c_in}")
        mp, fp = f"masks/view_{view_id:03d}.sgb", f"features/view_{view_id:03d}.sgb"
        write_blob(staging / mp, pack_masks(masks))
        write_blob(staging / fp, grid.astype("<f4"))
        mask_paths.append(mp)
        feat_paths.append(fp)

    manifest = {
        "schema_version": 1,
        "category": category,
        "k": len(class_names),
        "class_names": class_names,
        "num_points": int(len(cloud.positions)),
        "num_views": len(cameras),
        "c_in": int(c_in),
        "patch_size": int(patch_size),
        "splat": int(splat),
        "eps_z": float(eps_z),
        "cameras": [cam.record() for cam in cameras],
        "provenance": provenance,
        "blobs": {
            "points": "points.sgb",
            "normals": "normals.sgb",
            "labels": "labels.sgb",
            "masks": mask_paths,
            "features": feat_paths,
        },
    }
    for rel in ["points.sgb", "normals.sgb", "labels.sgb"] + mask_paths + feat_paths:
        if not (staging / rel).is_file():
            shutil.rmtree(staging)
            raise ValueError(f"missing blob {rel}; not writing a manifest")
    (staging / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if out_dir.exists():
        shutil.rmtree(out_dir)
    staging.rename(out_dir)
    return out_dir
