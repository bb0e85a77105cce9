"""On-disk container format binding all pipeline stages.

A shape lives in one directory holding a UTF-8 JSON ``manifest.json`` plus a
set of binary blobs.  Every blob is a little-endian, row-major tensor:

    magic   4 bytes  b"SGB1"
    dtype   u8       0 = f32, 1 = u32, 2 = u16, 3 = u8
    ndims   u8
    dims    ndims x u32 (little-endian)
    payload element_size * prod(dims) bytes, row-major, little-endian

A file may hold several blobs back to back; the header makes each one
self-delimiting.  Boolean masks are stored bit-packed along the last axis
(``np.packbits``), so a stack of ``n`` masks at resolution W x H has dims
``(n, H, ceil(W / 8))``; the manifest records the true resolution.

Labels admit the sentinel -1 and the format has no signed dtype, so label
blobs are u32 with 0xFFFFFFFF standing for -1.

Parameter checkpoints use the same blobs: a ``checkpoint.json`` with names,
shapes, and model settings next to a ``params.sgb`` holding one blob per
parameter in manifest order.  Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContainerFormatError

MAGIC = b"SGB1"
SCHEMA_VERSION = 1

_DTYPE_BY_CODE = {0: np.dtype("<f4"), 1: np.dtype("<u4"), 2: np.dtype("<u2"), 3: np.dtype("u1")}
_CODE_BY_KIND = {("f", 4): 0, ("u", 4): 1, ("u", 2): 2, ("u", 1): 3}

LABEL_SENTINEL = np.uint32(0xFFFFFFFF)


def blob_bytes(arr: np.ndarray) -> bytes:
    kind = (arr.dtype.kind, arr.dtype.itemsize)
    if kind not in _CODE_BY_KIND:
        raise ContainerFormatError(f"unsupported blob dtype {arr.dtype}")
    code = _CODE_BY_KIND[kind]
    dims = arr.shape
    header = struct.pack("<4sBB", MAGIC, code, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    payload = np.ascontiguousarray(arr, dtype=_DTYPE_BY_CODE[code]).tobytes()
    return header + payload


def write_blob(path: Path | str, arr: np.ndarray) -> None:
    Path(path).write_bytes(blob_bytes(arr))


def write_blobs(path: Path | str, arrays: list[np.ndarray]) -> None:
    Path(path).write_bytes(b"".join(blob_bytes(a) for a in arrays))


def _parse_blob(buf: bytes, offset: int) -> tuple[np.ndarray, int]:
    if len(buf) < offset + 6:
        raise ContainerFormatError("truncated blob header")
    magic, code, ndims = struct.unpack_from("<4sBB", buf, offset)
    if magic != MAGIC:
        raise ContainerFormatError(f"bad magic {magic!r}")
    if code not in _DTYPE_BY_CODE:
        raise ContainerFormatError(f"unknown dtype code {code}")
    offset += 6
    dims = struct.unpack_from(f"<{ndims}I", buf, offset)
    offset += 4 * ndims
    dtype = _DTYPE_BY_CODE[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndims else 1
    nbytes = count * dtype.itemsize
    if len(buf) < offset + nbytes:
        raise ContainerFormatError("payload shorter than header dims")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(dims)
    return arr.copy(), offset + nbytes


def read_blob(path: Path | str) -> np.ndarray:
    arr, end = _parse_blob(Path(path).read_bytes(), 0)
    return arr


def read_blobs(path: Path | str, expect: int | None = None) -> list[np.ndarray]:
    buf = Path(path).read_bytes()
    out, offset = [], 0
    while offset < len(buf):
        arr, offset = _parse_blob(buf, offset)
        out.append(arr)
    if expect is not None and len(out) != expect:
        raise ContainerFormatError(f"expected {expect} blobs in {path}, found {len(out)}")
    return out


def encode_labels(labels: np.ndarray) -> np.ndarray:
    """Map int labels with -1 sentinel onto u32 (0xFFFFFFFF encodes -1)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < -1:
        raise ContainerFormatError("labels below -1 cannot be encoded")
    out = labels.astype(np.int64).copy()
    out[out == -1] = int(LABEL_SENTINEL)
    return out.astype(np.uint32)


def decode_labels(raw: np.ndarray) -> np.ndarray:
    out = raw.astype(np.int64)
    out[out == int(LABEL_SENTINEL)] = -1
    return out


def pack_masks(masks: np.ndarray) -> np.ndarray:
    """Bit-pack a (n, H, W) boolean stack along W."""
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim != 3:
        raise ContainerFormatError(f"mask stack must be 3-d, got {masks.shape}")
    return np.packbits(masks, axis=2)


def unpack_masks(packed: np.ndarray, width: int) -> np.ndarray:
    return np.unpackbits(packed, axis=2, count=width).astype(bool)


def _camera_record(cam) -> dict:
    return {
        "view_id": int(cam.view_id),
        "position": [float(x) for x in cam.position],
        "look_at": [float(x) for x in cam.look_at],
        "up": [float(x) for x in cam.up],
        "focal": float(cam.focal),
        "principal_point": [float(x) for x in cam.principal_point],
        "resolution": [int(cam.resolution[0]), int(cam.resolution[1])],
    }


def camera_from_record(rec: dict):
    from .geometry import CameraView

    return CameraView(
        view_id=int(rec["view_id"]),
        position=np.asarray(rec["position"], dtype=np.float64),
        look_at=np.asarray(rec["look_at"], dtype=np.float64),
        up=np.asarray(rec["up"], dtype=np.float64),
        focal=float(rec["focal"]),
        principal_point=np.asarray(rec["principal_point"], dtype=np.float64),
        resolution=(int(rec["resolution"][0]), int(rec["resolution"][1])),
    )


def write_manifest(shape_dir: Path | str, manifest: dict) -> None:
    manifest = dict(manifest)
    manifest.setdefault("schema_version", SCHEMA_VERSION)
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    (Path(shape_dir) / "manifest.json").write_text(text, encoding="utf-8")


def read_manifest(shape_dir: Path | str) -> dict:
    path = Path(shape_dir) / "manifest.json"
    if not path.is_file():
        raise ContainerFormatError(f"no manifest at {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def make_manifest(
    *,
    category: str,
    k: int,
    class_names: list[str],
    num_points: int,
    cameras: list,
    c_in: int,
    patch_size: int,
    provenance: str,
    blobs: dict,
) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "category": category,
        "k": int(k),
        "class_names": list(class_names),
        "num_points": int(num_points),
        "num_views": len(cameras),
        "c_in": int(c_in),
        "patch_size": int(patch_size),
        "cameras": [_camera_record(c) for c in cameras],
        "provenance": provenance,
        "blobs": blobs,
    }


def _check_dims(path: Path, dims: tuple, what: str) -> np.ndarray:
    arr = read_blob(path)
    for i, d in enumerate(dims):
        if d is not None and arr.shape[i] != d:
            raise ContainerFormatError(f"{what}: dims {arr.shape} do not match manifest {dims}")
    return arr


def validate_shape_dir(shape_dir: Path | str) -> dict:
    """Check that every referenced blob exists and its header matches the manifest.

    Returns the manifest on success.
    """
    shape_dir = Path(shape_dir)
    man = read_manifest(shape_dir)
    blobs = man["blobs"]
    n = int(man["num_points"])
    num_views = int(man["num_views"])
    if len(man["cameras"]) != num_views:
        raise ContainerFormatError("camera record count does not match num_views")
    if len(man["class_names"]) != int(man["k"]):
        raise ContainerFormatError("class_names length does not match k")

    for key in ("points", "normals"):
        if key not in blobs:
            raise ContainerFormatError(f"manifest missing required blob '{key}'")
        _check_dims(shape_dir / blobs[key], (n, 3), key)
    if "colors" in blobs:
        _check_dims(shape_dir / blobs["colors"], (n, 3), "colors")
    if "labels" in blobs:
        raw = _check_dims(shape_dir / blobs["labels"], (n,), "labels")
        lab = decode_labels(raw)
        if lab.min(initial=0) < -1 or lab.max(initial=-1) >= int(man["k"]):
            raise ContainerFormatError("labels out of range [-1, k)")

    res = man["cameras"][0]["resolution"] if num_views else None
    for key, dims_fn in (("masks", None), ("features", None)):
        if key not in blobs:
            continue
        paths = blobs[key]
        if len(paths) != num_views:
            raise ContainerFormatError(f"{key}: expected {num_views} per-view blobs")
        for rel in paths:
            arr = read_blob(shape_dir / rel)
            if key == "masks":
                w, h = res
                if arr.ndim != 3 or arr.shape[1] != h or arr.shape[2] != (w + 7) // 8:
                    raise ContainerFormatError(f"masks {rel}: dims {arr.shape} inconsistent with resolution {res}")
            else:
                if arr.ndim != 3 or arr.shape[2] != int(man["c_in"]):
                    raise ContainerFormatError(f"features {rel}: dims {arr.shape} inconsistent with c_in {man['c_in']}")
                w, h = res
                p = int(man["patch_size"])
                if not (h <= arr.shape[0] * p < h + p and w <= arr.shape[1] * p < w + p):
                    raise ContainerFormatError(f"features {rel}: patch grid {arr.shape[:2]} does not cover {res}")

    if "bank" in blobs:
        _check_dims(shape_dir / blobs["bank"], (n, int(man["c_in"])), "bank")
    if "view_count" in blobs:
        _check_dims(shape_dir / blobs["view_count"], (n,), "view_count")
    if "segments" in blobs:
        seg_views, seg_counts, seg_points = read_blobs(shape_dir / blobs["segments"], expect=3)
        if seg_views.shape != seg_counts.shape:
            raise ContainerFormatError("segments: view/count blobs disagree")
        if int(seg_counts.sum()) != seg_points.shape[0]:
            raise ContainerFormatError("segments: point ids do not sum to counts")
    if "graph" in blobs:
        overlap, adjacency = read_blobs(shape_dir / blobs["graph"], expect=2)
        for name, e in (("overlap", overlap), ("adjacency", adjacency)):
            if e.ndim != 2 or e.shape[1] != 2:
                raise ContainerFormatError(f"graph: {name} edges must be (E, 2)")
    return man


def save_checkpoint(ckpt_dir: Path | str, params, meta: dict) -> None:
    """Write parameter arrays plus a JSON manifest of names/shapes/settings."""
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    names = list(params.names())
    arrays = [params[n].data.astype("<f4") for n in names]
    write_blobs(ckpt_dir / "params.sgb", arrays)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "params": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
        **meta,
    }
    (ckpt_dir / "checkpoint.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_checkpoint(ckpt_dir: Path | str) -> tuple[dict, dict]:
    """Return (meta, arrays-by-name) for a checkpoint directory."""
    ckpt_dir = Path(ckpt_dir)
    meta = json.loads((ckpt_dir / "checkpoint.json").read_text(encoding="utf-8"))
    arrays = read_blobs(ckpt_dir / "params.sgb", expect=len(meta["params"]))
    out = {}
    for rec, arr in zip(meta["params"], arrays):
        if list(arr.shape) != rec["shape"]:
            raise ContainerFormatError(f"checkpoint param {rec['name']}: blob dims {arr.shape} != {rec['shape']}")
        out[rec["name"]] = arr
    return meta, out
