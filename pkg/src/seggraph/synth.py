"""Seeded synthetic corpus: shapes, views, masks, and pseudo foundation features.

Shapes are a body primitive (box / cylinder / sphere) with small surface
attachments (buttons, knobs, handles) so small-part behavior is measurable.
Masks start from per-part visible pixels and are corrupted per view: a part's
mask may split into label-consistent fragments, neighboring parts may merge
with probability rising as the camera sees them edge-on, and extra coarse
masks may cover part unions.  Patch features mix per-part prototypes by pixel
ownership and add Gaussian noise, plus a per-view bias.

Everything is a pure function of (config, shape index): per-stage RNG streams
are keyed by (seed, stream, index), so corpora reproduce bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import container
from .features import PatchFeatureGrid
from .geometry import CameraView, PointCloud, make_cameras, normalize_cloud, rasterize_visibility
from .masks import MaskStack

_STREAM_PROTO = 0
_STREAM_SHAPE = 1
_STREAM_MASK = 2
_STREAM_FEAT = 3

_ATTACHMENT_KINDS = ("button", "knob", "handle")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    num_train: int = 8
    num_test: int = 20
    parts_per_shape: int = 5
    points_per_shape: int = 1200
    feature_noise: float = 12.0
    view_bias: float = 2.0
    split_rate: float = 0.35
    merge_rate: float = 0.35
    coarse_rate: float = 0.35
    c_in: int = 96
    views: int = 10
    resolution: tuple[int, int] = (196, 196)
    patch_size: int = 14
    radius: float = 2.2
    fov_deg: float = 30.0
    splat: int = 5
    eps_z: float = 0.035
    # calibration aid: lift attachments off the body surface by this distance,
    # removing base-contact shadowing (0 = touching, the benchmark default)
    attachment_gap: float = 0.0

    def __post_init__(self):
        for p in (self.split_rate, self.merge_rate, self.coarse_rate):
            if not 0.0 <= p <= 1.0:
                raise ValueError("corruption probabilities must lie in [0, 1]")
        if self.points_per_shape < 100:
            raise ValueError("points_per_shape must be >= 100")

    @property
    def num_shapes(self) -> int:
        return self.num_train + self.num_test

    @property
    def category(self) -> str:
        return f"synthetic-{self.parts_per_shape}part"

    def class_names(self) -> list[str]:
        names = ["body"]
        for slot in range(1, self.parts_per_shape):
            names.append(f"{_ATTACHMENT_KINDS[(slot - 1) % 3]}{slot}")
        return names

    def cameras(self) -> list[CameraView]:
        return make_cameras(self.views, self.radius, self.resolution, self.fov_deg)


def _rng(config: SynthConfig, stream: int, index: int = 0, sub: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.seed, stream, index, sub]))


@dataclass(frozen=True)
class Primitive:
    kind: str  # box | sphere | cylinder
    center: np.ndarray  # (3,)
    rot: np.ndarray  # (3, 3), columns are the local axes in world space
    dims: tuple  # box: (hx, hy, hz); sphere: (r,); cylinder: (r, half_h)


def _sample_primitive(prim: Primitive, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform surface samples with analytic normals, in world space."""
    if prim.kind == "sphere":
        d = rng.normal(size=(n, 3))
        d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-12)
        local_p = prim.dims[0] * d
        local_n = d
    elif prim.kind == "box":
        hx, hy, hz = prim.dims
        areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        uv = rng.uniform(-1.0, 1.0, size=(n, 2))
        local_p = np.empty((n, 3))
        local_n = np.zeros((n, 3))
        for f in range(6):
            axis, sign = f // 2, 1.0 if f % 2 == 0 else -1.0
            sel = face == f
            others = [i for i in range(3) if i != axis]
            half = (hx, hy, hz)
            local_p[sel, axis] = sign * half[axis]
            local_p[sel, others[0]] = uv[sel, 0] * half[others[0]]
            local_p[sel, others[1]] = uv[sel, 1] * half[others[1]]
            local_n[sel, axis] = sign
    elif prim.kind == "cylinder":
        r, hh = prim.dims
        side = 2.0 * np.pi * r * 2.0 * hh
        cap = np.pi * r * r
        part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
        phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
        local_p = np.empty((n, 3))
        local_n = np.zeros((n, 3))
        on_side = part == 0
        local_p[on_side] = np.stack(
            [r * np.cos(phi[on_side]), r * np.sin(phi[on_side]), rng.uniform(-hh, hh, size=int(on_side.sum()))], axis=1
        )
        local_n[on_side] = np.stack([np.cos(phi[on_side]), np.sin(phi[on_side]), np.zeros(int(on_side.sum()))], axis=1)
        for cap_id, sign in ((1, 1.0), (2, -1.0)):
            sel = part == cap_id
            rad = r * np.sqrt(rng.uniform(size=int(sel.sum())))
            local_p[sel] = np.stack([rad * np.cos(phi[sel]), rad * np.sin(phi[sel]), np.full(int(sel.sum()), sign * hh)], axis=1)
            local_n[sel, 2] = sign
    else:
        raise ValueError(f"unknown primitive kind {prim.kind}")
    return prim.center + local_p @ prim.rot.T, local_n @ prim.rot.T


def _contains(prim: Primitive, pts: np.ndarray, shrink: float = 1.0) -> np.ndarray:
    q = (pts - prim.center) @ prim.rot
    if prim.kind == "sphere":
        return np.linalg.norm(q, axis=1) < prim.dims[0] * shrink
    if prim.kind == "box":
        half = np.array(prim.dims) * shrink
        return np.all(np.abs(q) < half, axis=1)
    r, hh = prim.dims
    return (np.hypot(q[:, 0], q[:, 1]) < r * shrink) & (np.abs(q[:, 2]) < hh * shrink)


def analytic_normal(prim: Primitive, pts: np.ndarray) -> np.ndarray:
    """Recompute surface normals from the primitive alone (test oracle)."""
    q = (pts - prim.center) @ prim.rot
    if prim.kind == "sphere":
        n = q / np.linalg.norm(q, axis=1, keepdims=True)
    elif prim.kind == "box":
        half = np.asarray(prim.dims)
        axis = np.argmax(np.abs(q) / half, axis=1)
        n = np.zeros_like(q)
        n[np.arange(len(q)), axis] = np.sign(q[np.arange(len(q)), axis])
    else:
        r, hh = prim.dims
        on_cap = np.abs(np.abs(q[:, 2]) - hh) < 1e-9
        n = np.zeros_like(q)
        n[on_cap, 2] = np.sign(q[on_cap, 2])
        side = ~on_cap
        rad = np.maximum(np.hypot(q[side, 0], q[side, 1]), 1e-12)
        n[side, 0] = q[side, 0] / rad
        n[side, 1] = q[side, 1] / rad
    return n @ prim.rot.T


def _frame_from_axis(z: np.ndarray) -> np.ndarray:
    helper = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


@dataclass
class ShapeRecipe:
    body: Primitive
    attachments: list[Primitive]
    point_counts: list[int]  # per part slot, body first


def shape_recipe(config: SynthConfig, index: int) -> ShapeRecipe:
    rng = _rng(config, _STREAM_SHAPE, index, sub=0)
    body_kind = ["box", "cylinder", "sphere"][int(rng.integers(3))]
    scale = rng.uniform(0.85, 1.15)
    if body_kind == "box":
        dims = tuple(scale * rng.uniform(0.22, 0.38, size=3))
    elif body_kind == "cylinder":
        dims = (scale * rng.uniform(0.2, 0.3), scale * rng.uniform(0.22, 0.34))
    else:
        dims = (scale * rng.uniform(0.26, 0.34),)
    body = Primitive(kind=body_kind, center=np.zeros(3), rot=np.eye(3), dims=dims)

    fracs = rng.uniform(0.028, 0.042, size=config.parts_per_shape - 1)
    attachments = []
    for slot in range(1, config.parts_per_shape):
        kind = _ATTACHMENT_KINDS[(slot - 1) % 3]
        anchor_p, anchor_n = _sample_primitive(body, 1, rng)
        anchor_p, anchor_n = anchor_p[0], anchor_n[0]
        rot = _frame_from_axis(anchor_n)
        size = rng.uniform(0.85, 1.2)
        lift = anchor_n * config.attachment_gap
        if kind == "button":
            r, hh = 0.05 * size, 0.02 * size
            prim = Primitive("cylinder", anchor_p + anchor_n * hh * 0.6 + lift, rot, (r, hh))
        elif kind == "knob":
            r = 0.045 * size
            prim = Primitive("sphere", anchor_p + anchor_n * r * 0.55 + lift, rot, (r,))
        else:
            long, thin = 0.11 * size, 0.018 * size
            prim = Primitive("box", anchor_p + anchor_n * thin * 0.6 + lift, rot, (long, thin, thin))
        attachments.append(prim)

    n = config.points_per_shape
    counts = [max(12, int(round(f * n))) for f in fracs]
    body_count = n - sum(counts)
    return ShapeRecipe(body=body, attachments=attachments, point_counts=[body_count] + counts)


def generate_shape(config: SynthConfig, index: int, quantize: bool = True) -> PointCloud:
    """Deterministic labeled cloud for (config.seed, index); normalized."""
    recipe = shape_recipe(config, index)
    rng = _rng(config, _STREAM_SHAPE, index, sub=1)
    prims = [recipe.body] + recipe.attachments
    pts_parts, nrm_parts, lab_parts = [], [], []
    for label, (prim, count) in enumerate(zip(prims, recipe.point_counts)):
        pts, nrm = _sample_primitive(prim, count, rng)
        keep = np.ones(count, dtype=bool)
        for other_idx, other in enumerate(prims):
            if other_idx == label:
                continue
            shrink = 0.999 if other_idx == 0 else 1.0
            keep &= ~_contains(other, pts, shrink=shrink)
        pts_parts.append(pts[keep])
        nrm_parts.append(nrm[keep])
        lab_parts.append(np.full(int(keep.sum()), label, dtype=np.int64))
    positions = np.concatenate(pts_parts)
    normals = np.concatenate(nrm_parts)
    labels = np.concatenate(lab_parts)
    cloud = normalize_cloud(positions, normals, labels=labels, category=config.category, k=config.parts_per_shape)
    if not quantize:
        return cloud
    # round to the stored f32 precision so on-disk and in-memory pipelines agree
    return PointCloud(
        positions=cloud.positions.astype(np.float32).astype(np.float64),
        normals=cloud.normals.astype(np.float32).astype(np.float64),
        labels=cloud.labels,
        category=cloud.category,
        k=cloud.k,
    )


def part_prototypes(config: SynthConfig) -> np.ndarray:
    """Per-part feature prototypes, shared by every shape of the corpus."""
    rng = _rng(config, _STREAM_PROTO)
    return rng.normal(size=(config.parts_per_shape, config.c_in))


def _part_quality(cloud: PointCloud, vis, cam: CameraView, k: int) -> np.ndarray:
    """Mean |cos(normal, ray)| of each part's visible points in one view."""
    q = np.zeros(k)
    rel = cloud.positions - cam.position
    rel /= np.linalg.norm(rel, axis=1, keepdims=True)
    cos = np.abs((cloud.normals * rel).sum(axis=1))
    for label in range(k):
        sel = vis.visible & (cloud.labels == label)
        if sel.any():
            q[label] = float(cos[sel].mean())
    return q


def _parts_adjacent_3d(cloud: PointCloud, k: int, tau: float = 0.02) -> set[tuple[int, int]]:
    pairs = set()
    for i in range(k):
        pi = cloud.positions[cloud.labels == i]
        if len(pi) == 0:
            continue
        for j in range(i + 1, k):
            pj = cloud.positions[cloud.labels == j]
            if len(pj) == 0:
                continue
            d = np.sqrt(((pi[:, None, :] - pj[None, :, :]) ** 2).sum(axis=2)).min()
            if d < tau:
                pairs.add((i, j))
    return pairs


def _dilate(mask: np.ndarray, rounds: int) -> np.ndarray:
    acc = mask.copy()
    for _ in range(rounds):
        grown = acc.copy()
        grown[1:, :] |= acc[:-1, :]
        grown[:-1, :] |= acc[1:, :]
        grown[:, 1:] |= acc[:, :-1]
        grown[:, :-1] |= acc[:, 1:]
        acc = grown
    return acc


def _split_mask(mask: np.ndarray, rng: np.random.Generator) -> list[np.ndarray]:
    rows, cols = np.nonzero(mask)
    if len(rows) < 2:
        return [mask]
    theta = rng.uniform(0.0, np.pi)
    proj = rows * np.cos(theta) + cols * np.sin(theta)
    order = np.argsort(proj, kind="stable")
    cut = len(order) // 2
    first = np.zeros_like(mask)
    second = np.zeros_like(mask)
    first[rows[order[:cut]], cols[order[:cut]]] = True
    second[rows[order[cut:]], cols[order[cut:]]] = True
    return [first, second]


def generate_views_and_masks(
    cloud: PointCloud,
    cameras: list[CameraView],
    config: SynthConfig,
    index: int,
    vis=None,
) -> tuple[list[MaskStack], list[dict]]:
    """Per-view mask stacks with seeded split / merge / coarse corruption.

    Returns the stacks and an event log (one dict per corruption event) that
    replays identically for the same (config, index).
    """
    if vis is None:
        vis = [rasterize_visibility(cloud, cam, config.splat, config.eps_z) for cam in cameras]
    k = config.parts_per_shape
    rng = _rng(config, _STREAM_MASK, index)
    adjacent = _parts_adjacent_3d(cloud, k)
    stacks, events = [], []
    h, w = config.resolution[1], config.resolution[0]
    for cam, vm in zip(cameras, vis):
        owner = vm.pixel_owner
        owner_label = np.where(owner >= 0, cloud.labels[np.maximum(owner, 0)], -1)
        masks = []  # list of (part set, pixel mask)
        for label in range(k):
            m = owner_label == label
            if m.any():
                masks.append(({label}, m))

        quality = _part_quality(cloud, vm, cam, k)
        # merge neighboring parts, more likely the more edge-on the view sees them
        groups = {i: i for i in range(len(masks))}

        def find(i):
            while groups[i] != i:
                groups[i] = groups[groups[i]]
                i = groups[i]
            return i

        part_to_slot = {min(parts): slot for slot, (parts, _) in enumerate(masks)}
        for a in range(k):
            for b in range(a + 1, k):
                if (a, b) not in adjacent:
                    continue
                draw = rng.uniform()
                if a not in part_to_slot or b not in part_to_slot:
                    continue
                p_merge = config.merge_rate * float(np.clip((0.95 - min(quality[a], quality[b])) / 0.35, 0.0, 1.0))
                if draw < p_merge:
                    ra, rb = find(part_to_slot[a]), find(part_to_slot[b])
                    if ra != rb:
                        groups[max(ra, rb)] = min(ra, rb)
                        events.append({"kind": "merge", "view": int(cam.view_id), "parts": [int(a), int(b)]})
        merged: dict[int, tuple[set, np.ndarray]] = {}
        for slot, (parts, m) in enumerate(masks):
            root = find(slot)
            if root in merged:
                merged[root] = (merged[root][0] | parts, merged[root][1] | m)
            else:
                merged[root] = (set(parts), m.copy())
        masks = [merged[r] for r in sorted(merged)]

        # over-segmentation: split masks into label-consistent fragments
        split_out = []
        for parts, m in masks:
            pieces = [m]
            if rng.uniform() < config.split_rate and int(m.sum()) >= 2:
                pieces = _split_mask(m, rng)
                extra = []
                for piece in pieces:
                    if rng.uniform() < config.split_rate and int(piece.sum()) >= 2:
                        extra.extend(_split_mask(piece, rng))
                    else:
                        extra.append(piece)
                pieces = extra
                events.append({"kind": "split", "view": int(cam.view_id), "parts": sorted(map(int, parts)), "pieces": len(pieces)})
            split_out.extend((parts, piece) for piece in pieces)
        masks = split_out

        # occasional coarse super-masks over adjacent pairs
        added = 0
        coarse = []
        for i in range(len(masks)):
            for j in range(i + 1, len(masks)):
                if added >= 2:
                    break
                pi, pj = masks[i][0], masks[j][0]
                if not any((min(a, b), max(a, b)) in adjacent for a in pi for b in pj if a != b):
                    continue
                if rng.uniform() < config.coarse_rate:
                    coarse.append((pi | pj, _dilate(masks[i][1] | masks[j][1], 1)))
                    events.append(
                        {"kind": "coarse", "view": int(cam.view_id), "parts": sorted(map(int, pi | pj))}
                    )
                    added += 1
        masks.extend(coarse)

        stack = np.stack([m for _, m in masks]) if masks else np.zeros((0, h, w), dtype=bool)
        stacks.append(MaskStack(view_id=cam.view_id, masks=stack))
    return stacks, events


def generate_features(
    cloud: PointCloud,
    cameras: list[CameraView],
    config: SynthConfig,
    index: int,
    vis=None,
) -> list[PatchFeatureGrid]:
    """Patch grids mixing part prototypes by pixel ownership, plus noise."""
    if vis is None:
        vis = [rasterize_visibility(cloud, cam, config.splat, config.eps_z) for cam in cameras]
    protos = part_prototypes(config)
    rng = _rng(config, _STREAM_FEAT, index)
    k = config.parts_per_shape
    w, h = config.resolution
    p = config.patch_size
    gh, gw = (h + p - 1) // p, (w + p - 1) // p
    grids = []
    for cam, vm in zip(cameras, vis):
        owner_label = np.where(vm.pixel_owner >= 0, cloud.labels[np.maximum(vm.pixel_owner, 0)], -1)
        padded = np.full((gh * p, gw * p), -1, dtype=np.int64)
        padded[:h, :w] = owner_label
        tiles = padded.reshape(gh, p, gw, p)
        counts = np.zeros((gh, gw, k))
        for label in range(k):
            counts[:, :, label] = (tiles == label).sum(axis=(1, 3))
        total = counts.sum(axis=2)
        weights = np.where(total[:, :, None] > 0, counts / np.maximum(total, 1)[:, :, None], 0.0)
        grid = weights @ protos
        grid += rng.normal(0.0, config.view_bias, size=(1, 1, config.c_in))
        if config.feature_noise > 0:
            grid = grid + rng.normal(0.0, config.feature_noise, size=grid.shape)
        grids.append(PatchFeatureGrid(view_id=cam.view_id, grid=grid.astype(np.float32), patch_size=p))
    return grids


def write_shape_dir(shape_dir: Path, config: SynthConfig, index: int) -> None:
    """Generate one shape and write its container directory."""
    shape_dir = Path(shape_dir)
    (shape_dir / "masks").mkdir(parents=True, exist_ok=True)
    (shape_dir / "features").mkdir(parents=True, exist_ok=True)
    cloud = generate_shape(config, index)
    cams = config.cameras()
    vis = [rasterize_visibility(cloud, cam, config.splat, config.eps_z) for cam in cams]
    stacks, _ = generate_views_and_masks(cloud, cams, config, index, vis=vis)
    grids = generate_features(cloud, cams, config, index, vis=vis)

    container.write_blob(shape_dir / "points.sgb", cloud.positions.astype(np.float32))
    container.write_blob(shape_dir / "normals.sgb", cloud.normals.astype(np.float32))
    container.write_blob(shape_dir / "labels.sgb", container.encode_labels(cloud.labels))
    mask_paths, feat_paths = [], []
    for stack, grid in zip(stacks, grids):
        mp = f"masks/view_{stack.view_id:03d}.sgb"
        fp = f"features/view_{grid.view_id:03d}.sgb"
        container.write_blob(shape_dir / mp, container.pack_masks(stack.masks))
        container.write_blob(shape_dir / fp, grid.grid.astype(np.float32))
        mask_paths.append(mp)
        feat_paths.append(fp)
    manifest = container.make_manifest(
        category=config.category,
        k=config.parts_per_shape,
        class_names=config.class_names(),
        num_points=cloud.num_points,
        cameras=cams,
        c_in=config.c_in,
        patch_size=config.patch_size,
        provenance="synthetic",
        blobs={
            "points": "points.sgb",
            "normals": "normals.sgb",
            "labels": "labels.sgb",
            "masks": mask_paths,
            "features": feat_paths,
        },
    )
    manifest["splat"] = config.splat
    manifest["eps_z"] = config.eps_z
    container.write_manifest(shape_dir, manifest)


def make_corpus(config: SynthConfig, out_dir: Path | str) -> dict:
    """Write the full corpus plus a corpus.json index with the train/test split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for index in range(config.num_shapes):
        name = f"shape_{index:04d}"
        write_shape_dir(out_dir / name, config, index)
        names.append(name)
    corpus = {
        "category": config.category,
        "k": config.parts_per_shape,
        "c_in": config.c_in,
        "train": names[: config.num_train],
        "test": names[config.num_train :],
        "config": {**asdict(config), "resolution": list(config.resolution)},
    }
    (out_dir / "corpus.json").write_text(json.dumps(corpus, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return corpus
