"""CLI: render meshes/point sources and emit container shape directories.

    fm-extract --input shapes/*.obj --out data/real \
        --mask-backend slic --feature-backend colorgrid --views 10

Foundation-model backends need transformers weights; on load failure the
command exits nonzero naming the backend.  The mask/feature backends used
are recorded in each manifest's provenance.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import FEATURE_BACKENDS, MASK_BACKENDS, BackendUnavailable
from .meshio import load_obj, sample_surface
from .render import fibonacci_cameras, render_view, shade_colors, to_uint8


@dataclass
class ExtractorConfig:
    mask_backend: str = "slic"
    feature_backend: str = "colorgrid"
    views: int = 10
    resolution: int = 518
    points: int = 8192
    radius: float = 2.2
    splat: int = 5
    eps_z: float = 0.03
    seed: int = 0
    device: str = "cpu"
    save_images: bool = False

    def __post_init__(self):
        patch = FEATURE_BACKENDS[self.feature_backend]["patch_size"]
        if self.resolution % patch != 0:
            raise ValueError(f"resolution {self.resolution} not divisible by patch size {patch}")


def extract_shape(obj_path: Path, out_dir: Path, cfg: ExtractorConfig) -> Path:
    from . import writer

    mesh = load_obj(obj_path)
    cloud = sample_surface(mesh, cfg.points, seed=cfg.seed)
    cams = fibonacci_cameras(cfg.views, cfg.radius, (cfg.resolution, cfg.resolution))
    colors = shade_colors(cloud, seed=cfg.seed)

    feat_spec = FEATURE_BACKENDS[cfg.feature_backend]
    mask_fn = MASK_BACKENDS[cfg.mask_backend]
    kwargs = {} if cfg.feature_backend == "colorgrid" else {"device": cfg.device}
    mask_stacks, grids = [], []
    t0 = time.perf_counter()
    for cam in cams:
        image = render_view(cloud, cam, colors, cfg.splat)
        masks = mask_fn(image)
        grid = feat_spec["fn"](image, **kwargs)
        low_var = float(np.mean(grid.std(axis=(0, 1))))
        print(f"  view {cam.view_id}: {masks.shape[0]} masks, patch feature std {low_var:.3f}")
        mask_stacks.append(masks)
        grids.append(grid)
        if cfg.save_images:
            from PIL import Image

            img_dir = out_dir / "images"
            img_dir.mkdir(parents=True, exist_ok=True)
            Image.fromarray(to_uint8(image)).save(img_dir / f"view_{cam.view_id:03d}.png")
    elapsed = time.perf_counter() - t0

    shape_dir = writer.write_container(
        out_dir,
        category=obj_path.stem,
        class_names=cloud.group_names,
        cloud=cloud,
        cameras=cams,
        mask_stacks=mask_stacks,
        feature_grids=grids,
        patch_size=feat_spec["patch_size"],
        c_in=feat_spec["channels"],
        splat=cfg.splat,
        eps_z=cfg.eps_z,
        provenance=f"extractor masks={cfg.mask_backend} features={cfg.feature_backend}",
    )
    print(f"wrote {shape_dir} ({len(cams)} views in {elapsed:.1f}s)")
    return shape_dir


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fm-extract", description=__doc__)
    ap.add_argument("--input", nargs="+", required=True, help="OBJ meshes (g/o groups become part labels)")
    ap.add_argument("--out", required=True)
    ap.add_argument("--mask-backend", choices=sorted(MASK_BACKENDS), default="slic")
    ap.add_argument("--feature-backend", choices=sorted(FEATURE_BACKENDS), default="colorgrid")
    ap.add_argument("--views", type=int, default=10)
    ap.add_argument("--resolution", type=int, default=518)
    ap.add_argument("--points", type=int, default=8192)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--device", default="cpu")
    ap.add_argument("--save-images", action="store_true")
    args = ap.parse_args(argv)

    try:
        cfg = ExtractorConfig(
            mask_backend=args.mask_backend,
            feature_backend=args.feature_backend,
            views=args.views,
            resolution=args.resolution,
            points=args.points,
            seed=args.seed,
            device=args.device,
            save_images=args.save_images,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_root = Path(args.out)
    try:
        for src in args.input:
            category_dir = out_root / Path(src).stem
            shape_dir = extract_shape(Path(src), category_dir / "shape_0000", cfg)
            _write_corpus_index(category_dir, [shape_dir.name], cfg)
    except BackendUnavailable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _write_corpus_index(category_dir: Path, shape_names: list[str], cfg: ExtractorConfig) -> None:
    """Minimal corpus.json so the category directory is directly trainable;
    single-shape categories reuse the shape for train and test."""
    import json

    man = json.loads((category_dir / shape_names[0] / "manifest.json").read_text(encoding="utf-8"))
    corpus = {
        "category": man["category"],
        "k": man["k"],
        "c_in": man["c_in"],
        "train": shape_names,
        "test": shape_names,
        "extractor": {"mask_backend": cfg.mask_backend, "feature_backend": cfg.feature_backend},
    }
    (category_dir / "corpus.json").write_text(json.dumps(corpus, indent=2, sort_keys=True) + "\n", encoding="utf-8")


if __name__ == "__main__":
    sys.exit(main())
