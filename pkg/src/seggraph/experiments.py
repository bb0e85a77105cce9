"""Corpus-level experiment helpers: train a variant, evaluate, run toggle grids."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import AblationFlags, ModelConfig, ShapeBatch
from .pipeline import corpus_shape_dirs, load_processed, preprocess_shape
from .synth import SynthConfig, make_corpus
from .train import TrainConfig, evaluate_shape, predict_labels, train_fewshot

# Named toggle combinations mirroring the ablation table rows: segment
# encoding (se), view-quality unpooling (vq), overlap edges (eo), adjacency
# edges (ea).  "mlp" is the no-segments baseline, "full" enables everything.
VARIANTS: dict[str, AblationFlags] = {
    "mlp": AblationFlags(mlp_baseline=True),
    "seg": AblationFlags(no_segment_encoder=True, uniform_unpool=True, no_graph=True),
    "seg+se": AblationFlags(uniform_unpool=True, no_graph=True),
    "seg+vq": AblationFlags(no_segment_encoder=True, no_graph=True),
    "seg+se+vq": AblationFlags(no_graph=True),
    "seg+eo+ea": AblationFlags(no_segment_encoder=True, uniform_unpool=True),
    "seg+se+vq+eo": AblationFlags(no_adjacency_edges=True),
    "seg+se+vq+ea": AblationFlags(no_overlap_edges=True),
    "full": AblationFlags(),
}


@dataclass
class VariantResult:
    variant: str
    seed: int
    miou: float
    small_miou: float | None
    accuracy: float
    train_seconds: float
    per_shape: list[dict]


def prepare_corpus(config: SynthConfig, out_dir: Path | str) -> dict:
    """Generate and preprocess a synthetic corpus; returns stage timing sums."""
    out_dir = Path(out_dir)
    corpus = make_corpus(config, out_dir)
    timings: dict[str, float] = {}
    for name in corpus["train"] + corpus["test"]:
        for key, val in preprocess_shape(out_dir / name).items():
            timings[key] = timings.get(key, 0.0) + val
    return timings


def load_split(corpus_dir: Path | str, split: str) -> list[ShapeBatch]:
    return [load_processed(d) for d in corpus_shape_dirs(corpus_dir, split)]


def run_variant(
    train_batches: list[ShapeBatch],
    test_batches: list[ShapeBatch],
    model_cfg: ModelConfig,
    variant: str,
    seed: int,
    epochs: int = 100,
    lr: float = 1e-3,
    shots: int = 8,
) -> VariantResult:
    flags = VARIANTS[variant]
    cfg = TrainConfig(shots=shots, epochs=epochs, lr=lr, seed=seed, flags=flags)
    t0 = time.perf_counter()
    params, _ = train_fewshot(cfg, train_batches, model_cfg)
    train_seconds = time.perf_counter() - t0
    per_shape = []
    mious, smalls, accs = [], [], []
    for batch in test_batches:
        pred, _ = predict_labels(params, batch, model_cfg, flags)
        report = evaluate_shape(pred, batch.labels, model_cfg.k)
        per_shape.append({"name": batch.name, **report.to_dict()})
        mious.append(report.miou)
        accs.append(report.point_accuracy)
        if report.small_miou is not None:
            smalls.append(report.small_miou)
    return VariantResult(
        variant=variant,
        seed=seed,
        miou=float(np.mean(mious)),
        small_miou=float(np.mean(smalls)) if smalls else None,
        accuracy=float(np.mean(accs)),
        train_seconds=train_seconds,
        per_shape=per_shape,
    )


def summarize_seeds(results: list[VariantResult]) -> dict:
    """Mean and sample standard deviation of category mIoU over seeds."""
    mious = np.array([r.miou for r in results])
    smalls = [r.small_miou for r in results if r.small_miou is not None]
    return {
        "variant": results[0].variant,
        "seeds": [r.seed for r in results],
        "miou_mean": float(mious.mean()),
        "miou_sd": float(mious.std(ddof=1)) if len(mious) > 1 else 0.0,
        "small_miou_mean": float(np.mean(smalls)) if smalls else None,
    }
