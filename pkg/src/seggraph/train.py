"""Few-shot training loop, inference, mIoU evaluation, and PCA color export."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, ParamStore, adam_step
from .errors import ConfigurationError, MetricUndefinedError
from .model import AblationFlags, ModelConfig, ShapeBatch, forward, init_params

DEFAULT_SMALL_FRACTION = 0.05


@dataclass(frozen=True)
class TrainConfig:
    shots: int = 8
    epochs: int = 100
    lr: float = 1e-3
    seed: int = 0
    flags: AblationFlags = field(default_factory=AblationFlags)
    category: str = ""

    def __post_init__(self):
        if self.shots < 1:
            raise ConfigurationError("shots must be >= 1")


def train_fewshot(
    config: TrainConfig,
    shapes: list[ShapeBatch],
    model_cfg: ModelConfig,
) -> tuple[ParamStore, list[float]]:
    """Train on up to ``config.shots`` labeled shapes; deterministic per seed.

    The loss is the mean cross-entropy over every labeled point across the
    shot set, optimized full-batch with Adam.
    """
    labeled = [s for s in shapes if s.labels is not None]
    if not labeled:
        raise ConfigurationError("training needs at least one labeled shape")
    for s in labeled:
        if s.bank.shape[1] != model_cfg.c_in:
            raise ConfigurationError(f"shape {s.name}: bank channels {s.bank.shape[1]} != model c_in {model_cfg.c_in}")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5807]))
    if len(labeled) > config.shots:
        pick = rng.choice(len(labeled), size=config.shots, replace=False)
        labeled = [labeled[i] for i in np.sort(pick)]

    params = init_params(model_cfg, config.seed)
    state = AdamState.for_params(params, lr=config.lr)
    counts = [int((s.labels >= 0).sum()) for s in labeled]
    total = sum(counts)
    if total == 0:
        raise MetricUndefinedError("no labeled points in the shot set")

    curve: list[float] = []
    for _ in range(config.epochs):
        params.zero_grad()
        epoch_loss = 0.0
        for s, cnt in zip(labeled, counts):
            if cnt == 0:
                continue
            result = forward(params, s, model_cfg, config.flags)
            loss = ad.cross_entropy(result.logits, s.labels)
            scaled = ad.mul(loss, cnt / total)
            scaled.backward()
            epoch_loss += float(scaled.data)
        adam_step(params, state)
        curve.append(epoch_loss)
    return params, curve


def predict_labels(
    params: ParamStore,
    batch: ShapeBatch,
    model_cfg: ModelConfig,
    flags: AblationFlags = AblationFlags(),
) -> tuple[np.ndarray, np.ndarray]:
    """Per-point argmax labels and raw logits; ties break to the lowest class."""
    result = forward(params, batch, model_cfg, flags)
    logits = result.logits.data
    return np.argmax(logits, axis=1).astype(np.int64), logits


@dataclass
class EvalReport:
    per_class_iou: list[float | None]
    miou: float
    point_accuracy: float
    small_miou: float | None
    large_miou: float | None
    small_classes: list[int]
    num_valid_points: int

    def to_dict(self) -> dict:
        return {
            "per_class_iou": [None if v is None else float(v) for v in self.per_class_iou],
            "miou": float(self.miou),
            "point_accuracy": float(self.point_accuracy),
            "small_miou": None if self.small_miou is None else float(self.small_miou),
            "large_miou": None if self.large_miou is None else float(self.large_miou),
            "small_classes": list(map(int, self.small_classes)),
            "num_valid_points": int(self.num_valid_points),
        }


def mean_iou(pred: np.ndarray, gt: np.ndarray, k: int) -> tuple[list[float | None], float, float, int]:
    """Per-class IoU, their mean over present classes, accuracy, valid count.

    Points with gt == -1 are excluded; classes absent from both prediction and
    ground truth are excluded from the mean.
    """
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ConfigurationError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    valid = gt >= 0
    if not valid.any():
        raise MetricUndefinedError("mean_iou: no valid ground-truth points")
    p, g = pred[valid], gt[valid]
    per_class: list[float | None] = []
    present = []
    for c in range(k):
        tp = int(np.sum((p == c) & (g == c)))
        fp = int(np.sum((p == c) & (g != c)))
        fn = int(np.sum((p != c) & (g == c)))
        if tp + fp + fn == 0:
            per_class.append(None)
        else:
            iou = tp / (tp + fp + fn)
            per_class.append(iou)
            present.append(iou)
    if not present:
        raise MetricUndefinedError("mean_iou: no class present in pred or gt")
    acc = float(np.mean(p == g))
    return per_class, float(np.mean(present)), acc, int(valid.sum())


def small_part_breakdown(
    pred: np.ndarray,
    gt: np.ndarray,
    k: int,
    small_fraction: float = DEFAULT_SMALL_FRACTION,
) -> tuple[float | None, float | None, list[int]]:
    """Split the per-class IoUs by ground-truth size share.

    A class is small in a shape when its share of valid gt points is below
    ``small_fraction``; each group's mIoU is the mean over its present classes.
    """
    per_class, _, _, _ = mean_iou(pred, gt, k)
    gt = np.asarray(gt, dtype=np.int64)
    valid = gt >= 0
    fractions = np.bincount(gt[valid], minlength=k) / valid.sum()
    small, large, small_ids = [], [], []
    for c in range(k):
        if per_class[c] is None:
            continue
        if fractions[c] < small_fraction:
            small.append(per_class[c])
            small_ids.append(c)
        else:
            large.append(per_class[c])
    return (
        float(np.mean(small)) if small else None,
        float(np.mean(large)) if large else None,
        small_ids,
    )


def evaluate_shape(pred: np.ndarray, gt: np.ndarray, k: int, small_fraction: float = DEFAULT_SMALL_FRACTION) -> EvalReport:
    per_class, miou, acc, nvalid = mean_iou(pred, gt, k)
    small, large, small_ids = small_part_breakdown(pred, gt, k, small_fraction)
    return EvalReport(
        per_class_iou=per_class,
        miou=miou,
        point_accuracy=acc,
        small_miou=small,
        large_miou=large,
        small_classes=small_ids,
        num_valid_points=nvalid,
    )


def category_score(reports: list[EvalReport]) -> float:
    """Mean of per-shape mIoUs."""
    if not reports:
        raise MetricUndefinedError("no shape reports to aggregate")
    return float(np.mean([r.miou for r in reports]))


def pca_projection(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Top-3 covariance eigenvectors with a deterministic sign convention.

    Returns (mean, components) where components is (3, C); rank-deficient
    directions are zeroed so the matching color channel degrades to 0.5.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] < 3:
        raise ConfigurationError("PCA export needs at least 3 points")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / len(x)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:3]
    comps = []
    for rank_idx, col in enumerate(order):
        if vals[col] <= 1e-12 * max(float(vals.max()), 1e-30):
            comps.append(np.zeros(x.shape[1]))
            continue
        vec = vecs[:, col]
        pivot = np.argmax(np.abs(vec))
        if vec[pivot] < 0:
            vec = -vec
        comps.append(vec)
    while len(comps) < 3:
        comps.append(np.zeros(x.shape[1]))
    return mean, np.stack(comps)


def export_pca_colors(features: np.ndarray) -> np.ndarray:
    """Reduce features to 3 channels and min-max them to [0, 1] colors."""
    mean, comps = pca_projection(features)
    proj = (np.asarray(features, dtype=np.float64) - mean) @ comps.T
    colors = np.full_like(proj, 0.5)
    for ch in range(3):
        lo, hi = proj[:, ch].min(), proj[:, ch].max()
        if hi - lo > 1e-12:
            colors[:, ch] = (proj[:, ch] - lo) / (hi - lo)
    return colors


def write_ply(path: Path | str, positions: np.ndarray, colors: np.ndarray) -> None:
    """ASCII PLY with per-vertex uchar colors."""
    positions = np.asarray(positions, dtype=np.float64)
    rgb = np.clip(np.asarray(colors) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(positions)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    for p, c in zip(positions, rgb):
        lines.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
