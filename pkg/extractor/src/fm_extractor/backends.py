"""Mask and patch-feature backends.

Foundation-model backends (``sam``, ``dinov2``, ``clip``) load checkpoints
through transformers and fail with a clear error naming the backend when the
model cannot be loaded (no package, no weights, no network).  The classical
backends (``slic`` superpixels, ``colorgrid`` descriptors) run offline and
deterministically; they exist so the full container pipeline can be exercised
without GPU or downloads.  The backend actually used is recorded in the
manifest provenance.
"""

from __future__ import annotations

import numpy as np


class BackendUnavailable(RuntimeError):
    def __init__(self, backend: str, reason: str):
        super().__init__(f"backend '{backend}' unavailable: {reason}")
        self.backend = backend


# --- masks -------------------------------------------------------------------


def masks_slic(image: np.ndarray, n_segments: int = 48, seed: int = 0) -> np.ndarray:
    """Superpixel masks over the foreground; (n, H, W) bool."""
    from skimage.segmentation import slic

    foreground = (image.std(axis=2) + np.abs(image.mean(axis=2) - image[0, 0].mean())) > 1e-3
    if not foreground.any():
        return np.zeros((0,) + image.shape[:2], dtype=bool)
    labels = slic(
        image,
        n_segments=n_segments,
        compactness=8.0,
        start_label=1,
        mask=foreground,
        channel_axis=2,
    )
    out = []
    for lab in np.unique(labels):
        if lab == 0:
            continue
        m = labels == lab
        if m.sum() >= 12:
            out.append(m)
    if not out:
        return np.zeros((0,) + image.shape[:2], dtype=bool)
    return np.stack(out)


def masks_sam(image: np.ndarray, variant: str = "facebook/sam-vit-base", points_per_side: int = 16) -> np.ndarray:
    """Automatic mask generation with SAM; raises BackendUnavailable on load failure."""
    try:
        import torch
        from transformers import SamModel, SamProcessor
    except Exception as exc:
        raise BackendUnavailable("sam", f"transformers/torch import failed: {exc}")
    try:
        model = SamModel.from_pretrained(variant)
        processor = SamProcessor.from_pretrained(variant)
    except Exception as exc:
        raise BackendUnavailable("sam", f"checkpoint load failed: {exc}")
    model.eval()
    h, w = image.shape[:2]
    xs = np.linspace(0, w - 1, points_per_side)
    ys = np.linspace(0, h - 1, points_per_side)
    grid = [[[float(x), float(y)]] for y in ys for x in xs]
    pil = _to_pil(image)
    masks = []
    with torch.no_grad():
        for chunk_start in range(0, len(grid), 64):
            chunk = grid[chunk_start : chunk_start + 64]
            inputs = processor(pil, input_points=[chunk], return_tensors="pt")
            outputs = model(**inputs)
            got = processor.image_processor.post_process_masks(
                outputs.pred_masks.cpu(), inputs["original_sizes"].cpu(), inputs["reshaped_input_sizes"].cpu()
            )[0]
            scores = outputs.iou_scores.cpu().numpy().reshape(len(chunk), -1)
            for i in range(got.shape[0]):
                best = int(scores[i].argmax())
                m = got[i, best].numpy().astype(bool)
                if m.sum() >= 64:
                    masks.append(m)
    return _dedup_masks(np.stack(masks)) if masks else np.zeros((0, h, w), dtype=bool)


def _dedup_masks(masks: np.ndarray, iou_thresh: float = 0.9) -> np.ndarray:
    keep: list[np.ndarray] = []
    for m in masks:
        dup = False
        for k in keep:
            inter = np.logical_and(m, k).sum()
            union = np.logical_or(m, k).sum()
            if union and inter / union > iou_thresh:
                dup = True
                break
        if not dup:
            keep.append(m)
    return np.stack(keep)


# --- patch features ----------------------------------------------------------


def features_colorgrid(image: np.ndarray, patch_size: int = 14, channels: int = 32, seed: int = 0) -> np.ndarray:
    """Handcrafted per-patch descriptor grid; (h_p, w_p, channels).

    Mean/std color, gradient energy, and position harmonics, lifted to the
    requested channel count by a fixed seeded random projection.
    """
    h, w = image.shape[:2]
    gh, gw = h // patch_size, w // patch_size
    tiles = image[: gh * patch_size, : gw * patch_size].reshape(gh, patch_size, gw, patch_size, 3)
    mean = tiles.mean(axis=(1, 3))
    std = tiles.std(axis=(1, 3))
    gray = image.mean(axis=2)
    gy, gx = np.gradient(gray)
    grad = np.sqrt(gx**2 + gy**2)[: gh * patch_size, : gw * patch_size].reshape(gh, patch_size, gw, patch_size)
    grad_energy = grad.mean(axis=(1, 3))[..., None]
    yy, xx = np.meshgrid(np.linspace(0, 1, gh), np.linspace(0, 1, gw), indexing="ij")
    pos = np.stack([np.sin(np.pi * xx), np.sin(np.pi * yy), xx, yy], axis=2)
    raw = np.concatenate([mean, std, grad_energy, pos], axis=2)
    rng = np.random.default_rng(seed)
    lift = rng.normal(size=(raw.shape[2], channels)) / np.sqrt(raw.shape[2])
    return (raw @ lift).astype(np.float32)


def _fm_patch_features(image: np.ndarray, backend: str, model_name: str, patch_size: int, device: str = "cpu") -> np.ndarray:
    try:
        import torch
    except Exception as exc:
        raise BackendUnavailable(backend, f"torch import failed: {exc}")
    try:
        if backend == "dinov2":
            from transformers import AutoImageProcessor, Dinov2Model

            processor = AutoImageProcessor.from_pretrained(model_name)
            model = Dinov2Model.from_pretrained(model_name)
            skip = 1  # CLS token
        else:
            from transformers import AutoProcessor, CLIPVisionModel

            processor = AutoProcessor.from_pretrained(model_name)
            model = CLIPVisionModel.from_pretrained(model_name)
            skip = 1
    except Exception as exc:
        raise BackendUnavailable(backend, f"checkpoint load failed: {exc}")
    model.eval().to(device)
    h, w = image.shape[:2]
    gh, gw = h // patch_size, w // patch_size
    with torch.no_grad():
        inputs = processor(images=_to_pil(image), return_tensors="pt", do_resize=True, size={"height": h, "width": w})
        inputs = {k: v.to(device) if hasattr(v, "to") else v for k, v in inputs.items()}
        hidden = model(**inputs).last_hidden_state[0].cpu().numpy()
    tokens = hidden[skip:]
    if tokens.shape[0] != gh * gw:
        raise BackendUnavailable(backend, f"token grid {tokens.shape[0]} != {gh}x{gw}; wrong patch size?")
    return tokens.reshape(gh, gw, -1).astype(np.float32)


def features_dinov2(image: np.ndarray, model_name: str = "facebook/dinov2-base", patch_size: int = 14, device: str = "cpu") -> np.ndarray:
    return _fm_patch_features(image, "dinov2", model_name, patch_size, device)


def features_clip(image: np.ndarray, model_name: str = "openai/clip-vit-base-patch16", patch_size: int = 16, device: str = "cpu") -> np.ndarray:
    return _fm_patch_features(image, "clip", model_name, patch_size, device)


def _to_pil(image: np.ndarray):
    from PIL import Image

    return Image.fromarray(np.clip(image * 255.0 + 0.5, 0, 255).astype(np.uint8))


MASK_BACKENDS = {"slic": masks_slic, "sam": masks_sam}
FEATURE_BACKENDS = {
    "colorgrid": {"fn": features_colorgrid, "channels": 32, "patch_size": 14},
    "dinov2": {"fn": features_dinov2, "channels": 768, "patch_size": 14},
    "clip": {"fn": features_clip, "channels": 768, "patch_size": 16},
}
