"""Attention heatmaps over a trained model.

Two methods, both deterministic per (model, sample):

- ``grad-cam``: gradient of the pre-sigmoid logit w.r.t. the last CNN
  stage's feature maps -> channel weights (spatial mean of gradients) ->
  weighted map sum -> rectify -> bilinear upsample -> min-max normalize.
- ``attention-rollout``: head-averaged ViT attention matrices with identity
  mixing, multiplied across blocks; the class-token row over patch tokens
  becomes the spatial map.

A map that comes out constant (e.g. an untrained model) normalizes to
all-zeros and is flagged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import tensor as T
from .data import Normalizer, Sample
from .errors import ConfigError
from .fusion import FusionModel
from .imageops import bilinear_resize
from .training import assemble_batch

METHODS = ("grad-cam", "attention-rollout")


@dataclass
class Heatmap:
    values: np.ndarray  # [H, W] in [0, 1]
    method: str
    sample_id: str
    constant: bool = False


def _normalize_map(raw: np.ndarray) -> tuple:
    lo, hi = float(raw.min()), float(raw.max())
    if hi - lo <= 1e-12:
        return np.zeros_like(raw), True
    return (raw - lo) / (hi - lo), False


def _grad_cam(model: FusionModel, images, masks) -> np.ndarray:
    if model.aresnet is None:
        raise ConfigError("method: grad-cam needs the CNN branch; use attention-rollout")
    capture = {}
    with T.Tape() as tape:
        model.forward(images, masks=masks, training=False, capture=capture)
        logit = T.sum(capture["logit"])
    grads = T.backward(logit, tape)
    fmap = capture["stage4"]
    g = grads[fmap]  # [1, C, h, w]
    channel_w = g.mean(axis=(2, 3))  # [1, C]
    cam = np.maximum((channel_w[:, :, None, None] * fmap.data).sum(axis=1), 0.0)
    return cam[0]


def _attention_rollout(model: FusionModel, images, masks) -> np.ndarray:
    if model.vit is None:
        raise ConfigError("method: attention-rollout needs the ViT branch; use grad-cam")
    capture = {}
    model.forward(images, masks=masks, training=False, capture=capture)
    rollout = None
    for attn in capture["attention"]:  # [1, heads, T, T]
        mixed = attn.mean(axis=1)[0]  # head average, [T, T]
        mixed = mixed + np.eye(mixed.shape[0])  # residual path
        mixed = mixed / mixed.sum(axis=-1, keepdims=True)
        rollout = mixed if rollout is None else mixed @ rollout
    cls_row = rollout[0, 1:]  # attention mass from the class token to patches
    side = model.vit.config.input_size // model.vit.config.patch_size
    return cls_row.reshape(side, side)


def compute_heatmap(model: FusionModel, sample: Sample, normalizer: Normalizer,
                    method: str = "grad-cam") -> Heatmap:
    if method not in METHODS:
        raise ConfigError(f"method: unknown {method!r}; choose one of {METHODS}")
    images, masks, _ = assemble_batch([sample], normalizer)
    raw = _grad_cam(model, images, masks) if method == "grad-cam" else _attention_rollout(model, images, masks)
    upsampled = bilinear_resize(raw, sample.image.shape)
    values, constant = _normalize_map(upsampled)
    return Heatmap(values=values, method=method, sample_id=sample.id, constant=constant)


def save_heatmap_png(path, heatmap: Heatmap):
    arr = np.clip(np.rint(heatmap.values * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def save_overlay_png(path, heatmap: Heatmap, image: np.ndarray):
    """Heat fused onto the source image: hot regions tint toward red."""
    base = np.clip(np.rint(image * 255.0), 0, 255).astype(float)
    heat = heatmap.values
    r = np.clip(base * (1.0 - 0.5 * heat) + 255.0 * 0.5 * heat, 0, 255)
    g = np.clip(base * (1.0 - 0.5 * heat), 0, 255)
    rgb = np.stack([r, g, g.copy()], axis=-1).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
