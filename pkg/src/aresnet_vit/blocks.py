"""The two attention-guided building blocks of the local branch: the
ROI-mask gated residual block and the channel-attention module, plus the
plain residual block and the mask-to-feature-grid resampler they share.

The gated block computes ``activation(F(x) + shortcut(x))`` and then
multiplies by the lesion mask resampled to the block's output resolution;
the mask broadcasts across batch and channel axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .imageops import area_resize
from .layers import BatchNorm2d, Conv2d, Linear
from .tensor import Tensor


@dataclass
class RoiMask:
    """Lesion mask with values in [0, 1] at its source resolution."""

    values: np.ndarray  # [H, W]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DimensionError(f"mask must be 2-d, got shape {self.values.shape}")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ConfigError("mask values must lie in [0, 1]")

    @property
    def source_hw(self) -> tuple:
        return self.values.shape


def mask_to_grid(mask_values: np.ndarray, out_hw: tuple) -> np.ndarray:
    """Area-average a [0,1] mask down to a feature-grid resolution.

    Soft values at region boundaries are intentional; the output range stays
    inside [0, 1] and all-ones / all-zeros fields are preserved exactly.
    """
    return area_resize(np.asarray(mask_values, dtype=float), out_hw)


def batch_mask_planes(masks, out_hw: tuple) -> Tensor:
    """Stack per-sample masks resampled to ``out_hw`` into a [N,1,h,w]
    constant tensor, broadcastable over the channel axis."""
    planes = [mask_to_grid(m.values if isinstance(m, RoiMask) else m, out_hw) for m in masks]
    return Tensor(np.stack(planes)[:, None, :, :])


class BasicResidualBlock:
    """Two 3x3 convolutions with a skip connection.

    out = relu(norm(conv2(relu(norm(conv1(x))))) + shortcut(x)); the shortcut
    is the identity when shapes match and a 1x1 projection otherwise.
    """

    def __init__(self, rng, in_ch: int, out_ch: int, stride: int = 1, norm: str = "batch"):
        if norm not in ("batch", "none"):
            raise ConfigError(f"norm must be 'batch' or 'none', got {norm!r}")
        self.conv1 = Conv2d(rng, in_ch, out_ch, kernel=3, stride=stride, pad=1)
        self.conv2 = Conv2d(rng, out_ch, out_ch, kernel=3, stride=1, pad=1)
        self.norm = norm
        self.bn1 = BatchNorm2d(out_ch) if norm == "batch" else None
        self.bn2 = BatchNorm2d(out_ch) if norm == "batch" else None
        if in_ch != out_ch or stride != 1:
            self.proj = Conv2d(rng, in_ch, out_ch, kernel=1, stride=stride, pad=0)
            self.bnp = BatchNorm2d(out_ch) if norm == "batch" else None
        else:
            self.proj = None
            self.bnp = None

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        h = self.conv1(x)
        if self.bn1 is not None:
            h = self.bn1(h, training)
        h = T.relu(h)
        h = self.conv2(h)
        if self.bn2 is not None:
            h = self.bn2(h, training)
        if self.proj is None:
            shortcut = x
        else:
            shortcut = self.proj(x)
            if self.bnp is not None:
                shortcut = self.bnp(shortcut, training)
        return T.relu(T.add(h, shortcut))

    def named_params(self, prefix: str) -> dict:
        params = {}
        params.update(self.conv1.named_params(f"{prefix}.conv1"))
        params.update(self.conv2.named_params(f"{prefix}.conv2"))
        if self.bn1 is not None:
            params.update(self.bn1.named_params(f"{prefix}.bn1"))
            params.update(self.bn2.named_params(f"{prefix}.bn2"))
        if self.proj is not None:
            params.update(self.proj.named_params(f"{prefix}.proj"))
            if self.bnp is not None:
                params.update(self.bnp.named_params(f"{prefix}.bnp"))
        return params

    def named_buffers(self, prefix: str) -> dict:
        buffers = {}
        for tag, bn in (("bn1", self.bn1), ("bn2", self.bn2), ("bnp", self.bnp)):
            if bn is not None:
                buffers.update(bn.named_buffers(f"{prefix}.{tag}"))
        return buffers


def roi_gate(features: Tensor, masks) -> Tensor:
    """Multiply [N,C,h,w] features by each sample's mask resampled to (h, w)."""
    n = features.shape[0]
    if len(masks) != n:
        raise DimensionError(f"{len(masks)} masks for a batch of {n}")
    planes = batch_mask_planes(masks, features.shape[2:])
    return T.mul(features, planes)


class ChannelAttention:
    """Per-channel gating from pooled statistics through a bottleneck MLP.

    Average-pool and max-pool vectors are combined (elementwise sum by
    default, concatenation optional), encoded by a two-layer MLP with
    reduction ratio r, and squashed by a sigmoid into per-channel weights.
    """

    def __init__(self, rng, channels: int, reduction: int = 8, combine: str = "sum"):
        if reduction < 1 or channels % reduction != 0:
            raise ConfigError(
                f"channel-attention reduction {reduction} must be >= 1 and divide {channels} channels"
            )
        if combine not in ("sum", "concat"):
            raise ConfigError(f"combine must be 'sum' or 'concat', got {combine!r}")
        self.channels = channels
        self.combine = combine
        in_features = channels if combine == "sum" else 2 * channels
        self.fc1 = Linear(rng, in_features, channels // reduction)
        self.fc2 = Linear(rng, channels // reduction, channels)

    def __call__(self, x: Tensor) -> tuple:
        """Returns (weights [N,C], gated [N,C,H,W])."""
        if x.shape[1] != self.channels:
            raise DimensionError(f"input has {x.shape[1]} channels, module expects {self.channels}")
        avg = T.global_avg_pool(x)
        mx = T.global_max_pool(x)
        v = T.add(avg, mx) if self.combine == "sum" else T.concat([avg, mx], axis=1)
        weights = T.sigmoid(self.fc2(T.relu(self.fc1(v))))
        n, c = weights.shape
        gated = T.mul(x, weights.reshape((n, c, 1, 1)))
        return weights, gated

    def named_params(self, prefix: str) -> dict:
        params = {}
        params.update(self.fc1.named_params(f"{prefix}.fc1"))
        params.update(self.fc2.named_params(f"{prefix}.fc2"))
        return params
