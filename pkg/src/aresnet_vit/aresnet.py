"""Local-feature branch: stem + four residual stages with configurable
per-stage attention (none / ROI-mask gating / channel attention), global
average pooled into a flat feature vector.

The five preset layouts cover the attention ablation grid:
network1 = plain, network2 = masks on stages 1-2, network3 = masks on
stages 3-4, network4 = masks everywhere, network5 = masks on 1-2 plus
channel attention on 3-4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import BasicResidualBlock, ChannelAttention, roi_gate
from .errors import ConfigError, DataError, DimensionError
from .layers import BatchNorm2d, Conv2d
from .tensor import Tensor

ATTENTION_KINDS = ("none", "roi_mask", "channel")

ATTENTION_PRESETS = {
    "network1": ("none", "none", "none", "none"),
    "network2": ("roi_mask", "roi_mask", "none", "none"),
    "network3": ("none", "none", "roi_mask", "roi_mask"),
    "network4": ("roi_mask", "roi_mask", "roi_mask", "roi_mask"),
    "network5": ("roi_mask", "roi_mask", "channel", "channel"),
}


@dataclass(frozen=True)
class AResNetConfig:
    input_size: int = 224
    in_channels: int = 1
    stem_channels: int = 64
    stem_kind: str = "full"  # "full": 7x7/2 conv + 3x3/2 pool; "tiny": 3x3/1 conv
    stage_channels: tuple = (64, 128, 256, 512)
    stage_strides: tuple = (1, 2, 2, 2)
    blocks_per_stage: int = 2
    layout: tuple = ("none", "none", "none", "none")
    norm: str = "batch"
    ca_reduction: int = 8
    ca_combine: str = "sum"

    @property
    def feature_dim(self) -> int:
        return self.stage_channels[-1]

    def validate(self):
        if self.stem_kind not in ("full", "tiny"):
            raise ConfigError(f"stem_kind: expected 'full' or 'tiny', got {self.stem_kind!r}")
        if len(self.stage_channels) != 4 or len(self.stage_strides) != 4:
            raise ConfigError("stage_channels/stage_strides: exactly 4 stages required")
        if len(self.layout) != 4:
            raise ConfigError(f"layout: exactly 4 entries required, got {len(self.layout)}")
        for i, kind in enumerate(self.layout):
            if kind not in ATTENTION_KINDS:
                raise ConfigError(f"layout: stage {i + 1} has unknown attention kind {kind!r}")
        widths = (self.stem_channels,) + tuple(self.stage_channels)
        if any(w <= 0 for w in widths):
            raise ConfigError("stage_channels: widths must be positive")
        if any(a > b for a, b in zip(widths, widths[1:])):
            raise ConfigError("stage_channels: widths must be nondecreasing")
        for i, (kind, ch) in enumerate(zip(self.layout, self.stage_channels)):
            if kind == "channel" and ch % self.ca_reduction != 0:
                raise ConfigError(
                    f"layout: stage {i + 1} channel attention needs reduction "
                    f"{self.ca_reduction} to divide width {ch}"
                )
        if self.blocks_per_stage < 1:
            raise ConfigError("blocks_per_stage: must be >= 1")

    def needs_masks(self) -> bool:
        return "roi_mask" in self.layout


TINY_ARESNET = AResNetConfig(
    input_size=32,
    stem_channels=8,
    stem_kind="tiny",
    stage_channels=(8, 16, 24, 32),
    blocks_per_stage=1,
)


def layout_for_preset(name: str) -> tuple:
    if name not in ATTENTION_PRESETS:
        raise ConfigError(f"unknown attention preset {name!r}; choose one of {sorted(ATTENTION_PRESETS)}")
    return ATTENTION_PRESETS[name]


class _Stage:
    def __init__(self, rng, in_ch, out_ch, stride, blocks, attention, norm, ca_reduction, ca_combine):
        self.blocks = []
        for b in range(blocks):
            self.blocks.append(
                BasicResidualBlock(rng, in_ch if b == 0 else out_ch, out_ch,
                                   stride=stride if b == 0 else 1, norm=norm)
            )
        self.attention = attention
        self.ca = ChannelAttention(rng, out_ch, ca_reduction, ca_combine) if attention == "channel" else None

    def __call__(self, x: Tensor, masks, training: bool) -> Tensor:
        for block in self.blocks:
            x = block(x, training)
        if self.attention == "roi_mask":
            x = roi_gate(x, masks)
        elif self.attention == "channel":
            _, x = self.ca(x)
        return x

    def named_params(self, prefix: str) -> dict:
        params = {}
        for i, block in enumerate(self.blocks, start=1):
            params.update(block.named_params(f"{prefix}.block{i}"))
        if self.ca is not None:
            params.update(self.ca.named_params(f"{prefix}.ca"))
        return params

    def named_buffers(self, prefix: str) -> dict:
        buffers = {}
        for i, block in enumerate(self.blocks, start=1):
            buffers.update(block.named_buffers(f"{prefix}.block{i}"))
        return buffers


class AResNetBranch:
    """Attention-guided residual branch producing a [N, D_local] feature."""

    def __init__(self, config: AResNetConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        if config.stem_kind == "full":
            self.stem_conv = Conv2d(rng, config.in_channels, config.stem_channels, kernel=7, stride=2, pad=3)
            self.stem_pool = True
        else:
            self.stem_conv = Conv2d(rng, config.in_channels, config.stem_channels, kernel=3, stride=1, pad=1)
            self.stem_pool = False
        self.stem_bn = BatchNorm2d(config.stem_channels) if config.norm == "batch" else None
        self.stages = []
        in_ch = config.stem_channels
        for out_ch, stride, kind in zip(config.stage_channels, config.stage_strides, config.layout):
            self.stages.append(
                _Stage(rng, in_ch, out_ch, stride, config.blocks_per_stage, kind,
                       config.norm, config.ca_reduction, config.ca_combine)
            )
            in_ch = out_ch

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    def forward(self, images: Tensor, masks=None, training: bool = False, capture: dict | None = None) -> Tensor:
        cfg = self.config
        if images.ndim != 4 or images.shape[2] != cfg.input_size or images.shape[3] != cfg.input_size:
            raise DimensionError(
                f"branch expects [N,{cfg.in_channels},{cfg.input_size},{cfg.input_size}] input, got {images.shape}"
            )
        if cfg.needs_masks() and masks is None:
            raise DataError("layout contains roi_mask stages but no masks were supplied")
        x = self.stem_conv(images)
        if self.stem_bn is not None:
            x = self.stem_bn(x, training)
        x = T.relu(x)
        if self.stem_pool:
            x = T.max_pool2d(x, kernel=3, stride=2, pad=1)
        for i, stage in enumerate(self.stages, start=1):
            x = stage(x, masks, training)
            if capture is not None:
                capture[f"stage{i}"] = x
        return T.global_avg_pool(x)

    def named_params(self) -> dict:
        params = self.stem_conv.named_params("aresnet.stem")
        if self.stem_bn is not None:
            params.update(self.stem_bn.named_params("aresnet.stem.bn"))
        for i, stage in enumerate(self.stages, start=1):
            params.update(stage.named_params(f"aresnet.stage{i}"))
        return params

    def named_buffers(self) -> dict:
        buffers = {}
        if self.stem_bn is not None:
            buffers.update(self.stem_bn.named_buffers("aresnet.stem.bn"))
        for i, stage in enumerate(self.stages, start=1):
            buffers.update(stage.named_buffers(f"aresnet.stage{i}"))
        return buffers

    def all_batchnorms(self) -> dict:
        """Batch-norm layers keyed by buffer prefix, for checkpoint restore."""
        norms = {}
        if self.stem_bn is not None:
            norms["aresnet.stem.bn"] = self.stem_bn
        for i, stage in enumerate(self.stages, start=1):
            for j, block in enumerate(stage.blocks, start=1):
                for tag, bn in (("bn1", block.bn1), ("bn2", block.bn2), ("bnp", block.bnp)):
                    if bn is not None:
                        norms[f"aresnet.stage{i}.block{j}.{tag}"] = bn
        return norms


def build_aresnet(config: AResNetConfig, seed: int) -> AResNetBranch:
    """Deterministic branch construction: same seed, bitwise-same parameters."""
    return AResNetBranch(config, np.random.default_rng(seed))
