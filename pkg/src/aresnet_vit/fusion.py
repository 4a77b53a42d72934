"""Model assembly: one or both branches, feature concatenation, an MLP head
with sigmoid output, and the binary cross-entropy training loss.

Variant names are part of the CLI contract.  The architecture ablation grid
is {resnet18, vit, aresnet, resnet-vit, aresnet-vit}; the attention ablation
grid reuses the cnn-only variants network1..network5.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .aresnet import AResNetBranch, AResNetConfig, TINY_ARESNET, layout_for_preset
from .errors import ConfigError, ContractError, DataError
from .layers import Linear
from .tensor import Tensor
from .vit import VIT_PRESETS, ViTBranch, ViTConfig

BCE_EPS = 1e-7

# variant -> (attention preset for the CNN branch or None, include ViT branch)
VARIANTS = {
    "resnet18": ("network1", False),
    "vit": (None, True),
    "aresnet": ("network5", False),
    "resnet-vit": ("network1", True),
    "aresnet-vit": ("network5", True),
    "network1": ("network1", False),
    "network2": ("network2", False),
    "network3": ("network3", False),
    "network4": ("network4", False),
    "network5": ("network5", False),
}


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    aresnet: AResNetConfig | None
    vit: ViTConfig | None
    head_hidden: int = 256
    threshold: float = 0.5

    @property
    def input_size(self) -> int:
        branch = self.aresnet if self.aresnet is not None else self.vit
        return branch.input_size

    def needs_masks(self) -> bool:
        return self.aresnet is not None and self.aresnet.needs_masks()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant: unknown {self.variant!r}; choose one of {sorted(VARIANTS)}")
        cnn_preset, use_vit = VARIANTS[self.variant]
        if (cnn_preset is not None) != (self.aresnet is not None):
            raise ConfigError(f"variant: {self.variant!r} disagrees with the aresnet branch presence")
        if use_vit != (self.vit is not None):
            raise ConfigError(f"variant: {self.variant!r} disagrees with the vit branch presence")
        if self.aresnet is not None:
            self.aresnet.validate()
            if self.aresnet.layout != layout_for_preset(cnn_preset):
                raise ConfigError(f"aresnet.layout: does not match variant preset {cnn_preset!r}")
        if self.vit is not None:
            self.vit.validate()
        if self.aresnet is not None and self.vit is not None:
            if self.aresnet.input_size != self.vit.input_size:
                raise ConfigError(
                    f"input_size: branches disagree ({self.aresnet.input_size} vs {self.vit.input_size})"
                )
            if self.aresnet.in_channels != self.vit.in_channels:
                raise ConfigError("in_channels: branches disagree")
        if self.head_hidden < 1:
            raise ConfigError("head_hidden: must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold: must lie strictly inside (0, 1)")


def model_config_for(variant: str, scale: str = "tiny") -> ModelConfig:
    """Resolve a variant name plus a scale preset into a full model config."""
    if variant not in VARIANTS:
        raise ConfigError(f"variant: unknown {variant!r}; choose one of {sorted(VARIANTS)}")
    if scale not in ("tiny", "full"):
        raise ConfigError(f"scale: expected 'tiny' or 'full', got {scale!r}")
    cnn_preset, use_vit = VARIANTS[variant]
    if scale == "tiny":
        cnn_base, vit_cfg, hidden = TINY_ARESNET, VIT_PRESETS["vit-tiny"], 32
    else:
        cnn_base, vit_cfg, hidden = AResNetConfig(), VIT_PRESETS["vit-full"], 256
    aresnet = replace(cnn_base, layout=layout_for_preset(cnn_preset)) if cnn_preset else None
    return ModelConfig(
        variant=variant,
        aresnet=aresnet,
        vit=vit_cfg if use_vit else None,
        head_hidden=hidden,
    )


@dataclass
class Prediction:
    """A clamped probability and its thresholded hard label."""

    probability: float
    label: int


class FusionModel:
    """Branch features concatenated and classified by a small MLP head."""

    def __init__(self, config: ModelConfig, rng_branch_cnn, rng_branch_vit, rng_head):
        config.validate()
        self.config = config
        self.aresnet = AResNetBranch(config.aresnet, rng_branch_cnn) if config.aresnet else None
        self.vit = ViTBranch(config.vit, rng_branch_vit) if config.vit else None
        feature_dim = (self.aresnet.feature_dim if self.aresnet else 0) + (
            self.vit.feature_dim if self.vit else 0
        )
        self.feature_dim = feature_dim
        self.fc1 = Linear(rng_head, feature_dim, config.head_hidden)
        self.fc2 = Linear(rng_head, config.head_hidden, 1)

    def forward(self, images, masks=None, training: bool = False, capture: dict | None = None) -> Tensor:
        """Per-sample probability of the positive (malignant) class, [N]."""
        images = images if isinstance(images, Tensor) else Tensor(images)
        feats = []
        if self.aresnet is not None:
            feats.append(self.aresnet.forward(images, masks=masks, training=training, capture=capture))
        if self.vit is not None:
            feats.append(self.vit.forward(images, capture=capture))
        f = feats[0] if len(feats) == 1 else T.concat(feats, axis=1)
        logit = self.fc2(T.relu(self.fc1(f)))  # [N, 1]
        if capture is not None:
            capture["logit"] = logit
        return T.sigmoid(logit).reshape((images.shape[0],))

    def named_params(self) -> dict:
        params = {}
        if self.aresnet is not None:
            params.update(self.aresnet.named_params())
        if self.vit is not None:
            params.update(self.vit.named_params())
        params.update(self.fc1.named_params("head.fc1"))
        params.update(self.fc2.named_params("head.fc2"))
        return params

    def named_buffers(self) -> dict:
        return self.aresnet.named_buffers() if self.aresnet is not None else {}

    def all_batchnorms(self) -> dict:
        return self.aresnet.all_batchnorms() if self.aresnet is not None else {}


def build_model(config: ModelConfig, seed: int) -> FusionModel:
    """Deterministic model construction.

    Branches draw from independent child streams of the seed, so a variant
    that shares a branch with another (same seed, same branch config) gets
    bitwise-identical parameters for it.
    """
    children = np.random.SeedSequence(seed).spawn(3)
    rngs = [np.random.default_rng(s) for s in children]
    return FusionModel(config, rngs[0], rngs[1], rngs[2])


def bce_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross entropy over the batch; probabilities are clamped
    to [eps, 1-eps] before the log."""
    labels = np.asarray(labels)
    if probs.ndim != 1:
        raise ContractError(f"bce_loss expects a flat probability vector, got {probs.shape}")
    if probs.shape[0] == 0:
        raise ContractError("bce_loss: empty batch")
    if labels.shape != probs.shape:
        raise ContractError(f"bce_loss: {labels.shape} labels for {probs.shape} probabilities")
    if not np.all(np.isin(labels, (0, 1))):
        raise DataError(f"bce_loss: labels must be 0 or 1, got {sorted(set(labels.tolist()))}")
    y = Tensor(labels.astype(float))
    p = T.clip(probs, BCE_EPS, 1.0 - BCE_EPS)
    per_sample = T.add(T.mul(y, T.log(p)), T.mul(T.sub(1.0, y), T.log(T.sub(1.0, p))))
    return T.neg(T.mean(per_sample))


def model_config_to_dict(config: ModelConfig) -> dict:
    """JSON-ready echo of a model config (tuples become lists)."""
    import dataclasses
    import json

    return json.loads(json.dumps(dataclasses.asdict(config)))


def model_config_from_dict(d: dict) -> ModelConfig:
    def _tupled(sub: dict | None, cls):
        if sub is None:
            return None
        fixed = {k: tuple(v) if isinstance(v, list) else v for k, v in sub.items()}
        return cls(**fixed)

    try:
        return ModelConfig(
            variant=d["variant"],
            aresnet=_tupled(d.get("aresnet"), AResNetConfig),
            vit=_tupled(d.get("vit"), ViTConfig),
            head_hidden=d["head_hidden"],
            threshold=d.get("threshold", 0.5),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"model: malformed model config ({exc})") from exc


def predict(model: FusionModel, images, masks=None, threshold: float | None = None) -> list:
    """Threshold model probabilities into hard labels (p >= threshold -> 1)."""
    thr = model.config.threshold if threshold is None else threshold
    probs = model.forward(images, masks=masks, training=False)
    clamped = np.clip(probs.data, BCE_EPS, 1.0 - BCE_EPS)
    return [Prediction(probability=float(p), label=int(p >= thr)) for p in clamped]
