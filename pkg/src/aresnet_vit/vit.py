"""Global-feature branch: patchify, linear embedding with a class token and
learned position table, then a stack of pre-norm transformer blocks.  The
class token after the final layer norm is the branch output."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .layers import LayerNorm, Linear
from .tensor import Tensor


@dataclass(frozen=True)
class ViTConfig:
    input_size: int = 224
    in_channels: int = 1
    patch_size: int = 16
    embed_dim: int = 768
    heads: int = 12
    depth: int = 12
    mlp_ratio: float = 4.0

    @property
    def num_patches(self) -> int:
        side = self.input_size // self.patch_size
        return side * side

    @property
    def tokens(self) -> int:
        return 1 + self.num_patches

    def validate(self):
        if self.input_size % self.patch_size != 0:
            raise ConfigError(
                f"patch_size: input size {self.input_size} not divisible by patch size {self.patch_size}"
            )
        if self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"heads: embed dim {self.embed_dim} not divisible by {self.heads} heads"
            )
        if self.depth < 1:
            raise ConfigError("depth: must be >= 1")
        if self.mlp_ratio <= 0:
            raise ConfigError("mlp_ratio: must be > 0")


VIT_PRESETS = {
    "vit-full": ViTConfig(),
    "vit-tiny": ViTConfig(input_size=32, patch_size=8, embed_dim=64, heads=4, depth=4, mlp_ratio=2.0),
}


def patchify(images: Tensor, patch_size: int) -> Tensor:
    """Split [N,C,H,W] into row-major non-overlapping flattened patches
    [N, Np, C*P*P]."""
    images = images if isinstance(images, Tensor) else Tensor(images)
    n, c, h, w = images.shape
    p = patch_size
    if h % p != 0 or w % p != 0:
        raise ConfigError(f"patch_size: image {h}x{w} not divisible by patch size {p}")
    hp, wp = h // p, w // p
    x = images.reshape((n, c, hp, p, wp, p))
    x = T.transpose(x, (0, 2, 4, 1, 3, 5))  # [N, Hp, Wp, C, P, P]
    return x.reshape((n, hp * wp, c * p * p))


def unpatchify(patches: Tensor, channels: int, image_hw: tuple, patch_size: int) -> Tensor:
    """Exact inverse of patchify."""
    patches = patches if isinstance(patches, Tensor) else Tensor(patches)
    n = patches.shape[0]
    h, w = image_hw
    p = patch_size
    hp, wp = h // p, w // p
    x = patches.reshape((n, hp, wp, channels, p, p))
    x = T.transpose(x, (0, 3, 1, 4, 2, 5))  # [N, C, Hp, P, Wp, P]
    return x.reshape((n, channels, h, w))


class MultiHeadSelfAttention:
    """Scaled dot-product attention over h subspaces of the token dimension."""

    def __init__(self, rng, dim: int, heads: int):
        if dim % heads != 0:
            raise ConfigError(f"heads: dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(rng, dim, dim)
        self.wk = Linear(rng, dim, dim)
        self.wv = Linear(rng, dim, dim)
        self.wo = Linear(rng, dim, dim)

    def _split_heads(self, x: Tensor, n: int, t: int) -> Tensor:
        return T.transpose(x.reshape((n, t, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, seq: Tensor, attn_sink: list | None = None) -> Tensor:
        n, t, d = seq.shape
        if d != self.dim:
            raise DimensionError(f"sequence dim {d} does not match attention dim {self.dim}")
        q = self._split_heads(self.wq(seq), n, t)  # [N, h, T, dh]
        k = self._split_heads(self.wk(seq), n, t)
        v = self._split_heads(self.wv(seq), n, t)
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(self.head_dim))
        attn = T.softmax_rows(scores)  # rows sum to 1
        if attn_sink is not None:
            attn_sink.append(attn.data.copy())
        out = T.matmul(attn, v)  # [N, h, T, dh]
        out = T.transpose(out, (0, 2, 1, 3)).reshape((n, t, d))
        return self.wo(out)

    def named_params(self, prefix: str) -> dict:
        params = {}
        for tag, layer in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            params.update(layer.named_params(f"{prefix}.{tag}"))
        return params


class TransformerBlock:
    """Pre-norm residual block: x += MHSA(LN(x)); x += FFN(LN(x))."""

    def __init__(self, rng, dim: int, heads: int, mlp_ratio: float):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(rng, dim, heads)
        self.ln2 = LayerNorm(dim)
        hidden = int(round(dim * mlp_ratio))
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, dim)

    def __call__(self, seq: Tensor, attn_sink: list | None = None) -> Tensor:
        x = T.add(seq, self.attn(self.ln1(seq), attn_sink))
        return T.add(x, self.fc2(T.gelu(self.fc1(self.ln2(x)))))

    def named_params(self, prefix: str) -> dict:
        params = {}
        params.update(self.ln1.named_params(f"{prefix}.ln1"))
        params.update(self.attn.named_params(f"{prefix}.attn"))
        params.update(self.ln2.named_params(f"{prefix}.ln2"))
        params.update(self.fc1.named_params(f"{prefix}.fc1"))
        params.update(self.fc2.named_params(f"{prefix}.fc2"))
        return params


class ViTBranch:
    """Transformer branch producing a [N, D] global feature (class token)."""

    def __init__(self, config: ViTConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        d = config.embed_dim
        patch_features = config.in_channels * config.patch_size**2
        self.embed = Linear(rng, patch_features, d)
        self.cls_token = Tensor(rng.normal(0.0, 0.02, size=(1, 1, d)), requires_grad=True)
        self.positions = Tensor(rng.normal(0.0, 0.02, size=(config.tokens, d)), requires_grad=True)
        self.blocks = [TransformerBlock(rng, d, config.heads, config.mlp_ratio) for _ in range(config.depth)]
        self.final_ln = LayerNorm(d)

    @property
    def feature_dim(self) -> int:
        return self.config.embed_dim

    def embed_with_positions(self, patches: Tensor) -> Tensor:
        """[N, Np, C*P*P] -> [N, 1+Np, D]: class token prepended, position
        table added exactly once."""
        expected = self.config.in_channels * self.config.patch_size**2
        if patches.shape[-1] != expected:
            raise DimensionError(
                f"patch feature length {patches.shape[-1]} does not match embedding input {expected}"
            )
        n = patches.shape[0]
        tokens = self.embed(patches)
        cls = T.broadcast_to(self.cls_token, (n, 1, self.config.embed_dim))
        seq = T.concat([cls, tokens], axis=1)
        return T.add(seq, self.positions)

    def forward(self, images: Tensor, capture: dict | None = None) -> Tensor:
        cfg = self.config
        images = images if isinstance(images, Tensor) else Tensor(images)
        if images.shape[2] != cfg.input_size or images.shape[3] != cfg.input_size:
            raise DimensionError(
                f"branch expects {cfg.input_size}x{cfg.input_size} images, got {images.shape}"
            )
        seq = self.embed_with_positions(patchify(images, cfg.patch_size))
        attn_sink = [] if capture is not None else None
        for block in self.blocks:
            seq = block(seq, attn_sink)
        seq = self.final_ln(seq)
        if capture is not None:
            capture["attention"] = attn_sink
        return seq[:, 0, :]

    def named_params(self) -> dict:
        params = {"vit.cls_token": self.cls_token, "vit.positions": self.positions}
        params.update(self.embed.named_params("vit.embed"))
        for i, block in enumerate(self.blocks, start=1):
            params.update(block.named_params(f"vit.block{i}"))
        params.update(self.final_ln.named_params("vit.final_ln"))
        return params


def build_vit(config: ViTConfig, seed: int) -> ViTBranch:
    """Deterministic branch construction: same seed, bitwise-same parameters."""
    return ViTBranch(config, np.random.default_rng(seed))
