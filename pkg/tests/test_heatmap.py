"""Heatmap computation and PNG export."""

import numpy as np
import pytest
from PIL import Image

from aresnet_vit.aresnet import AResNetConfig
from aresnet_vit.data import Normalizer, Sample, synth_generate
from aresnet_vit.errors import ConfigError
from aresnet_vit.fusion import ModelConfig, build_model
from aresnet_vit.heatmap import (
    _grad_cam,
    compute_heatmap,
    save_heatmap_png,
    save_overlay_png,
)
from aresnet_vit.training import assemble_batch
from aresnet_vit.vit import ViTConfig

NORM = Normalizer(mean=0.5, std=0.25)

CNN_TINY = ModelConfig(
    variant="network4",
    aresnet=AResNetConfig(
        input_size=16, stem_channels=4, stem_kind="tiny",
        stage_channels=(4, 8, 8, 8), blocks_per_stage=1,
        layout=("roi_mask",) * 4, ca_reduction=4,
    ),
    vit=None, head_hidden=8,
)

DUAL_TINY = ModelConfig(
    variant="aresnet-vit",
    aresnet=AResNetConfig(
        input_size=16, stem_channels=4, stem_kind="tiny",
        stage_channels=(4, 8, 8, 8), blocks_per_stage=1,
        layout=("roi_mask", "roi_mask", "channel", "channel"), ca_reduction=4,
    ),
    vit=ViTConfig(input_size=16, patch_size=8, embed_dim=16, heads=2, depth=2, mlp_ratio=2.0),
    head_hidden=8,
)


def sample_16(seed=0):
    return synth_generate(seed=seed, per_class=1, size=16)[0]


class TestGradCam:
    def test_contract_shape_and_range(self):
        model = build_model(DUAL_TINY, seed=1)
        s = sample_16()
        hm = compute_heatmap(model, s, NORM, method="grad-cam")
        assert hm.values.shape == s.image.shape
        assert hm.values.min() >= 0.0 and hm.values.max() <= 1.0
        assert hm.method == "grad-cam" and hm.sample_id == s.id

    def test_zero_mask_region_contributes_nothing(self):
        # stage 4 is RA-gated; zeroing the mask's bottom half zeroes the
        # gated features there, so the raw cam is exactly 0 on that half
        model = build_model(CNN_TINY, seed=2)
        s = sample_16(seed=3)
        half_mask = np.ones_like(s.mask)
        half_mask[8:, :] = 0.0
        gated = Sample(s.id, s.image, half_mask, s.label)
        images, masks, _ = assemble_batch([gated], NORM)
        cam = _grad_cam(model, images, masks)  # [2, 2] at stage-4 resolution
        np.testing.assert_array_equal(cam[1, :], np.zeros(2))

    def test_bitwise_deterministic(self):
        model = build_model(DUAL_TINY, seed=4)
        s = sample_16(seed=5)
        a = compute_heatmap(model, s, NORM, method="grad-cam")
        b = compute_heatmap(model, s, NORM, method="grad-cam")
        assert np.array_equal(a.values, b.values)

    def test_constant_map_is_flagged_zero(self):
        model = build_model(DUAL_TINY, seed=6)
        model.fc1.weight.data[...] = 0.0  # logit no longer depends on features
        hm = compute_heatmap(model, sample_16(seed=7), NORM, method="grad-cam")
        assert hm.constant
        np.testing.assert_array_equal(hm.values, np.zeros_like(hm.values))

    def test_needs_cnn_branch(self):
        vit_only = build_model(ModelConfig(
            variant="vit", aresnet=None,
            vit=ViTConfig(input_size=16, patch_size=8, embed_dim=16, heads=2, depth=1),
            head_hidden=8,
        ), seed=8)
        with pytest.raises(ConfigError):
            compute_heatmap(vit_only, sample_16(), NORM, method="grad-cam")


class TestAttentionRollout:
    def test_contract_shape_and_range(self):
        model = build_model(DUAL_TINY, seed=9)
        s = sample_16(seed=10)
        hm = compute_heatmap(model, s, NORM, method="attention-rollout")
        assert hm.values.shape == s.image.shape
        assert hm.values.min() >= 0.0 and hm.values.max() <= 1.0

    def test_needs_vit_branch(self):
        model = build_model(CNN_TINY, seed=11)
        with pytest.raises(ConfigError):
            compute_heatmap(model, sample_16(), NORM, method="attention-rollout")

    def test_unknown_method(self):
        model = build_model(DUAL_TINY, seed=12)
        with pytest.raises(ConfigError):
            compute_heatmap(model, sample_16(), NORM, method="saliency")


class TestPngExport:
    def test_grayscale_and_overlay_files(self, tmp_path):
        model = build_model(DUAL_TINY, seed=13)
        s = sample_16(seed=14)
        hm = compute_heatmap(model, s, NORM, method="grad-cam")
        gray = tmp_path / "map.png"
        overlay = tmp_path / "overlay.png"
        save_heatmap_png(gray, hm)
        save_overlay_png(overlay, hm, s.image)
        with Image.open(gray) as im:
            assert im.mode == "L" and im.size == s.image.shape[::-1]
        with Image.open(overlay) as im:
            assert im.mode == "RGB" and im.size == s.image.shape[::-1]

    def test_rerun_is_byte_identical(self, tmp_path):
        model = build_model(DUAL_TINY, seed=15)
        s = sample_16(seed=16)
        paths = []
        for tag in ("a", "b"):
            hm = compute_heatmap(model, s, NORM, method="attention-rollout")
            p = tmp_path / f"{tag}.png"
            save_heatmap_png(p, hm)
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()
