"""Global branch: patchify, embedding, attention, blocks, end-to-end."""

import numpy as np
import pytest

from aresnet_vit import tensor as T
from aresnet_vit.errors import ConfigError, DimensionError
from aresnet_vit.tensor import Tensor
from aresnet_vit.vit import (
    VIT_PRESETS,
    MultiHeadSelfAttention,
    TransformerBlock,
    ViTConfig,
    build_vit,
    patchify,
    unpatchify,
)

from oracles import assert_close_to_fd, finite_difference

TINY = VIT_PRESETS["vit-tiny"]
GRADCHECK_CFG = ViTConfig(input_size=16, patch_size=8, embed_dim=16, heads=2, depth=1, mlp_ratio=2.0)


class TestPatchify:
    def test_full_geometry(self):
        cfg = VIT_PRESETS["vit-full"]
        assert cfg.patch_size == 16 and cfg.input_size == 224
        assert cfg.num_patches == 196 and cfg.depth == 12

    def test_patch_count(self):
        x = Tensor(np.zeros((2, 1, 224, 224)))
        assert patchify(x, 16).shape == (2, 196, 256)

    def test_single_patch_is_flattened_image(self):
        img = np.random.default_rng(0).random((1, 2, 8, 8))
        out = patchify(Tensor(img), 8)
        assert out.shape == (1, 1, 128)
        np.testing.assert_array_equal(out.data[0, 0], img.reshape(-1))

    def test_roundtrip_is_bitwise_identity(self):
        img = np.random.default_rng(1).random((2, 3, 16, 16))
        back = unpatchify(patchify(Tensor(img), 4), channels=3, image_hw=(16, 16), patch_size=4)
        assert np.array_equal(back.data, img)

    def test_indivisible_dimensions(self):
        with pytest.raises(ConfigError):
            patchify(Tensor(np.zeros((1, 1, 10, 10))), 4)

    def test_row_major_patch_order(self):
        img = np.arange(16.0).reshape(1, 1, 4, 4)
        patches = patchify(Tensor(img), 2).data[0]
        np.testing.assert_array_equal(patches[0], [0, 1, 4, 5])     # top-left
        np.testing.assert_array_equal(patches[1], [2, 3, 6, 7])     # top-right
        np.testing.assert_array_equal(patches[2], [8, 9, 12, 13])   # bottom-left


class TestEmbedding:
    def test_zero_params_give_zero_sequence(self):
        branch = build_vit(TINY, seed=0)
        branch.embed.weight.data[...] = 0.0
        branch.cls_token.data[...] = 0.0
        branch.positions.data[...] = 0.0
        patches = Tensor(np.zeros((2, TINY.num_patches, TINY.patch_size**2)))
        seq = branch.embed_with_positions(patches)
        np.testing.assert_array_equal(seq.data, np.zeros((2, TINY.tokens, TINY.embed_dim)))

    def test_shape_contract(self):
        branch = build_vit(TINY, seed=1)
        patches = Tensor(np.random.default_rng(2).random((3, TINY.num_patches, TINY.patch_size**2)))
        assert branch.embed_with_positions(patches).shape == (3, TINY.tokens, TINY.embed_dim)

    def test_position_table_added_once(self):
        branch = build_vit(TINY, seed=3)
        branch.embed.weight.data[...] = 0.0
        branch.embed.bias.data[...] = 0.0
        branch.cls_token.data[...] = 0.0
        patches = Tensor(np.zeros((1, TINY.num_patches, TINY.patch_size**2)))
        seq = branch.embed_with_positions(patches)
        np.testing.assert_array_equal(seq.data[0], branch.positions.data)

    def test_permutation_equivariance_with_zeroed_positions(self):
        branch = build_vit(TINY, seed=4)
        branch.positions.data[...] = 0.0
        rng = np.random.default_rng(5)
        patches = rng.random((1, TINY.num_patches, TINY.patch_size**2))
        for _ in range(5):
            perm = rng.permutation(TINY.num_patches)
            base = branch.embed_with_positions(Tensor(patches)).data
            permuted = branch.embed_with_positions(Tensor(patches[:, perm])).data
            np.testing.assert_array_equal(permuted[:, 1:], base[:, 1:][:, perm])
            np.testing.assert_array_equal(permuted[:, 0], base[:, 0])

    def test_length_mismatch(self):
        branch = build_vit(TINY, seed=6)
        with pytest.raises(DimensionError):
            branch.embed_with_positions(Tensor(np.zeros((1, TINY.num_patches, 7))))


class TestMultiHeadSelfAttention:
    def test_rows_sum_to_one(self):
        mhsa = MultiHeadSelfAttention(np.random.default_rng(0), dim=8, heads=2)
        sink = []
        mhsa(Tensor(np.random.default_rng(1).standard_normal((2, 5, 8))), attn_sink=sink)
        attn = sink[0]
        np.testing.assert_allclose(attn.sum(axis=-1), np.ones((2, 2, 5)), atol=1e-6)
        assert np.all(attn >= 0)

    def test_single_token_attends_to_itself(self):
        mhsa = MultiHeadSelfAttention(np.random.default_rng(2), dim=4, heads=1)
        x = np.random.default_rng(3).standard_normal((1, 1, 4))
        sink = []
        out = mhsa(Tensor(x), attn_sink=sink)
        np.testing.assert_array_equal(sink[0], np.ones((1, 1, 1, 1)))
        v = x[0] @ mhsa.wv.weight.data + mhsa.wv.bias.data
        want = v @ mhsa.wo.weight.data + mhsa.wo.bias.data
        np.testing.assert_allclose(out.data[0], want, rtol=1e-12)

    def test_hand_evaluated_two_tokens(self):
        mhsa = MultiHeadSelfAttention(np.random.default_rng(4), dim=2, heads=1)
        wq = np.array([[1.0, 0.0], [0.0, 1.0]])
        wk = np.array([[0.5, -0.5], [1.0, 0.5]])
        wv = np.array([[2.0, 0.0], [0.0, -1.0]])
        wo = np.array([[1.0, 1.0], [0.0, 2.0]])
        for layer, w in ((mhsa.wq, wq), (mhsa.wk, wk), (mhsa.wv, wv), (mhsa.wo, wo)):
            layer.weight.data[...] = w
            layer.bias.data[...] = 0.0
        x = np.array([[[1.0, 2.0], [-1.0, 0.5]]])

        q = x[0] @ wq
        k = x[0] @ wk
        v = x[0] @ wv
        scores = q @ k.T / np.sqrt(2.0)
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        attn = e / e.sum(axis=1, keepdims=True)
        want = (attn @ v) @ wo

        out = mhsa(Tensor(x))
        np.testing.assert_allclose(out.data[0], want, rtol=1e-10)

    def test_divisibility_violation(self):
        with pytest.raises(ConfigError):
            MultiHeadSelfAttention(np.random.default_rng(5), dim=6, heads=4)


class TestTransformerBlock:
    def test_zero_weights_make_identity(self):
        block = TransformerBlock(np.random.default_rng(6), dim=8, heads=2, mlp_ratio=2.0)
        for p in block.attn.named_params("a").values():
            p.data[...] = 0.0
        for p in {**block.fc1.named_params("f"), **block.fc2.named_params("f")}.values():
            p.data[...] = 0.0
        x = np.random.default_rng(7).standard_normal((2, 4, 8))
        out = block(Tensor(x))
        np.testing.assert_array_equal(out.data, x)

    def test_shape_preserved(self):
        block = TransformerBlock(np.random.default_rng(8), dim=8, heads=4, mlp_ratio=1.5)
        x = Tensor(np.random.default_rng(9).standard_normal((3, 5, 8)))
        assert block(x).shape == (3, 5, 8)

    def test_matches_composed_oracle(self):
        block = TransformerBlock(np.random.default_rng(10), dim=4, heads=2, mlp_ratio=2.0)
        x = np.random.default_rng(11).standard_normal((1, 3, 4))
        got = block(Tensor(x)).data

        h = T.layer_norm(Tensor(x), block.ln1.gamma, block.ln1.beta)
        h = T.add(Tensor(x), block.attn(h))
        f = T.layer_norm(h, block.ln2.gamma, block.ln2.beta)
        f = T.matmul(f, block.fc1.weight)
        f = T.gelu(T.add(f, block.fc1.bias))
        f = T.add(T.matmul(f, block.fc2.weight), block.fc2.bias)
        want = T.add(h, f).data
        np.testing.assert_allclose(got, want, rtol=1e-10)

    def test_permutation_invariance_of_mean_pooled_output(self):
        # without positions or class token, mean-pooled output must not
        # depend on patch order
        block = TransformerBlock(np.random.default_rng(12), dim=6, heads=2, mlp_ratio=2.0)
        rng = np.random.default_rng(13)
        tokens = rng.standard_normal((1, 8, 6))
        base = block(Tensor(tokens)).data.mean(axis=1)
        for _ in range(5):
            perm = rng.permutation(8)
            permuted = block(Tensor(tokens[:, perm])).data.mean(axis=1)
            np.testing.assert_allclose(permuted, base, atol=1e-10)


class TestViTForward:
    def test_output_shape(self):
        branch = build_vit(TINY, seed=20)
        out = branch.forward(Tensor(np.random.default_rng(0).random((2, 1, 32, 32))))
        assert out.shape == (2, TINY.embed_dim)

    def test_determinism_under_fixed_seed(self):
        x = np.random.default_rng(1).random((1, 1, 32, 32))
        a = build_vit(TINY, seed=21).forward(Tensor(x)).data
        b = build_vit(TINY, seed=21).forward(Tensor(x)).data
        assert np.array_equal(a, b)

    def test_depth_matches_config(self):
        branch = build_vit(TINY, seed=22)
        assert len(branch.blocks) == TINY.depth == 4
        assert len(build_vit(GRADCHECK_CFG, seed=0).blocks) == 1

    def test_attention_capture_covers_all_blocks(self):
        branch = build_vit(TINY, seed=23)
        capture = {}
        branch.forward(Tensor(np.zeros((1, 1, 32, 32))), capture=capture)
        assert len(capture["attention"]) == TINY.depth
        assert capture["attention"][0].shape == (1, TINY.heads, TINY.tokens, TINY.tokens)

    def test_end_to_end_finite_differences(self):
        branch = build_vit(GRADCHECK_CFG, seed=24)
        x = np.random.default_rng(2).random((2, 1, 16, 16))
        params = branch.named_params()
        names = sorted(params)
        w = np.random.default_rng(3).standard_normal((2, GRADCHECK_CFG.embed_dim))

        def loss_tensor():
            return T.sum(T.mul(branch.forward(Tensor(x)), Tensor(w)))

        with T.Tape() as tape:
            loss = loss_tensor()
        grads = T.backward(loss, tape)

        rng = np.random.default_rng(4)
        picked = [params[n] for n in rng.choice(names, size=10, replace=False)]
        fd = finite_difference(lambda: loss_tensor().item(), [p.data for p in picked],
                               eps=1e-6, entries=3, rng=rng)
        for p, entries in zip(picked, fd):
            assert_close_to_fd(grads[p], entries)
