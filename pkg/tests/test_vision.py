"""Slab grouping, encoder layers and the adapted 3D encoder."""

import pytest
import torch
from torch.autograd import gradcheck

from core.errors import ConfigError, InvalidInputError
from core.vision import (
    Attention,
    PatchMerge2D,
    VisionEncoder3D,
    VolumeTensor,
    add_positional,
    apply_rope_depth,
    build_encoder,
    depth_pool,
    embed_patches,
    encode_volume,
    group_slabs,
    init_source_weights,
    slice_group
)
from core.vision.encoder import attention_2d, attention_3d
from oracles import reference_2d_forward


class TestSlabs:
    def test_depth_multiple_of_three_is_regrouped_without_copying_values(self):
        volume = VolumeTensor(torch.rand(6, 8, 8))
        slabs = slice_group(volume)
        assert slabs.data.shape == (2, 3, 8, 8)
        assert torch.equal(slabs.data[1, 2], volume.data[5])

    def test_last_slice_is_edge_replicated(self):
        volume = VolumeTensor(torch.rand(4, 8, 8))
        slabs = slice_group(volume)
        assert slabs.n_slabs == 2
        for channel in range(3):
            assert torch.equal(slabs.data[1, channel], volume.data[3])

    def test_grouping_is_undone_exactly(self):
        volume = VolumeTensor(torch.rand(7, 8, 8))
        assert torch.equal(slice_group(volume).to_volume().data, volume.data)

    def test_single_slice_becomes_one_slab(self):
        slabs = group_slabs(torch.rand(2, 1, 8, 8))
        assert slabs.shape == (2, 1, 3, 8, 8)

    @pytest.mark.parametrize("data", [torch.rand(8, 8), torch.empty(0, 8, 8)])
    def test_bad_volume_shape_rejected(self, data):
        with pytest.raises(InvalidInputError):
            VolumeTensor(data)

    def test_non_finite_volume_rejected(self):
        data = torch.rand(3, 8, 8)
        data[1, 2, 3] = float("nan")
        with pytest.raises(InvalidInputError):
            VolumeTensor(data)


class TestLayers:
    def test_positional_table_must_match_grid(self):
        grid = torch.zeros(1, 2, 4, 4, 8)
        with pytest.raises(ConfigError):
            add_positional(grid, torch.zeros(8, 3, 3))

    def test_positional_table_is_shared_by_every_slab(self):
        table = torch.randn(8, 4, 4)
        out = add_positional(torch.zeros(1, 3, 4, 4, 8), table)
        assert torch.equal(out[0, 0], out[0, 2])
        assert torch.equal(out[0, 1, 2, 3], table[:, 2, 3])

    def test_rope_at_depth_zero_is_identity(self):
        q, k = torch.randn(5, 8), torch.randn(5, 8)
        rq, rk = apply_rope_depth(q, k, torch.zeros(5, dtype=torch.long))
        assert torch.equal(rq, q)
        assert torch.equal(rk, k)

    def test_rope_scores_depend_on_relative_depth_only(self, generator):
        q = torch.randn(2, 8, generator=generator, dtype=torch.float64)
        k = torch.randn(2, 8, generator=generator, dtype=torch.float64)

        def score(m, n):
            rq, rk = apply_rope_depth(q, k, torch.tensor([m, n]))
            return float(rq[0] @ rk[1])

        assert score(1, 4) == pytest.approx(score(6, 9), abs=1e-12)
        assert score(0, 2) == pytest.approx(score(5, 7), abs=1e-12)

    def test_rope_rejects_odd_head_dimension(self):
        with pytest.raises(ConfigError):
            apply_rope_depth(torch.randn(2, 5), torch.randn(2, 5), torch.arange(2))

    def test_merge_concatenates_blocks_in_row_major_order(self):
        merge = PatchMerge2D(1, 4)
        with torch.no_grad():
            merge.reduction.weight.copy_(torch.eye(4))
            merge.reduction.bias.zero_()
        grid = torch.arange(16.0).reshape(1, 1, 4, 4, 1)
        out = merge(grid)
        assert out.shape == (1, 1, 2, 2, 4)
        assert out[0, 0, 0, 0].tolist() == [0.0, 1.0, 4.0, 5.0]
        assert out[0, 0, 1, 1].tolist() == [10.0, 11.0, 14.0, 15.0]

    def test_merge_rejects_odd_grid(self):
        with pytest.raises(ConfigError):
            PatchMerge2D(2, 2)(torch.zeros(1, 1, 3, 4, 2))

    def test_depth_pool_averages_pairs_and_passes_the_remainder(self):
        grid = torch.arange(5.0).reshape(1, 5, 1, 1, 1)
        out = depth_pool(grid, 2)
        assert out.flatten().tolist() == [0.5, 2.5, 4.0]

    def test_depth_pool_leaves_single_slab_alone(self):
        grid = torch.randn(1, 1, 2, 2, 4)
        assert torch.equal(depth_pool(grid, 2), grid)


class TestGradients:
    def test_attention_with_depth_rope(self, generator):
        attn = Attention(8, 2).double()
        x = torch.randn(1, 6, 8, generator=generator, dtype=torch.float64, requires_grad=True)
        depth = torch.tensor([0, 0, 0, 1, 1, 1])
        assert gradcheck(lambda t: attn(t, depth), (x,), eps=1e-6, atol=1e-6, rtol=1e-4)

    def test_patch_merge(self, generator):
        merge = PatchMerge2D(3, 5).double()
        x = torch.randn(1, 2, 4, 4, 3, generator=generator, dtype=torch.float64, requires_grad=True)
        assert gradcheck(merge, (x,), eps=1e-6, atol=1e-6, rtol=1e-4)

    def test_depth_pool(self, generator):
        x = torch.randn(1, 5, 2, 2, 3, generator=generator, dtype=torch.float64, requires_grad=True)
        assert gradcheck(lambda t: depth_pool(t, 2), (x,), eps=1e-6, atol=1e-6, rtol=1e-4)


class TestEncoder:
    def test_three_slice_volume_reduces_to_the_2d_forward(self, tiny_2d_cfg, generator):
        weights = init_source_weights(tiny_2d_cfg, seed=3)
        encoder = build_encoder(tiny_2d_cfg, None, weights).eval()
        volumes = torch.rand(50, 3, 16, 16, generator=generator)

        with torch.no_grad():
            adapted = encoder(volumes).tokens
            reference = torch.stack([reference_2d_forward(v, weights, tiny_2d_cfg) for v in volumes])

        assert adapted.shape == reference.shape
        assert float((adapted - reference).abs().max()) < 1e-5

    def test_3d_attention_on_one_slab_equals_2d_attention(self, generator):
        attn = Attention(8, 2)
        grid = torch.randn(2, 1, 3, 3, 8, generator=generator)
        assert torch.allclose(attention_3d(grid, attn), attention_2d(grid, attn), atol=1e-6)

    def test_2d_layers_keep_slabs_independent(self, tiny_cfg, generator):
        flat = tiny_cfg.encoder.model_copy(update={"n_2d": 3, "n_3d": 0, "n_moe": 0, "depth_pool_kernel": 1})
        volumetric = tiny_cfg.encoder.model_copy(update={"n_moe": 0, "depth_pool_kernel": 1})
        volumes = torch.rand(1, 6, 16, 16, generator=generator)
        changed = volumes.clone()
        changed[0, 3:] = torch.rand(3, 16, 16, generator=generator)

        for cfg, should_mix in ((flat, False), (volumetric, True)):
            encoder = VisionEncoder3D(cfg).eval()
            with torch.no_grad():
                a = encoder(volumes).tokens[0, :1]
                b = encoder(changed).tokens[0, :1]
            assert torch.equal(a, b) is not should_mix

    def test_desk_encoder_token_count(self, desk_cfg):
        encoder = VisionEncoder3D(desk_cfg.encoder, desk_cfg.moe).eval()
        with torch.no_grad():
            tokens = encode_volume(VolumeTensor(torch.rand(12, 64, 64)), encoder)
        # 4 slabs of 4x4 patches, 2x2 after the merge, 2 slabs after pooling
        assert tokens.shape == (8, desk_cfg.encoder.output_dim)

    def test_patch_embedding_per_slab(self, tiny_2d_cfg):
        encoder = VisionEncoder3D(tiny_2d_cfg)
        grid = embed_patches(slice_group(VolumeTensor(torch.rand(6, 16, 16))), encoder)
        assert grid.data.shape == (2, 2, 2, tiny_2d_cfg.embed_dim)
        assert grid.depth_index.tolist() == [0, 1]

    def test_task_routed_encoder_needs_prompt_vector(self, tiny_cfg):
        encoder = VisionEncoder3D(tiny_cfg.encoder, tiny_cfg.moe)
        encoder.to_stage2(text_dim=tiny_cfg.lm.d_model)
        with pytest.raises(InvalidInputError):
            encode_volume(VolumeTensor(torch.rand(6, 16, 16)), encoder)

    def test_encoder_with_moe_needs_moe_config(self, tiny_cfg):
        with pytest.raises(ConfigError):
            VisionEncoder3D(tiny_cfg.encoder, None)
