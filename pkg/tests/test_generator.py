"""Generation stack: pyramids, attention arithmetic, stage wiring, editors."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from memeface.generator import (
    Generator,
    InitialStage,
    NextStage,
    PatternEditor,
    PatternPyramid,
    WordAttention,
    build_pattern_pyramid,
    sample_noise,
    stack_pyramids,
)


def _pyramid_batch(cfg, batch, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return [
        torch.rand(batch, cfg.channels, r, r, generator=gen) * 1.6 - 0.8
        for r in cfg.stage_resolutions()
    ]


# ---------------------------------------------------------------- pyramids


def test_build_pyramid_levels_double_in_resolution(tiny_cfg):
    template = np.random.default_rng(0).uniform(-1, 1, size=(3, 32, 32))
    pyr = build_pattern_pyramid(template, tiny_cfg.stages, tiny_cfg.base_resolution)
    assert [lvl.shape for lvl in pyr.levels] == [(3, 8, 8), (3, 16, 16)]
    pyr.validate(tiny_cfg.stages, tiny_cfg.base_resolution, tiny_cfg.channels)


def test_build_pyramid_constant_template_stays_constant(tiny_cfg):
    template = np.full((3, 32, 32), 0.25)
    pyr = build_pattern_pyramid(template, tiny_cfg.stages, tiny_cfg.base_resolution)
    for lvl in pyr.levels:
        np.testing.assert_allclose(lvl, 0.25, atol=1e-6)


def test_build_pyramid_block_mean_oracle():
    # 16x16 template whose left half is -1 and right half +1: every level
    # must preserve the halves exactly under area averaging
    template = np.ones((3, 16, 16))
    template[:, :, :8] = -1.0
    pyr = build_pattern_pyramid(template, stages=2, base_resolution=8)
    for lvl in pyr.levels:
        side = lvl.shape[-1]
        np.testing.assert_allclose(lvl[:, :, : side // 2], -1.0, atol=1e-6)
        np.testing.assert_allclose(lvl[:, :, side // 2:], 1.0, atol=1e-6)


def test_build_pyramid_rejects_small_template(tiny_cfg):
    small = np.zeros((3, 8, 8))
    with pytest.raises(ValueError):
        build_pattern_pyramid(small, tiny_cfg.stages, tiny_cfg.base_resolution)


def test_pyramid_validate_rejects_wrong_shape(tiny_cfg):
    pyr = PatternPyramid(levels=[np.zeros((3, 8, 8))], cluster_id=0, source_path="")
    with pytest.raises(ValueError):
        pyr.validate(tiny_cfg.stages, tiny_cfg.base_resolution, tiny_cfg.channels)
    bad_range = PatternPyramid(
        levels=[np.full((3, 8, 8), 2.0), np.zeros((3, 16, 16))],
        cluster_id=0,
        source_path="",
    )
    with pytest.raises(ValueError):
        bad_range.validate(tiny_cfg.stages, tiny_cfg.base_resolution, tiny_cfg.channels)


def test_stack_pyramids_batches_levels(tiny_cfg):
    template = np.zeros((3, 32, 32))
    pyr = build_pattern_pyramid(template, tiny_cfg.stages, tiny_cfg.base_resolution)
    stacked = stack_pyramids([pyr, pyr, pyr])
    assert stacked[0].shape == (3, 3, 8, 8)
    assert stacked[1].shape == (3, 3, 16, 16)


# --------------------------------------------------------------- attention


def test_attention_softmax_closed_form():
    # identity projection, one spatial location; scores are plain dot
    # products, so crafted values (0, ln 3) must give weights (1/4, 3/4)
    attn = WordAttention(d_text=2, d_hidden=2).double()
    with torch.no_grad():
        attn.project.weight.copy_(torch.eye(2)[:, :, None])
    hidden = torch.tensor([1.0, 0.0], dtype=torch.float64).view(1, 2, 1, 1)
    words = torch.tensor(
        [[0.0, math.log(3.0)], [5.0, 0.0]], dtype=torch.float64
    )  # word 0 = (0, 5), word 1 = (ln3, 0)
    context, weights = attn(words.unsqueeze(0), hidden)
    assert weights.shape == (1, 2, 1)
    np.testing.assert_allclose(
        weights[0, :, 0].detach().numpy(), [0.25, 0.75], atol=1e-12
    )
    expected_context = 0.25 * words[:, 0] + 0.75 * words[:, 1]
    np.testing.assert_allclose(
        context[0, :, 0, 0].detach().numpy(), expected_context.numpy(), atol=1e-12
    )


def test_attention_masks_padded_words():
    attn = WordAttention(d_text=4, d_hidden=4)
    words = torch.randn(2, 4, 5)
    hidden = torch.randn(2, 4, 2, 2)
    lengths = torch.tensor([3, 1])
    _, weights = attn(words, hidden, lengths)
    assert torch.all(weights[0, 3:, :] == 0)
    assert torch.all(weights[1, 1:, :] == 0)
    # a single valid word receives all the mass everywhere
    assert torch.allclose(weights[1, 0, :], torch.ones(4))


def test_attention_requires_words():
    attn = WordAttention(d_text=4, d_hidden=4)
    with pytest.raises(ValueError):
        attn(torch.zeros(1, 4, 0), torch.randn(1, 4, 2, 2))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 10_000))
def test_attention_columns_sum_to_one(t, hw, seed):
    gen = torch.Generator().manual_seed(seed)
    attn = WordAttention(d_text=4, d_hidden=4)
    words = torch.randn(2, 4, t, generator=gen)
    hidden = torch.randn(2, 4, hw, hw, generator=gen)
    _, weights = attn(words, hidden)
    sums = weights.sum(dim=1)
    assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)


# ------------------------------------------------------------ stage wiring


def test_initial_stage_shape_and_nonfinite_reject(tiny_cfg):
    stage = InitialStage(tiny_cfg.d_cond, tiny_cfg.d_z, tiny_cfg.d_hidden, 8)
    h = stage(torch.randn(2, tiny_cfg.d_cond), torch.randn(2, tiny_cfg.d_z))
    assert h.shape == (2, tiny_cfg.d_hidden, 8, 8)
    with pytest.raises(ValueError):
        stage(torch.full((1, tiny_cfg.d_cond), float("inf")), torch.randn(1, tiny_cfg.d_z))


def test_next_stage_doubles_resolution(tiny_cfg):
    stage = NextStage(tiny_cfg.d_hidden)
    h = torch.randn(2, tiny_cfg.d_hidden, 8, 8)
    out = stage(h, torch.randn(2, tiny_cfg.d_hidden, 8, 8))
    assert out.shape == (2, tiny_cfg.d_hidden, 16, 16)
    with pytest.raises(ValueError):
        stage(h, torch.randn(2, tiny_cfg.d_hidden, 4, 4))


def test_editor_rejects_mismatched_inputs(tiny_cfg):
    editor = PatternEditor(3, tiny_cfg.d_hidden, 8)
    image = torch.randn(1, 3, 8, 8)
    with pytest.raises(ValueError):
        editor(image, torch.randn(1, 3, 16, 16))
    with pytest.raises(ValueError):
        editor(torch.randn(1, 3, 16, 16), torch.randn(1, 3, 16, 16))
    with pytest.raises(ValueError):
        PatternEditor(3, 4, 6)


def test_editor_output_shape_and_range(tiny_cfg):
    editor = PatternEditor(3, tiny_cfg.d_hidden, 16)
    out = editor(torch.randn(2, 3, 16, 16), torch.randn(2, 3, 16, 16))
    assert out.shape == (2, 3, 16, 16)
    assert out.abs().max() <= 1.0


def test_generator_stage_contract(tiny_cfg):
    torch.manual_seed(0)
    gen = Generator(tiny_cfg)
    b, t = 3, 4
    cond = torch.randn(b, tiny_cfg.d_cond)
    z = torch.randn(b, tiny_cfg.d_z)
    words = torch.randn(b, tiny_cfg.d_text, t)
    lengths = torch.tensor([4, 2, 3])
    out = gen(cond, z, words, _pyramid_batch(tiny_cfg, b), lengths)
    m = tiny_cfg.stages
    assert len(out.hidden) == len(out.pre_edit) == len(out.edited) == m
    assert len(out.attention_maps) == m
    for i, r in enumerate(tiny_cfg.stage_resolutions()):
        assert out.pre_edit[i].shape == (b, 3, r, r)
        assert out.edited[i].shape == (b, 3, r, r)
        assert out.attention_maps[i].shape == (b, t, r * r)
        assert out.pre_edit[i].abs().max() <= 1.0
        assert out.edited[i].abs().max() <= 1.0


def test_generator_rejects_wrong_pattern_levels(tiny_cfg):
    gen = Generator(tiny_cfg)
    b = 1
    cond = torch.randn(b, tiny_cfg.d_cond)
    z = torch.randn(b, tiny_cfg.d_z)
    words = torch.randn(b, tiny_cfg.d_text, 3)
    levels = _pyramid_batch(tiny_cfg, b)
    with pytest.raises(ValueError):
        gen(cond, z, words, levels[:1])
    with pytest.raises(ValueError):
        gen(cond, z, words, [levels[1], levels[0]])


def test_pattern_changes_every_stage_output(tiny_cfg):
    torch.manual_seed(3)
    gen = Generator(tiny_cfg)
    b = 2
    cond = torch.randn(b, tiny_cfg.d_cond)
    z = torch.randn(b, tiny_cfg.d_z)
    words = torch.randn(b, tiny_cfg.d_text, 3)
    out_a = gen(cond, z, words, _pyramid_batch(tiny_cfg, b, seed=1))
    out_b = gen(cond, z, words, _pyramid_batch(tiny_cfg, b, seed=2))
    for xa, xb in zip(out_a.edited, out_b.edited):
        assert (xa - xb).abs().mean() > 0
    # the pre-edit imagery never sees the pattern
    for xa, xb in zip(out_a.pre_edit, out_b.pre_edit):
        assert torch.equal(xa, xb)


def test_sample_noise_uniform_bounds_and_determinism(tiny_cfg):
    a = sample_noise(64, tiny_cfg, generator=torch.Generator().manual_seed(5))
    b = sample_noise(64, tiny_cfg, generator=torch.Generator().manual_seed(5))
    assert torch.equal(a, b)
    assert a.shape == (64, tiny_cfg.d_z)
    assert a.min() >= -1.0 and a.max() <= 1.0
    # enough draws to land in both halves of the support
    assert a.min() < 0 < a.max()
