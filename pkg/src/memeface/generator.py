"""Stacked attentional generator with per-stage template editing.

Stage i emits a raw image from its feature map, then an editing head fuses
that image with the template pattern rendered at the same resolution. All
emitted images use the [-1, 1] channel-first convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .imageio import center_square_crop, load_image, resize_area


def _gn(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(channels, 8), channels)


def conv3x3(cin: int, cout: int, stride: int = 1, bias: bool = True) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, kernel_size=3, stride=stride, padding=1, bias=bias)


def up_block(cin: int, cout: int) -> nn.Sequential:
    # nearest-neighbor resize + conv avoids checkerboard artifacts;
    # no conv bias: the normalization would cancel it exactly
    return nn.Sequential(
        nn.Upsample(scale_factor=2, mode="nearest"),
        conv3x3(cin, cout, bias=False),
        _gn(cout),
        nn.ReLU(inplace=True),
    )


def down_block(cin: int, cout: int, norm: bool = True) -> nn.Sequential:
    layers: list[nn.Module] = [
        nn.Conv2d(cin, cout, kernel_size=4, stride=2, padding=1, bias=not norm)
    ]
    if norm:
        layers.append(_gn(cout))
    layers.append(nn.LeakyReLU(0.2, inplace=True))
    return nn.Sequential(*layers)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            conv3x3(channels, channels, bias=False),
            _gn(channels),
            nn.ReLU(inplace=True),
            conv3x3(channels, channels, bias=False),
            _gn(channels),
        )

    def forward(self, x):
        return x + self.body(x)


@dataclass
class PatternPyramid:
    """One template rendered at every stage resolution (coarse to fine)."""

    levels: list[np.ndarray]
    cluster_id: int = -1
    source_path: str = ""

    def validate(self, stages: int, base_resolution: int, channels: int) -> None:
        if len(self.levels) != stages:
            raise ValueError(f"expected {stages} pyramid levels, got {len(self.levels)}")
        for i, level in enumerate(self.levels):
            r = base_resolution * 2 ** i
            if level.shape != (channels, r, r):
                raise ValueError(
                    f"pyramid level {i} has shape {level.shape}, expected {(channels, r, r)}"
                )
            if level.min() < -1.0 or level.max() > 1.0:
                raise ValueError(f"pyramid level {i} has pixels outside [-1, 1]")

    def level_tensors(self, dtype=torch.float32, device=None) -> list[torch.Tensor]:
        return [
            torch.as_tensor(lv, dtype=dtype, device=device).unsqueeze(0)
            for lv in self.levels
        ]


def build_pattern_pyramid(
    template: np.ndarray | str | Path,
    stages: int,
    base_resolution: int,
    cluster_id: int = -1,
    source_path: str = "",
) -> PatternPyramid:
    """Render a template image at every stage resolution by area averaging.

    The template must be at least as large as the top stage resolution;
    non-square inputs are center-cropped square first.
    """
    if isinstance(template, (str, Path)):
        source_path = source_path or str(template)
        template = load_image(template)
    arr = np.asarray(template, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError("template must be a [C, H, W] array")
    top = base_resolution * 2 ** (stages - 1)
    _, h, w = arr.shape
    if min(h, w) < top:
        raise ValueError(
            f"template resolution {h}x{w} is below the top stage resolution {top}"
        )
    square = center_square_crop(arr)
    levels = [
        np.clip(resize_area(square, base_resolution * 2 ** i), -1.0, 1.0)
        for i in range(stages)
    ]
    return PatternPyramid(levels=levels, cluster_id=cluster_id, source_path=source_path)


@dataclass
class StageOutputs:
    """All intermediates of one generation pass (batched tensors).

    attention_maps[i] holds the word-attention weights read on the stage-i
    feature map: [B, T, R_i * R_i] with columns summing to one. The map on
    the last stage is a read-out for inspection; earlier maps also provide
    the context that drives the following stage.
    """

    hidden: list[torch.Tensor] = field(default_factory=list)
    pre_edit: list[torch.Tensor] = field(default_factory=list)
    edited: list[torch.Tensor] = field(default_factory=list)
    attention_maps: list[torch.Tensor] = field(default_factory=list)


class InitialStage(nn.Module):
    """(condition, noise) -> base feature map at [d_hidden, R0, R0]."""

    def __init__(self, d_cond: int, d_z: int, d_hidden: int, base_resolution: int):
        super().__init__()
        self.base_resolution = base_resolution
        self.d_hidden = d_hidden
        self.fc = nn.Linear(d_cond + d_z, d_hidden * 4 * 4 * 2)
        n_up = int(math.log2(base_resolution // 4))
        self.up = nn.Sequential(*[up_block(d_hidden, d_hidden) for _ in range(n_up)])

    def forward(self, cond: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        if not (torch.isfinite(cond).all() and torch.isfinite(z).all()):
            raise ValueError("non-finite inputs to the initial stage")
        x = F.glu(self.fc(torch.cat([cond, z], dim=1)), dim=1)
        x = x.view(-1, self.d_hidden, 4, 4)
        return self.up(x)


class WordAttention(nn.Module):
    """Per-location softmax over words; context lives in the hidden space."""

    def __init__(self, d_text: int, d_hidden: int):
        super().__init__()
        self.project = nn.Conv1d(d_text, d_hidden, kernel_size=1, bias=False)

    def forward(
        self,
        word_features: torch.Tensor,
        hidden: torch.Tensor,
        lengths: torch.Tensor | None = None,
    ):
        """word_features: [B, d_text, T]; hidden: [B, d_hidden, H, W].

        Returns (context [B, d_hidden, H, W], weights [B, T, H*W]); every
        weights column sums to one over the valid words.
        """
        if word_features.shape[-1] == 0:
            raise ValueError("attention requires at least one word")
        b, c, h, w = hidden.shape
        words = self.project(word_features)               # [B, d_hidden, T]
        scores = torch.bmm(words.transpose(1, 2), hidden.flatten(2))  # [B, T, HW]
        if lengths is not None:
            t = word_features.shape[-1]
            pad = torch.arange(t, device=hidden.device)[None, :] >= lengths[:, None].to(hidden.device)
            scores = scores.masked_fill(pad[:, :, None], float("-inf"))
        weights = torch.softmax(scores, dim=1)
        context = torch.bmm(words, weights)               # [B, d_hidden, HW]
        return context.view(b, c, h, w), weights


class NextStage(nn.Module):
    """Fuses previous features with word context; doubles the resolution."""

    def __init__(self, d_hidden: int, n_residual: int = 2):
        super().__init__()
        joint = 2 * d_hidden
        self.residual = nn.Sequential(*[ResidualBlock(joint) for _ in range(n_residual)])
        self.up = up_block(joint, d_hidden)

    def forward(self, h_prev: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        if h_prev.shape[-2:] != context.shape[-2:]:
            raise ValueError(
                f"resolution mismatch: features {tuple(h_prev.shape[-2:])} vs "
                f"context {tuple(context.shape[-2:])}"
            )
        x = torch.cat([h_prev, context], dim=1)
        return self.up(self.residual(x))


class ImageHead(nn.Module):
    """Feature map -> image in [-1, 1]."""

    def __init__(self, d_hidden: int, channels: int):
        super().__init__()
        self.conv = conv3x3(d_hidden, channels)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.conv(h))


class PatternEditor(nn.Module):
    """Fuses a stage image with the template pattern at the same resolution.

    Both inputs run through their own two-step down-sampling path to
    [d_embed, R/4, R/4]; a per-location MLP (1x1 convolutions) merges the
    concatenation, and up-sampling blocks restore the stage resolution.
    """

    def __init__(self, channels: int, d_embed: int, resolution: int):
        super().__init__()
        if resolution < 4 or resolution % 4 != 0:
            raise ValueError("editor resolution must be a multiple of 4")
        self.resolution = resolution
        self.image_down = nn.Sequential(
            down_block(channels, d_embed, norm=False),
            down_block(d_embed, d_embed),
        )
        self.pattern_down = nn.Sequential(
            down_block(channels, d_embed, norm=False),
            down_block(d_embed, d_embed),
        )
        self.fuse = nn.Sequential(
            nn.Conv2d(2 * d_embed, d_embed, kernel_size=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(d_embed, d_embed, kernel_size=1),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.up = nn.Sequential(up_block(d_embed, d_embed), up_block(d_embed, d_embed))
        self.head = ImageHead(d_embed, channels)

    def forward(self, image: torch.Tensor, pattern: torch.Tensor) -> torch.Tensor:
        if image.shape[-2:] != pattern.shape[-2:]:
            raise ValueError(
                f"resolution mismatch: image {tuple(image.shape[-2:])} vs "
                f"pattern {tuple(pattern.shape[-2:])}"
            )
        if image.shape[-1] != self.resolution:
            raise ValueError(
                f"editor built for {self.resolution}x{self.resolution}, "
                f"got {tuple(image.shape[-2:])}"
            )
        a = self.image_down(image)
        b = self.pattern_down(pattern)
        fused = self.fuse(torch.cat([a, b], dim=1))
        return self.head(self.up(fused))


class Generator(nn.Module):
    """Initial stage, per-stage attention/refinement, and pattern editing."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.initial = InitialStage(cfg.d_cond, cfg.d_z, cfg.d_hidden, cfg.base_resolution)
        self.attention = nn.ModuleList(
            [WordAttention(cfg.d_text, cfg.d_hidden) for _ in range(cfg.stages)]
        )
        self.refiners = nn.ModuleList(
            [NextStage(cfg.d_hidden) for _ in range(cfg.stages - 1)]
        )
        self.heads = nn.ModuleList(
            [ImageHead(cfg.d_hidden, cfg.channels) for _ in range(cfg.stages)]
        )
        self.editors = nn.ModuleList(
            [PatternEditor(cfg.channels, cfg.d_hidden, r) for r in cfg.stage_resolutions()]
        )

    def forward(
        self,
        cond: torch.Tensor,
        z: torch.Tensor,
        word_features: torch.Tensor,
        pattern_levels: list[torch.Tensor],
        lengths: torch.Tensor | None = None,
    ) -> StageOutputs:
        """cond: [B, d_cond]; z: [B, d_z]; word_features: [B, d_text, T];
        pattern_levels: one [B, channels, R_i, R_i] tensor per stage."""
        cfg = self.cfg
        if len(pattern_levels) != cfg.stages:
            raise ValueError(
                f"expected {cfg.stages} pattern levels, got {len(pattern_levels)}"
            )
        for i, (level, r) in enumerate(zip(pattern_levels, cfg.stage_resolutions())):
            if level.shape[-2:] != (r, r):
                raise ValueError(
                    f"pattern level {i} is {tuple(level.shape[-2:])}, expected {(r, r)}"
                )

        out = StageOutputs()
        h = self.initial(cond, z)
        context, weights = self.attention[0](word_features, h, lengths)
        out.hidden.append(h)
        out.attention_maps.append(weights)
        x_hat = self.heads[0](h)
        out.pre_edit.append(x_hat)
        out.edited.append(self.editors[0](x_hat, pattern_levels[0]))

        for i in range(1, cfg.stages):
            h = self.refiners[i - 1](h, context)
            context, weights = self.attention[i](word_features, h, lengths)
            out.hidden.append(h)
            out.attention_maps.append(weights)
            x_hat = self.heads[i](h)
            out.pre_edit.append(x_hat)
            out.edited.append(self.editors[i](x_hat, pattern_levels[i]))
        return out


def sample_noise(
    batch: int,
    cfg: ModelConfig,
    generator: torch.Generator | None = None,
    dtype=torch.float32,
    device=None,
) -> torch.Tensor:
    """Draw z per the configured noise distribution (uniform on [-1, 1] by default)."""
    if cfg.noise_dist == "uniform":
        u = torch.rand(batch, cfg.d_z, generator=generator, dtype=dtype, device=device)
        return u * 2.0 - 1.0
    return torch.randn(batch, cfg.d_z, generator=generator, dtype=dtype, device=device)


def stack_pyramids(
    pyramids: list[PatternPyramid], dtype=torch.float32, device=None
) -> list[torch.Tensor]:
    """Stack per-sample pyramids into one batched tensor per stage."""
    stages = len(pyramids[0].levels)
    return [
        torch.stack(
            [torch.as_tensor(p.levels[i], dtype=dtype, device=device) for p in pyramids]
        )
        for i in range(stages)
    ]
