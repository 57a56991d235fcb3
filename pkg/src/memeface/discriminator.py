"""Per-stage discriminators with conditional and unconditional heads."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .config import ModelConfig
from .generator import conv3x3, down_block, _gn


@dataclass
class DiscriminatorOutput:
    """Raw logits; callers apply the sigmoid inside the loss."""

    unconditional: torch.Tensor  # [B]
    conditional: torch.Tensor | None  # [B] or None when no condition was given


class StageDiscriminator(nn.Module):
    """Downsamples a stage image to a 4x4 grid, then scores it.

    The unconditional head judges realism alone; the conditional head sees
    the sentence vector replicated over the grid, so it judges whether the
    image matches the text.
    """

    def __init__(self, cfg: ModelConfig, resolution: int):
        super().__init__()
        if resolution < 8 or resolution & (resolution - 1):
            raise ValueError("discriminator resolution must be a power of two >= 8")
        self.resolution = resolution
        d = cfg.d_hidden
        blocks: list[nn.Module] = [down_block(cfg.channels, d, norm=False)]
        r = resolution // 2
        while r > 4:
            blocks.append(down_block(d, min(2 * d, 8 * cfg.d_hidden)))
            d = min(2 * d, 8 * cfg.d_hidden)
            r //= 2
        self.trunk = nn.Sequential(*blocks)
        self.d_trunk = d
        self.uncond_head = nn.Conv2d(d, 1, kernel_size=4)
        self.cond_merge = nn.Sequential(
            conv3x3(d + cfg.d_text, d, bias=False),
            _gn(d),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.cond_head = nn.Conv2d(d, 1, kernel_size=4)

    def forward(
        self, image: torch.Tensor, sentence: torch.Tensor | None = None
    ) -> DiscriminatorOutput:
        if image.shape[-1] != self.resolution or image.shape[-2] != self.resolution:
            raise ValueError(
                f"discriminator built for {self.resolution}x{self.resolution}, "
                f"got {tuple(image.shape[-2:])}"
            )
        feat = self.trunk(image)
        uncond = self.uncond_head(feat).flatten(1).squeeze(1)
        if sentence is None:
            return DiscriminatorOutput(unconditional=uncond, conditional=None)
        if sentence.dim() != 2 or sentence.shape[0] != image.shape[0]:
            raise ValueError("sentence vector must be [B, d_text] matching the batch")
        tiled = sentence[:, :, None, None].expand(-1, -1, 4, 4)
        merged = self.cond_merge(torch.cat([feat, tiled], dim=1))
        cond = self.cond_head(merged).flatten(1).squeeze(1)
        return DiscriminatorOutput(unconditional=uncond, conditional=cond)


def build_discriminators(cfg: ModelConfig) -> nn.ModuleList:
    """One discriminator per stage resolution."""
    return nn.ModuleList(
        StageDiscriminator(cfg, r) for r in cfg.stage_resolutions()
    )
