"""Image feature extraction for clustering.

A fixed-weight convolutional projector stands in for a large pretrained
classifier at desk scale: weights are seeded once and never trained, so
features depend only on pixel content and stay comparable across runs.
Any module with the same (image) -> vector contract can replace it.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..imageio import resize_area


class TinyImageFeatures(nn.Module):
    """Frozen random-projection CNN exposing a penultimate-style vector."""

    def __init__(self, dim: int = 64, input_resolution: int = 32, seed: int = 1234):
        super().__init__()
        self.dim = dim
        self.input_resolution = input_resolution
        gen = torch.Generator().manual_seed(seed)
        widths = [3, 16, 32, dim]
        convs = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            conv = nn.Conv2d(cin, cout, kernel_size=3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen) * 0.2
                )
                conv.bias.zero_()
            convs.extend([conv, nn.LeakyReLU(0.2)])
        self.body = nn.Sequential(*convs)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @torch.no_grad()
    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.shape[-2:] != (self.input_resolution, self.input_resolution):
            raise ValueError(
                f"extractor expects {self.input_resolution}x{self.input_resolution} input"
            )
        return self.body(images).mean(dim=(2, 3))


def extract_features(image_chw: np.ndarray, extractor: TinyImageFeatures) -> np.ndarray:
    """One image in [-1, 1] CxHxW (any square size) -> float64 vector."""
    if image_chw.ndim != 3:
        raise ValueError("expected a [C, H, W] image")
    resized = resize_area(image_chw.astype(np.float64), extractor.input_resolution)
    t = torch.as_tensor(resized, dtype=torch.float32).unsqueeze(0)
    return extractor(t)[0].numpy().astype(np.float64)
