"""Geometric caption removal: trim the caption band, re-square, resize."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..imageio import center_square_crop, resize_area

MIN_CONTENT_HEIGHT = 16


@dataclass(frozen=True)
class CaptionLayout:
    """Captions occupy the bottom `bottom_fraction` of the image."""

    bottom_fraction: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.bottom_fraction < 1.0:
            raise ValueError("bottom_fraction must lie in [0, 1)")


def crop_caption_region(
    image_chw: np.ndarray,
    layout: CaptionLayout,
    canonical_resolution: int,
) -> np.ndarray:
    """Drop the caption band, center-crop square, resize to canonical size."""
    if image_chw.ndim != 3:
        raise ValueError("expected a [C, H, W] image")
    h = image_chw.shape[1]
    keep = int(h * (1.0 - layout.bottom_fraction))
    if keep < MIN_CONTENT_HEIGHT:
        raise ValueError(
            f"cropping the caption band leaves {keep} rows, "
            f"below the {MIN_CONTENT_HEIGHT}-row minimum"
        )
    trimmed = image_chw[:, :keep, :]
    return resize_area(center_square_crop(trimmed), canonical_resolution)
