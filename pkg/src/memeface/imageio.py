"""Image array helpers.

Internal pixel convention throughout the package: float arrays shaped
[channels, height, width] with values in [-1, 1].
"""

from __future__ import annotations

import base64
import io
from pathlib import Path

import numpy as np
from PIL import Image


def to_signed_unit(u8_hwc: np.ndarray) -> np.ndarray:
    """uint8 HxWxC -> float32 CxHxW in [-1, 1]."""
    arr = u8_hwc.astype(np.float32) / 127.5 - 1.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def to_uint8(chw: np.ndarray) -> np.ndarray:
    """float CxHxW in [-1, 1] -> uint8 HxWxC."""
    arr = np.clip((np.asarray(chw, dtype=np.float64) + 1.0) * 127.5, 0.0, 255.0)
    return np.rint(arr).astype(np.uint8).transpose(1, 2, 0)


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file to the internal convention (RGB)."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return to_signed_unit(np.asarray(rgb))


def save_image(chw: np.ndarray, path: str | Path) -> None:
    Image.fromarray(to_uint8(chw)).save(path, format="PNG")


def png_bytes(chw: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(chw)).save(buf, format="PNG")
    return buf.getvalue()


def png_base64(chw: np.ndarray) -> str:
    return base64.b64encode(png_bytes(chw)).decode("ascii")


def resize_area(chw: np.ndarray, size: int) -> np.ndarray:
    """Area-averaging resize of a square image to size x size.

    Exact block means when the input side is an integer multiple of the
    target; PIL box filtering otherwise (including upscales).
    """
    arr = np.asarray(chw, dtype=np.float64)
    c, h, w = arr.shape
    if h != w:
        raise ValueError(f"resize_area expects a square image, got {h}x{w}")
    if h == size:
        return arr.astype(np.float32)
    if h % size == 0:
        f = h // size
        out = arr.reshape(c, size, f, size, f).mean(axis=(2, 4))
        return out.astype(np.float32)
    planes = [
        np.asarray(
            Image.fromarray(arr[i].astype(np.float32), mode="F").resize(
                (size, size), Image.BOX
            )
        )
        for i in range(c)
    ]
    return np.stack(planes).astype(np.float32)


def center_square_crop(chw: np.ndarray) -> np.ndarray:
    """Crop the largest centered square from a CxHxW array."""
    _, h, w = chw.shape
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return chw[:, top:top + side, left:left + side]
