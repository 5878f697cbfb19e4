"""Image loading and tensor preparation for the backbones."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .config import ExtractorConfig


def load_grayscale(path: str) -> np.ndarray:
    """Decode an image to a float32 grayscale array in [0, 1].

    16-bit PNGs are scaled by 65535, everything else goes through an 8-bit
    grayscale conversion.
    """
    with Image.open(path) as img:
        if img.mode in ("I", "I;16", "I;16B", "I;16L"):
            arr = np.asarray(img, dtype=np.float32)
            return arr / 65535.0
        return np.asarray(img.convert("L"), dtype=np.float32) / 255.0


def prepare_tensor(gray: np.ndarray, cfg: ExtractorConfig) -> np.ndarray:
    """Resize, center-crop, replicate to RGB, and normalize one image."""
    img = Image.fromarray(gray.astype(np.float32), mode="F")
    img = img.resize((cfg.resize_size, cfg.resize_size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32)

    off = (cfg.resize_size - cfg.input_size) // 2
    arr = arr[off:off + cfg.input_size, off:off + cfg.input_size]

    rgb = np.repeat(arr[:, :, None], 3, axis=2)
    mean = np.asarray(cfg.mean, dtype=np.float32)
    std = np.asarray(cfg.std, dtype=np.float32)
    return (rgb - mean) / std
