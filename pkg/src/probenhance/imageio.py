"""8-bit PNG reading/writing; quantization here is the pipeline's only lossy step."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png",)


def load_image(path) -> np.ndarray:
    """Read an image as float32 (3, H, W) in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def to_uint8(img) -> np.ndarray:
    if hasattr(img, "detach"):
        img = img.detach().cpu().numpy()
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 4:
        if img.shape[0] != 1:
            raise ValueError("can only write a single image")
        img = img[0]
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_image(path, img):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def list_images(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def tile_grid(images, columns: int | None = None, gap: int = 2) -> np.ndarray:
    """Montage of equally sized (3, H, W) images on a white background."""
    images = [np.asarray(i.detach().cpu() if hasattr(i, "detach") else i, dtype=np.float64)
              for i in images]
    n = len(images)
    columns = columns or math.ceil(math.sqrt(n))
    rows = math.ceil(n / columns)
    _, h, w = images[0].shape
    grid = np.ones((3, rows * h + (rows - 1) * gap, columns * w + (columns - 1) * gap))
    for i, img in enumerate(images):
        r, c = divmod(i, columns)
        grid[:, r * (h + gap) : r * (h + gap) + h, c * (w + gap) : c * (w + gap) + w] = img
    return grid
