"""Image encoding helpers: tensor -> PIL, colorized masks, base64 PNG."""

from __future__ import annotations

import base64
import io

import numpy as np
import torch
from PIL import Image


def tensor_to_uint8(image: torch.Tensor) -> np.ndarray:
    """(3, H, W) in [-1, 1] -> (H, W, 3) uint8."""
    arr = image.detach().cpu().float().clamp(-1, 1).numpy()
    return ((arr + 1.0) * 127.5).round().astype(np.uint8).transpose(1, 2, 0)


def colorize_indices(indices: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """(H, W) class indices + (C, 3) palette -> (H, W, 3) uint8."""
    return palette[indices]


def mask_to_indices(mask: torch.Tensor) -> np.ndarray:
    """(C, H, W) soft mask -> (H, W) argmax indices."""
    return mask.detach().cpu().argmax(dim=0).numpy()


def encode_png_base64(arr: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png_base64(data: str) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(base64.b64decode(data))))


def image_grid(images: torch.Tensor, cols: int = 4) -> Image.Image:
    """(N, 3, H, W) batch in [-1, 1] -> one tiled PIL image."""
    n, _, h, w = images.shape
    rows = (n + cols - 1) // cols
    canvas = np.zeros((rows * h, cols * w, 3), dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        canvas[r * h:(r + 1) * h, c * w:(c + 1) * w] = tensor_to_uint8(images[i])
    return Image.fromarray(canvas)
