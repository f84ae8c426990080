"""PNG / PPM reading and writing, plus float bilinear resampling."""

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import ArchiveFormatError

__all__ = ["read_rgb", "read_index_mask", "write_png", "resize_bilinear", "resize_nearest"]


def read_rgb(path):
    """Decode a PNG, binary PPM (P6) or any Pillow-readable file to uint8 [h, w, 3]."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError) as exc:
        raise ArchiveFormatError(f"cannot decode image {path}: {exc}") from exc


def read_index_mask(path):
    """Read a single-channel (palette or grayscale) PNG as integer class ids."""
    try:
        with Image.open(path) as im:
            if im.mode not in ("P", "L", "I", "I;16"):
                raise ArchiveFormatError(
                    f"mask {path} has mode {im.mode!r}; expected a single-channel PNG"
                )
            # palette images keep their raw indices; no RGB conversion
            return np.asarray(im, dtype=np.int64).copy()
    except (UnidentifiedImageError, OSError) as exc:
        raise ArchiveFormatError(f"cannot decode mask {path}: {exc}") from exc


def write_png(path, pixels):
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise TypeError("write_png expects uint8 pixels; normalize first")
    if pixels.ndim == 3 and pixels.shape[2] == 1:
        pixels = pixels[:, :, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    # fixed options so repeated runs produce identical bytes
    Image.fromarray(pixels).save(path, format="PNG", optimize=False, compress_level=6)


def _bilinear_axis(n_in, n_out):
    # half-pixel centers, clamped at the borders
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(image, height, width):
    """Resize a float [h, w, c] array; constant inputs stay exactly constant."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if (h, w) == (height, width):
        return image.copy()
    r_lo, r_hi, r_f = _bilinear_axis(h, height)
    c_lo, c_hi, c_f = _bilinear_axis(w, width)
    r_f = r_f[:, None, None]
    c_f = c_f[None, :, None]
    top = image[r_lo][:, c_lo] * (1 - c_f) + image[r_lo][:, c_hi] * c_f
    bottom = image[r_hi][:, c_lo] * (1 - c_f) + image[r_hi][:, c_hi] * c_f
    out = top * (1 - r_f) + bottom * r_f
    # convex weights can drift by an ulp; clip to the input range
    return np.clip(out, image.min(), image.max())


def resize_nearest(grid, height, width):
    """Nearest-neighbour resize of a 2-D label grid (ids are never blended)."""
    grid = np.asarray(grid)
    h, w = grid.shape[:2]
    rows = np.minimum(((np.arange(height) + 0.5) * h / height).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * w / width).astype(np.int64), w - 1)
    return grid[rows][:, cols]
