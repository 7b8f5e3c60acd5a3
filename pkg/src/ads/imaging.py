"""Images, masks, coordinate grids and grid-based warping.

Conventions
-----------
- An image is a float array of shape ``(H, W, 3)`` with channels in [0, 1].
- A mask is a boolean array of shape ``(H, W)``.
- A coordinate grid is a float array of shape ``(2, H*W)`` in row-major pixel
  order. Normalised coordinates span [-1, 1] on both axes and pixel ``(col,
  row)`` sits at its centre, so the grid diagonal has length ``2*sqrt(2)``.
- Warping is backward: output pixel ``p`` takes the bilinear sample of the
  input at ``grid[:, p]``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import DegenerateMaskError, InvalidArgumentError

# Black -> red -> yellow -> white; monotone in luminance.
_RAMP_STOPS = np.array([0.0, 1 / 3, 2 / 3, 1.0])
_RAMP_COLORS = np.array(
    [
        [0.0, 0.0, 0.0],
        [0.8, 0.0, 0.0],
        [1.0, 0.85, 0.0],
        [1.0, 1.0, 1.0],
    ]
)

_SNAP_TOL = 1e-9


def as_image(array) -> np.ndarray:
    img = np.asarray(array, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidArgumentError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise InvalidArgumentError("image channels must lie in [0, 1]")
    return img


def as_mask(array) -> np.ndarray:
    mask = np.asarray(array)
    if mask.ndim != 2:
        raise InvalidArgumentError(f"expected an (H, W) mask, got shape {mask.shape}")
    if mask.dtype != bool:
        if not np.isin(mask, (0, 1)).all():
            raise InvalidArgumentError("mask values must be exactly 0 or 1")
        mask = mask.astype(bool)
    return mask


def identity_grid(width: int, height: int) -> np.ndarray:
    """Return the ``(2, width*height)`` grid of normalised pixel centres."""
    if width < 1 or height < 1:
        raise InvalidArgumentError(f"grid dimensions must be positive, got {width}x{height}")
    xs = -1.0 + 2.0 * (np.arange(width) + 0.5) / width
    ys = -1.0 + 2.0 * (np.arange(height) + 0.5) / height
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()])


def _to_pixel(coord: np.ndarray, size: int) -> np.ndarray:
    pix = (coord + 1.0) * size / 2.0 - 0.5
    nearest = np.rint(pix)
    return np.where(np.abs(pix - nearest) < _SNAP_TOL, nearest, pix)


def _check_grid(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.shape != (2, height * width):
        raise InvalidArgumentError(
            f"grid shape {grid.shape} does not match a {width}x{height} raster"
        )
    return grid


def bilinear_sample(values: np.ndarray, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``values`` (H, W, C) at normalised coordinates.

    Returns the ``(N, C)`` samples and a boolean array flagging coordinates
    inside [-1, 1]^2. Samples between the outermost pixel centres and the
    frame edge replicate the border pixel.
    """
    height, width = values.shape[:2]
    x, y = grid
    inside = (np.abs(x) <= 1.0) & (np.abs(y) <= 1.0)

    col = np.clip(_to_pixel(np.where(inside, x, 0.0), width), 0.0, width - 1)
    row = np.clip(_to_pixel(np.where(inside, y, 0.0), height), 0.0, height - 1)
    c0 = np.floor(col).astype(np.intp)
    r0 = np.floor(row).astype(np.intp)
    c1 = np.minimum(c0 + 1, width - 1)
    r1 = np.minimum(r0 + 1, height - 1)
    fx = (col - c0)[:, None]
    fy = (row - r0)[:, None]

    top = (1.0 - fx) * values[r0, c0] + fx * values[r0, c1]
    bottom = (1.0 - fx) * values[r1, c0] + fx * values[r1, c1]
    return (1.0 - fy) * top + fy * bottom, inside


def warp(image: np.ndarray, grid: np.ndarray, fill=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Backward-warp ``image`` through ``grid``; out-of-frame samples get ``fill``."""
    image = np.asarray(image, dtype=np.float64)
    height, width = image.shape[:2]
    grid = _check_grid(grid, height, width)
    samples, inside = bilinear_sample(image, grid)
    samples[~inside] = np.asarray(fill, dtype=np.float64)
    return samples.reshape(height, width, image.shape[2])


def warp_mask(mask: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Warp a binary mask: bilinear sample, then threshold at 0.5."""
    mask = as_mask(mask)
    height, width = mask.shape
    grid = _check_grid(grid, height, width)
    samples, inside = bilinear_sample(mask.astype(np.float64)[:, :, None], grid)
    out = (samples[:, 0] >= 0.5) & inside
    return out.reshape(height, width)


def _check_shapes(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> None:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"image shapes differ: {a.shape} vs {b.shape}")
    if mask is not None and mask.shape != a.shape[:2]:
        raise InvalidArgumentError(f"mask shape {mask.shape} does not match image {a.shape[:2]}")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Plain MSE over all pixels and channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    return float(np.mean((a - b) ** 2))


def masked_mse(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """Mean squared error over the foreground of ``mask`` and all channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mask = as_mask(mask)
    _check_shapes(a, b, mask)
    count = int(mask.sum())
    if count == 0:
        raise DegenerateMaskError("mask has no foreground pixels")
    diff = (a[mask] - b[mask]) ** 2
    return float(diff.sum() / (a.shape[2] * count))


def error_heatmap(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-pixel channel-mean squared error, zero outside the mask."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mask = as_mask(mask)
    _check_shapes(a, b, mask)
    heat = np.mean((a - b) ** 2, axis=2)
    heat[~mask] = 0.0
    return heat


def render_heatmap(heat: np.ndarray, vmax: float | None = None) -> np.ndarray:
    """Map a heatmap to RGB with a fixed black-red-yellow-white ramp.

    Values are divided by ``vmax`` (default: the heatmap maximum) and clipped.
    """
    heat = np.asarray(heat, dtype=np.float64)
    if np.any(heat < 0):
        raise InvalidArgumentError("heatmap values must be nonnegative")
    if vmax is None:
        vmax = float(heat.max()) if heat.size else 0.0
    scaled = np.clip(heat / vmax, 0.0, 1.0) if vmax > 0 else np.zeros_like(heat)
    channels = [np.interp(scaled, _RAMP_STOPS, _RAMP_COLORS[:, c]) for c in range(3)]
    return np.stack(channels, axis=-1)


# ---------------------------------------------------------------------------
# I/O. PPM/PGM and PNG are handled by Pillow based on the file suffix.


def quantize(image: np.ndarray) -> np.ndarray:
    """Round channels to the 1/255 lattice used by 8-bit files."""
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def read_image(path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_image(path, image: np.ndarray) -> None:
    image = as_image(image)
    data = np.rint(image * 255.0).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(data).save(path)


def read_mask(path) -> np.ndarray:
    """Read a grayscale mask; pixels >= 128 are foreground."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= 128


def write_mask(path, mask: np.ndarray) -> None:
    mask = as_mask(mask)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(mask.astype(np.uint8) * 255).save(path)
