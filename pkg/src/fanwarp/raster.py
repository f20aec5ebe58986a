"""Grayscale rasters, window masks and projective warping.

Pixel ``(x, y)`` covers the unit square ``[x, x+1) x [y, y+1)``; all
geometric sampling happens at the pixel centre ``(x + 0.5, y + 0.5)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from PIL import Image

from .geometry import GeometryError, Homography, ViewingWindow, invert

__all__ = [
    "GrayImage",
    "WindowMask",
    "warp_image",
    "render_mask",
    "erode_mask",
    "downsample",
    "psnr",
    "load_image",
    "save_image",
    "to_uint8",
]


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel image with intensities in ``[0, 1]``.

    ``data`` is a read-only float64 array of shape ``(height, width)``.
    """

    data: np.ndarray

    def __post_init__(self):
        a = np.array(self.data, dtype=np.float64, copy=True)
        if a.ndim != 2 or a.size == 0:
            raise ValueError(f"image data must be a nonempty 2-D array, got shape {a.shape}")
        if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
            raise ValueError("image intensities must be finite and within [0, 1]")
        a.flags.writeable = False
        object.__setattr__(self, "data", a)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @classmethod
    def full(cls, width: int, height: int, value: float = 0.0) -> "GrayImage":
        return cls(np.full((height, width), value, dtype=np.float64))

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class WindowMask:
    """Boolean inside/outside raster of shape ``(height, width)``."""

    data: np.ndarray

    def __post_init__(self):
        a = np.array(self.data, dtype=bool, copy=True)
        if a.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {a.shape}")
        a.flags.writeable = False
        object.__setattr__(self, "data", a)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


_GRID_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _centre_grid(width: int, height: int):
    key = (width, height)
    grid = _GRID_CACHE.get(key)
    if grid is None:
        cx = np.arange(width, dtype=np.float64) + 0.5
        cy = np.arange(height, dtype=np.float64) + 0.5
        gx, gy = np.meshgrid(cx, cy)
        gx.flags.writeable = False
        gy.flags.writeable = False
        grid = _GRID_CACHE[key] = (gx, gy)
    return grid


@numba.njit(cache=True, nogil=True)
def _warp_kernel(src, m, fill, out):
    hgt, wid = src.shape
    for y in range(hgt):
        cy = y + 0.5
        for x in range(wid):
            cx = x + 0.5
            d = m[6] * cx + m[7] * cy + m[8]
            if abs(d) <= 1e-12:
                out[y, x] = fill
                continue
            sx = (m[0] * cx + m[1] * cy + m[2]) / d - 0.5
            sy = (m[3] * cx + m[4] * cy + m[5]) / d - 0.5
            # the negated form also rejects NaN
            if not (sx >= 0.0 and sx <= wid - 1 and sy >= 0.0 and sy <= hgt - 1):
                out[y, x] = fill
                continue
            x0 = math.floor(sx)
            y0 = math.floor(sy)
            fx = sx - x0
            fy = sy - y0
            ix0 = int(x0)
            iy0 = int(y0)
            ix1 = min(ix0 + 1, wid - 1)
            iy1 = min(iy0 + 1, hgt - 1)
            gx = 1.0 - fx
            top = gx * src[iy0, ix0] + fx * src[iy0, ix1]
            bot = gx * src[iy1, ix0] + fx * src[iy1, ix1]
            v = (1.0 - fy) * top + fy * bot
            out[y, x] = min(max(v, 0.0), 1.0)


def warp_image(img: GrayImage, h: Homography, fill: float = 0.0) -> GrayImage:
    """Warp ``img`` forward by ``h`` onto a canvas of the same size.

    Each output pixel centre is pulled back through ``h^-1`` and the
    source is sampled bilinearly at that point minus half a pixel.
    Sources outside ``[0, width-1] x [0, height-1]``, or points mapping
    to infinity, get ``fill``.  Every pixel is computed independently with
    a fixed operation order, so results are bit-reproducible.
    """
    if not 0.0 <= fill <= 1.0:
        raise ValueError(f"fill must be within [0, 1], got {fill}")
    m = np.array(invert(h).m, dtype=np.float64)
    out = np.empty_like(img.data)
    _warp_kernel(img.data, m, float(fill), out)
    return GrayImage(out)


def _polygon_area(poly) -> float:
    s = 0.0
    for i in range(len(poly)):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % len(poly)]
        s += x1 * y2 - x2 * y1
    return 0.5 * s


def render_mask(w: ViewingWindow, width: int, height: int) -> WindowMask:
    """Rasterise the window: a pixel is inside when its centre lies strictly
    inside the quadrilateral p1_left -> p1_right -> p2_right -> p2_left."""
    if width <= 0 or height <= 0:
        raise ValueError(f"canvas must be positive, got {width}x{height}")
    poly = w.polygon()
    if abs(_polygon_area(poly)) < 1e-9:
        raise GeometryError(f"degenerate window polygon {poly}")
    gx, gy = _centre_grid(width, height)

    inside = np.zeros((height, width), dtype=bool)
    on_edge = np.zeros((height, width), dtype=bool)
    for i in range(4):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % 4]
        straddle = (ay > gy) != (by > gy)
        if ay != by:
            xint = ax + (gy - ay) * (bx - ax) / (by - ay)
            inside ^= straddle & (gx < xint)
        cross = (bx - ax) * (gy - ay) - (by - ay) * (gx - ax)
        on_edge |= (
            (cross == 0.0)
            & (gx >= min(ax, bx)) & (gx <= max(ax, bx))
            & (gy >= min(ay, by)) & (gy <= max(ay, by))
        )
    return WindowMask(inside & ~on_edge)


def erode_mask(mask: WindowMask, pixels: int) -> WindowMask:
    """Shrink a mask by ``pixels`` steps of 8-neighbourhood erosion."""
    from scipy.ndimage import binary_erosion

    if pixels <= 0:
        return mask
    out = binary_erosion(mask.data, structure=np.ones((3, 3), bool), iterations=pixels, border_value=0)
    return WindowMask(out)


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic matrix averaging ``n_in`` cells into ``n_out`` bins by overlap."""
    if n_in == n_out:
        return np.eye(n_in)
    edges = np.arange(n_out + 1) * (n_in / n_out)
    lo, hi = edges[:-1, None], edges[1:, None]
    cells = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, cells + 1) - np.maximum(lo, cells), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


_WEIGHT_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _cached_weights(n_in: int, n_out: int) -> np.ndarray:
    key = (n_in, n_out)
    wts = _WEIGHT_CACHE.get(key)
    if wts is None:
        wts = _WEIGHT_CACHE[key] = _area_weights(n_in, n_out)
    return wts


def downsample(img: GrayImage, out_w: int, out_h: int) -> GrayImage:
    """Area-average ``img`` down to ``out_w`` x ``out_h``."""
    if out_w <= 0 or out_h <= 0:
        raise ValueError(f"output size must be positive, got {out_w}x{out_h}")
    if out_w > img.width or out_h > img.height:
        raise ValueError(f"cannot upsample {img.width}x{img.height} to {out_w}x{out_h}")
    if out_w == img.width and out_h == img.height:
        return img
    wy = _cached_weights(img.height, out_h)
    wx = _cached_weights(img.width, out_w)
    return GrayImage(np.clip(wy @ img.data @ wx.T, 0.0, 1.0))


def psnr(a: GrayImage, b: GrayImage, mask: WindowMask | None = None) -> float:
    """Peak signal-to-noise ratio in dB for unit peak, over ``mask`` pixels."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"dimension mismatch {a.data.shape} vs {b.data.shape}")
    sel = np.ones(a.data.shape, bool) if mask is None else mask.data
    if sel.shape != a.data.shape:
        raise ValueError(f"mask shape {sel.shape} does not match image {a.data.shape}")
    if not sel.any():
        raise ValueError("mask selects no pixels")
    mse = float(np.mean((a.data[sel] - b.data[sel]) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def to_uint8(img: GrayImage) -> np.ndarray:
    """Quantise to 8 bits, rounding half up."""
    return np.floor(img.data * 255.0 + 0.5).astype(np.uint8)


def load_image(path: str | Path) -> GrayImage:
    """Read a PNG or binary PGM; colour images are reduced to BT.601 luma."""
    with Image.open(path) as im:
        im.load()
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            a = np.asarray(im, dtype=np.float64)
            peak = 65535.0 if a.max(initial=0) > 255 or im.mode.startswith("I;16") else 255.0
            return GrayImage(np.clip(a / peak, 0.0, 1.0))
        if im.mode != "L":
            # Pillow's L conversion uses the ITU-R 601-2 luma weights
            im = im.convert("RGB").convert("L") if im.mode in ("P", "PA", "LA", "RGBA", "1") else im.convert("L")
        return GrayImage(np.asarray(im, dtype=np.float64) / 255.0)


def save_image(img: GrayImage, path: str | Path) -> None:
    """Write an 8-bit PNG or binary PGM, chosen by the file extension."""
    path = Path(path)
    fmt = {".png": "PNG", ".pgm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise ValueError(f"unsupported image extension {path.suffix!r}; use .png or .pgm")
    Image.fromarray(to_uint8(img)).save(path, format=fmt)
