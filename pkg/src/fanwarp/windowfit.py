"""Recover viewing-window corners from pixel content.

The bright region is binarised, its per-row left/right extents are
collected, and straight lines are fitted to both sides over the middle
60% of occupied rows.  Those rows avoid the curved probe face at the top
and the depth arc at the bottom of a convex fan.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .geometry import GeometryError, Point2, Probe, ViewingWindow
from .raster import GrayImage

__all__ = ["WindowNotFound", "estimate_window", "LINEAR_SLOPE_CUTOFF"]

LINEAR_SLOPE_CUTOFF = 20.0
MIN_OCCUPANCY = 0.05
BAND = (0.2, 0.8)


class WindowNotFound(GeometryError):
    """No usable bright region in the frame."""


def _fit_line(ys: np.ndarray, xs: np.ndarray) -> tuple[float, float]:
    """Least-squares ``x = a*y + b``."""
    a, b = np.polyfit(ys, xs, 1)
    return float(a), float(b)


def estimate_window(img: GrayImage, threshold: float = 0.04) -> ViewingWindow:
    """Estimate the corners and probe kind of the echo region in ``img``.

    Raises
    ------
    WindowNotFound
        If the largest bright connected region covers less than 5% of the
        frame.
    GeometryError
        If the fitted side lines cross inside the occupied rows.
    """
    binary = img.data > threshold
    labels, n = ndimage.label(binary)
    if n == 0:
        raise WindowNotFound("no window found: image has no pixels above threshold")
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    region = labels == int(np.argmax(sizes))
    if region.sum() < MIN_OCCUPANCY * region.size:
        raise WindowNotFound(
            f"no window found: largest region covers {region.mean():.1%} of the frame (< {MIN_OCCUPANCY:.0%})"
        )

    rows = np.flatnonzero(region.any(axis=1))
    top, bottom = int(rows[0]), int(rows[-1])
    span = bottom - top
    lo = top + BAND[0] * span
    hi = top + BAND[1] * span
    band = rows[(rows >= lo) & (rows <= hi)]
    if band.size < 2:
        raise GeometryError(f"occupied band rows {top}..{bottom} too short to fit edges")

    sub = region[band]
    left_cols = np.argmax(sub, axis=1)
    right_cols = sub.shape[1] - 1 - np.argmax(sub[:, ::-1], axis=1)
    yc = band + 0.5
    # a column c is inside when its centre is; the edge then sits near c (left) or c+1 (right)
    al, bl = _fit_line(yc, left_cols.astype(float))
    ar, br = _fit_line(yc, right_cols + 1.0)

    y_top = float(top)
    y_bot = float(bottom + 1)
    for y in (y_top, y_bot):
        if al * y + bl >= ar * y + br:
            raise GeometryError(f"fitted edges cross within the occupied band at y={y}")
    if al != ar:
        y_cross = (br - bl) / (al - ar)
        if y_top <= y_cross <= y_bot:
            raise GeometryError(f"fitted edges cross within the occupied band at y={y_cross:.1f}")

    def slope(a):
        return math.inf if a == 0 else abs(1.0 / a)

    linear = slope(al) > LINEAR_SLOPE_CUTOFF and slope(ar) > LINEAR_SLOPE_CUTOFF
    return ViewingWindow(
        Point2(al * y_top + bl, y_top),
        Point2(al * y_bot + bl, y_bot),
        Point2(ar * y_top + br, y_top),
        Point2(ar * y_bot + br, y_bot),
        Probe.LINEAR if linear else Probe.CONVEX,
    )
