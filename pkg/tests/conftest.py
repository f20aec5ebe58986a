"""Shared fixtures and independent oracles.

The oracles here are deliberately naive (scalar loops, SVD, O(n^2)
counting, shapely) so they share no code paths with the package.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from shapely.geometry import Point, Polygon

from fanwarp.geometry import Homography, Point2, apply_homography, invert

# Acceptance results collected by tests/test_acceptance.py: number -> (ok, detail)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


# oracles


def warp_oracle(src: np.ndarray, h: Homography, fill: float = 0.0) -> np.ndarray:
    """Per-pixel inverse mapping with bilinear weights, one pixel at a time."""
    hi = invert(h)
    rows, cols = src.shape
    out = np.empty_like(src)
    for y in range(rows):
        for x in range(cols):
            m = hi.m
            xc = x + 0.5
            yc = y + 0.5
            d = m[6] * xc + m[7] * yc + m[8]
            sx = (m[0] * xc + m[1] * yc + m[2]) / d - 0.5
            sy = (m[3] * xc + m[4] * yc + m[5]) / d - 0.5
            if not (0.0 <= sx <= cols - 1 and 0.0 <= sy <= rows - 1):
                out[y, x] = fill
                continue
            x0 = min(int(math.floor(sx)), cols - 2) if cols > 1 else 0
            y0 = min(int(math.floor(sy)), rows - 2) if rows > 1 else 0
            fx = sx - x0
            fy = sy - y0
            x1 = min(x0 + 1, cols - 1)
            y1 = min(y0 + 1, rows - 1)
            top = src[y0, x0] * (1.0 - fx) + src[y0, x1] * fx
            bot = src[y1, x0] * (1.0 - fx) + src[y1, x1] * fx
            v = top * (1.0 - fy) + bot * fy
            out[y, x] = min(max(v, 0.0), 1.0)
    return out


def dlt_oracle(src, dst) -> np.ndarray:
    """Homography as the null vector of the 8x9 DLT matrix (SVD)."""
    rows = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    _, _, vt = np.linalg.svd(np.asarray(rows, dtype=float))
    m = vt[-1].reshape(3, 3)
    return m / m[2, 2]


def mask_oracle(polygon, width: int, height: int) -> np.ndarray:
    """Pixel centres strictly inside the polygon."""
    poly = Polygon([tuple(p) for p in polygon])
    out = np.zeros((height, width), dtype=bool)
    for y in range(height):
        for x in range(width):
            out[y, x] = poly.contains(Point(x + 0.5, y + 0.5))
    return out


def auc_oracle(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ordered correctly, ties count half."""
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def _tri_area(a, b, c) -> float:
    return abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])) / 2.0


def general_position_quad(rng: np.random.Generator, box: float = 100.0, min_frac: float = 0.01):
    """Four points in [0, box]^2 with every triangle of area >= min_frac * box^2."""
    while True:
        pts = rng.uniform(0.0, box, size=(4, 2))
        if all(_tri_area(*tri) >= min_frac * box * box for tri in itertools.combinations(pts, 3)):
            return [Point2(float(x), float(y)) for x, y in pts]


def random_homography(rng: np.random.Generator, size: float) -> Homography:
    """A mild projective map of a ``size``-square canvas onto itself."""
    from fanwarp.geometry import estimate_homography

    src = [Point2(0, 0), Point2(size, 0), Point2(0, size), Point2(size, size)]
    dst = [Point2(x + rng.uniform(-0.2, 0.2) * size, y + rng.uniform(-0.2, 0.2) * size) for x, y in src]
    return estimate_homography(src, dst)


def forward_error(h: Homography, src, dst) -> float:
    return max(math.hypot(*(np.subtract(apply_homography(h, p), q))) for p, q in zip(src, dst))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_texture(seed: int, size: int = 256, sigma: float = 2.0) -> np.ndarray:
    """Band-limited random texture scaled to [0, 1]."""
    from scipy.ndimage import gaussian_filter

    a = gaussian_filter(np.random.default_rng(seed).standard_normal((size, size)), sigma)
    return (a - a.min()) / (a.max() - a.min())
