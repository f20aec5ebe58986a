import math

import numpy as np
import pytest

from fanwarp.geometry import GeometryError, Probe, ViewingWindow, edge_slopes
from fanwarp.phantom import random_window, render_phantom, _rng
from fanwarp.raster import GrayImage, render_mask
from fanwarp.windowfit import WindowNotFound, estimate_window


def filled(w, size=256, value=0.8):
    return GrayImage(render_mask(w, size, size).data * value)


def corner_error(a: ViewingWindow, b: ViewingWindow) -> float:
    return max(math.dist(p, q) for p, q in zip(a.corners(), b.corners()))


def random_truth(rng, size=256):
    """Symmetric or skewed window with slopes in [0.8, 5], or a rectangle."""
    top = float(rng.integers(10, 40))
    bottom = float(rng.integers(180, 246))
    cx = size / 2 + rng.uniform(-10, 10)
    half = rng.uniform(15, 40)
    if rng.uniform() < 0.3:
        return ViewingWindow((cx - half, top), (cx - half, bottom), (cx + half, top), (cx + half, bottom), Probe.LINEAR)
    depth = bottom - top
    room = cx - half - 2
    sl = max(rng.uniform(0.8, 5), depth / room)
    sr = max(rng.uniform(0.8, 5), depth / room)
    return ViewingWindow((cx - half, top), (cx - half - depth / sl, bottom),
                         (cx + half, top), (cx + half + depth / sr, bottom), Probe.CONVEX)


class TestEstimateWindow:
    def test_black_image(self):
        with pytest.raises(WindowNotFound, match="no window found"):
            estimate_window(GrayImage.full(64, 64))

    def test_small_region(self):
        a = np.zeros((100, 100))
        a[10:20, 10:20] = 0.8
        with pytest.raises(WindowNotFound):
            estimate_window(GrayImage(a))

    def test_rectangle(self):
        a = np.zeros((100, 100))
        a[10:90, 40:60] = 0.8
        w = estimate_window(GrayImage(a))
        truth = ViewingWindow((40, 10), (40, 90), (60, 10), (60, 90), Probe.LINEAR)
        assert corner_error(w, truth) <= 2
        assert w.probe is Probe.LINEAR

    def test_trapezoid_slope_two(self):
        truth = ViewingWindow((100, 20), (10, 200), (150, 20), (240, 200), Probe.CONVEX)
        assert edge_slopes(truth) == (2.0, 2.0)
        w = estimate_window(filled(truth))
        assert corner_error(w, truth) <= 2
        assert w.probe is Probe.CONVEX

    def test_random_round_trip(self, rng):
        for _ in range(50):
            truth = random_truth(rng)
            w = estimate_window(filled(truth))
            assert corner_error(w, truth) <= 2, truth
            assert w.probe is truth.probe

    def test_translation_equivariant(self, rng):
        truth = ViewingWindow((100, 20), (60, 180), (140, 20), (180, 180), Probe.CONVEX)
        base = estimate_window(filled(truth))
        for dx, dy in [(5, 0), (-7, 3), (12, 40)]:
            moved = estimate_window(filled(truth.translated(dx, dy)))
            for p, q in zip(base.corners(), moved.corners()):
                assert abs(q.x - p.x - dx) <= 1 and abs(q.y - p.y - dy) <= 1

    def test_phantoms(self):
        for i in range(20):
            probe = Probe.CONVEX if i % 2 else Probe.LINEAR
            truth = random_window(probe, _rng(9, "video", i))
            w = estimate_window(render_phantom(truth, i % 4 < 2, _rng(9, "frame", i)))
            assert corner_error(w, truth) <= 2
            assert w.probe is probe

    def test_crossed_edges(self):
        # a funnel narrowing into a thin stem: fitted sides meet above the last row
        a = np.zeros((100, 100))
        for y in range(10, 90):
            half = (60 - y) * 0.9
            if half > 0:
                a[y, int(50 - half):int(50 + half) + 1] = 0.8
            else:
                a[y, 48:52] = 0.8
        with pytest.raises(GeometryError, match="cross"):
            estimate_window(GrayImage(a))

    def test_largest_component_wins(self):
        a = np.zeros((100, 100))
        a[10:90, 40:60] = 0.8
        a[0:5, 0:5] = 0.9
        w = estimate_window(GrayImage(a))
        assert abs(w.p1_left.x - 40) <= 2 and abs(w.p1_left.y - 10) <= 2
