"""Synthetic lung-ultrasound-like frames with known viewing windows.

Convex frames are fans: a trapezoid whose top is cut by the probe-face
arc (centred on the apex where the lateral edges meet) and whose bottom
is a shallow depth arc.  Linear frames are rectangles.  Inside the
window, depth-attenuated tissue is multiplied by a clipped log-normal
speckle texture; everything outside is exactly black.

Class structure follows the two classic lung artefacts:

* positive frames carry 2-4 bright streaks running perpendicular to the
  probe face from the pleural line to the bottom (B-line-like; radial in
  a fan, vertical in a rectangle),
* negative frames carry 2-4 bands parallel to the probe face at
  multiples of the pleural depth (A-line-like; arcs in a fan, horizontal
  in a rectangle).
"""

from __future__ import annotations

import math
from functools import lru_cache
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .augment import derive_seed
from .dataset import ManifestRecord, write_manifest
from .geometry import Point2, Probe, ViewingWindow
from .raster import GrayImage, render_mask, save_image

__all__ = ["SIZE", "FRAMES_PER_VIDEO", "random_window", "render_phantom", "plan", "generate"]

SIZE = 256
FRAMES_PER_VIDEO = 8
CONVEX_SLOPES = (1.5, 3.5)
_MARGIN = 4.0


def _rng(seed: int, key: str, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, key, index)))


def random_window(probe: Probe, rng: np.random.Generator, size: int = SIZE) -> ViewingWindow:
    """Draw a viewing window with integer top/bottom rows that fits the canvas."""
    probe = Probe(probe)
    cx = size / 2 + float(rng.integers(-6, 7))
    top = float(rng.integers(16, 31))
    if probe is Probe.LINEAR:
        half = float(rng.integers(36, 56))
        bottom = float(rng.integers(200, size - 12))
        return ViewingWindow(
            Point2(cx - half, top), Point2(cx - half, bottom),
            Point2(cx + half, top), Point2(cx + half, bottom), probe,
        )
    slope = float(rng.uniform(*CONVEX_SLOPES))
    half_top = float(rng.integers(10, 21))
    room = min(cx, size - cx) - _MARGIN - half_top
    depth = min(float(rng.integers(180, 221)), math.floor(slope * room))
    bottom = top + depth
    run = depth / slope
    return ViewingWindow(
        Point2(cx - half_top, top), Point2(cx - half_top - run, bottom),
        Point2(cx + half_top, top), Point2(cx + half_top + run, bottom), probe,
    )


@dataclass(frozen=True, eq=False)
class _Frame:
    """Probe-aligned pixel coordinates for one window geometry.

    ``depth`` is the distance below the probe face.  Streak positions are
    lateral offsets (linear) or angles from the fan axis (convex), and
    :meth:`offset_from` gives the perpendicular distance to such a streak.
    """

    region: np.ndarray
    depth: np.ndarray
    max_depth: float
    lateral_span: tuple[float, float]
    dx: np.ndarray
    dy: np.ndarray | None = None

    def offset_from(self, u: float) -> np.ndarray:
        if self.dy is None:
            return self.dx - u
        # r * sin(theta - u) with theta measured from the downward axis
        return self.dx * math.cos(u) - self.dy * math.sin(u)


@lru_cache(maxsize=64)
def _frame_coords(w: ViewingWindow, size: int) -> _Frame:
    ys, xs = (np.mgrid[0:size, 0:size] + 0.5).astype(np.float32)
    quad = render_mask(w, size, size).data
    cx = (w.p1_left.x + w.p1_right.x) / 2
    if w.probe is Probe.LINEAR:
        top = w.p1_left.y
        return _Frame(quad, ys - top, w.p2_left.y - top, (w.p1_left.x - cx, w.p1_right.x - cx), xs - cx)
    # apex where the lateral edges meet, above the probe face
    half_top = (w.p1_right.x - w.p1_left.x) / 2
    slope = (w.p2_left.y - w.p1_left.y) / (w.p1_left.x - w.p2_left.x)
    apex_y = w.p1_left.y - half_top * slope
    r = np.hypot(xs - cx, ys - apex_y)
    r_face = math.hypot(half_top, w.p1_left.y - apex_y)
    # shallow depth arc: sagitta at the bottom corners is a tenth of the depth
    bottom = w.p2_left.y
    half_bot = (w.p2_right.x - w.p2_left.x) / 2
    sag = 0.1 * (bottom - w.p1_left.y)
    arc_r = (half_bot**2 + sag**2) / (2 * sag)
    below_arc = np.hypot(xs - cx, ys - (bottom - arc_r)) < arc_r
    half_angle = math.atan2(half_top, w.p1_left.y - apex_y)
    return _Frame(
        quad & (r > r_face) & below_arc, r - r_face, bottom - apex_y - r_face,
        (-half_angle, half_angle), xs - cx, ys - apex_y,
    )


def render_phantom(w: ViewingWindow, positive: bool, rng: np.random.Generator, size: int = SIZE) -> GrayImage:
    """One frame inside window ``w``; B-line streaks if ``positive`` else A-line bands."""
    f = _frame_coords(w, size)
    depth_frac = np.clip(f.depth / np.float32(f.max_depth), 0.0, 1.0)
    tissue = 0.45 - 0.35 * depth_frac

    pleura = f.max_depth * float(rng.uniform(0.17, 0.22))
    lines = 0.4 * np.exp(-(((f.depth - pleura) / 2.0) ** 2))
    n = int(rng.integers(2, 5))
    if positive:
        # B-lines do not fade with depth
        below = f.depth > pleura
        lo, hi = f.lateral_span
        margin = 6.0 if f.dy is None else 0.1 * hi
        for u in rng.uniform(lo + margin, hi - margin, size=n).tolist():
            lines = lines + 0.6 * below * np.exp(-((f.offset_from(u) / 6.0) ** 2))
    else:
        # A-lines repeat at multiples of the pleural depth and fade
        for k in range(2, 2 + n):
            lines = lines + 0.35 * 0.8 ** (k - 2) * np.exp(-(((f.depth - k * pleura) / 2.5) ** 2))

    noise = rng.standard_normal((size, size), dtype=np.float32)
    speckle = np.exp(gaussian_filter(noise, 0.8) * np.float32(0.9) - np.float32(0.05))
    img = np.clip((tissue + lines) * speckle, 0.0, 1.0)
    img = np.where(f.region, img, 0.0)
    return GrayImage(img.astype(np.float64))


def plan(n: int, convex_fraction: float) -> list[tuple[Probe, bool, int]]:
    """Probe, class and video index for each of ``n`` frames.

    Frames are laid out in (probe, class) blocks; within a block every run
    of 8 consecutive frames forms one video sharing a single geometry.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 <= convex_fraction <= 1.0:
        raise ValueError(f"convex_fraction must lie in [0, 1], got {convex_fraction}")
    n_convex = math.floor(n * convex_fraction + 0.5)
    blocks = []
    for probe, count, extra_positive in ((Probe.CONVEX, n_convex, True), (Probe.LINEAR, n - n_convex, False)):
        pos = count // 2 + (count % 2 if extra_positive else 0)
        blocks.append((probe, True, pos))
        blocks.append((probe, False, count - pos))
    out = []
    video = 0
    for probe, positive, count in blocks:
        for i in range(count):
            out.append((probe, positive, video + i // FRAMES_PER_VIDEO))
        video += math.ceil(count / FRAMES_PER_VIDEO)
    return out


def generate(
    n: int,
    convex_fraction: float,
    seed: int,
    out_dir: str | Path,
    *,
    id_prefix: str = "ph",
    workers: int = 1,
) -> tuple[list[ManifestRecord], Path]:
    """Write ``n`` phantom PNGs under ``out_dir/images`` plus ``out_dir/manifest.jsonl``.

    Returns the records (paths relative to ``out_dir``) and the manifest
    path.  Output bytes depend only on ``(n, convex_fraction, seed,
    id_prefix)``.
    """
    layout = plan(n, convex_fraction)
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)

    windows: dict[int, ViewingWindow] = {}
    for probe, _, video in layout:
        if video not in windows:
            windows[video] = random_window(probe, _rng(seed, "video", video))

    def make(i: int) -> ManifestRecord:
        probe, positive, video = layout[i]
        w = windows[video]
        img = render_phantom(w, positive, _rng(seed, "frame", i))
        rel = f"images/{id_prefix}{i:05d}.png"
        save_image(img, out_dir / rel)
        return ManifestRecord(
            id=f"{id_prefix}{i:05d}",
            path=rel,
            probe=probe,
            label="positive" if positive else "negative",
            video_id=f"{id_prefix}v{video:04d}",
            window=tuple(w.to_annotation()),
        )

    if workers <= 1:
        records = [make(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(make, range(n)))
    manifest = out_dir / "manifest.jsonl"
    write_manifest(records, manifest)
    return records, manifest
