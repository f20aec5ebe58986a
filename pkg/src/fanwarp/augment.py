"""Linear-convex projective augmentation.

Every call draws one new lateral-edge slope, moves the bottom corners of
the viewing window to match it, fits the homography between old and new
corners and warps the image with it.  Convex frames are jittered around
their own slope; linear frames are flared towards a fixed convex-looking
slope.

Randomness is derived per item from ``(global_seed, item_id, epoch)``, so
results never depend on iteration order or worker count.  The generator
is PCG64 seeded with the first 8 bytes of a BLAKE2b digest of the triple;
normal variates use the inverse CDF of one 53-bit uniform per draw.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .geometry import (
    GeometryError,
    Homography,
    Probe,
    ViewingWindow,
    edge_slopes,
    estimate_homography,
    resample_window,
)
from .raster import GrayImage, warp_image

__all__ = [
    "AugmentPolicy",
    "AugmentRng",
    "derive_seed",
    "sample_slope",
    "augment_convex",
    "augment_linear",
    "augment",
    "augment_many",
    "load_policy",
]

log = logging.getLogger(__name__)

_STD_NORMAL = NormalDist()


@dataclass(frozen=True)
class AugmentPolicy:
    """Slope distribution parameters.

    ``apply_linear_transform=False`` passes linear frames through
    untouched (the ablation regime); convex frames are still jittered.
    """

    convex_sigma: float = 0.15
    linear_center: float = 2.5
    linear_sigma: float = 0.15
    s_min: float = 0.5
    max_retries: int = 10
    apply_linear_transform: bool = True

    def __post_init__(self):
        for name in ("convex_sigma", "linear_center", "linear_sigma", "s_min"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValueError(f"{name} must be a finite number, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.convex_sigma < 0 or self.linear_sigma < 0:
            raise ValueError("sigmas must be >= 0")
        if self.s_min <= 0:
            raise ValueError(f"s_min must be > 0, got {self.s_min}")
        if self.linear_center < self.s_min:
            raise ValueError(f"linear_center {self.linear_center} is below s_min {self.s_min}")
        if isinstance(self.max_retries, bool) or not isinstance(self.max_retries, int) or self.max_retries < 1:
            raise ValueError(f"max_retries must be an integer >= 1, got {self.max_retries!r}")
        if not isinstance(self.apply_linear_transform, bool):
            raise ValueError("apply_linear_transform must be a boolean")

    def to_dict(self) -> dict:
        return asdict(self)


def _parse_scalar(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip("\"'")


def load_policy(path: str | Path | None) -> AugmentPolicy:
    """Read a policy file; ``None`` gives the defaults.

    Accepts either a JSON object or ``key = value`` lines (``#`` starts a
    comment).  Unknown keys are an error; missing keys keep their defaults.
    """
    if path is None:
        return AugmentPolicy()
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        raw = json.loads(text)
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: policy must be a JSON object")
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else ":"
            if sep not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = line.split(sep, 1)
            raw[key.strip()] = _parse_scalar(value)
    known = {f.name for f in fields(AugmentPolicy)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"{path}: unknown policy keys {unknown}; allowed: {sorted(known)}")
    return AugmentPolicy(**raw)


def derive_seed(global_seed: int, item_id: str, epoch: int) -> int:
    """64-bit seed for one item in one epoch (BLAKE2b over a fixed encoding)."""
    payload = struct.pack("<QQ", global_seed & 0xFFFFFFFFFFFFFFFF, epoch & 0xFFFFFFFFFFFFFFFF)
    digest = hashlib.blake2b(payload + str(item_id).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class AugmentRng:
    """Per-item random stream; never share one instance across items."""

    def __init__(self, global_seed: int, item_id: str, epoch: int = 0):
        self.global_seed = global_seed
        self.item_id = str(item_id)
        self.epoch = epoch
        self._bits = np.random.PCG64(derive_seed(global_seed, item_id, epoch))

    def uniform(self) -> float:
        """Uniform on the open interval (0, 1), 53 bits."""
        raw = int(self._bits.random_raw())
        return ((raw >> 11) + 0.5) * 2.0**-53

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        return mu + sigma * _STD_NORMAL.inv_cdf(self.uniform())


def sample_slope(center: float, sigma: float, rng: AugmentRng, s_min: float = 0.5, max_retries: int = 10) -> float:
    """Draw a slope from Normal(center, sigma), redrawing values below ``s_min``.

    After ``max_retries`` rejected redraws the value is clamped to ``s_min``.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if center < s_min:
        raise ValueError(f"center {center} is below s_min {s_min}")
    if sigma == 0:
        return float(center)
    s = rng.normal(center, sigma)
    retries = 0
    while s < s_min and retries < max_retries:
        s = rng.normal(center, sigma)
        retries += 1
    return max(s, s_min)


def _apply(img: GrayImage, w: ViewingWindow, s_new: float, policy: AugmentPolicy):
    w_new = resample_window(w, s_new, policy.s_min)
    h = estimate_homography(w.corners(), w_new.corners())
    if h == Homography.identity():
        return img, w_new
    return warp_image(img, h), w_new


def augment_convex(img: GrayImage, w: ViewingWindow, policy: AugmentPolicy, rng: AugmentRng):
    """Jitter a convex window around its own (mean) edge slope."""
    if w.probe is not Probe.CONVEX:
        raise GeometryError(f"augment_convex needs a convex window, got {w.probe.value}")
    left, right = edge_slopes(w)
    center = (left + right) / 2.0
    if not math.isfinite(center):
        log.warning("convex window %s has a vertical edge; centring on %s", rng.item_id, policy.linear_center)
        center = policy.linear_center
    elif center < policy.s_min:
        log.warning("convex window %s slope %.3f below s_min; clamped", rng.item_id, center)
        center = policy.s_min
    s_new = sample_slope(center, policy.convex_sigma, rng, policy.s_min, policy.max_retries)
    return _apply(img, w, s_new, policy)


def augment_linear(img: GrayImage, w: ViewingWindow, policy: AugmentPolicy, rng: AugmentRng):
    """Flare a rectangular linear window into a convex-looking trapezoid."""
    if w.probe is not Probe.LINEAR:
        raise GeometryError(f"augment_linear needs a linear window, got {w.probe.value}")
    if not w.is_rectangular(1.0):
        raise GeometryError(f"linear window {rng.item_id} is not rectangular within 1 px: {w.to_annotation()}")
    s_new = sample_slope(policy.linear_center, policy.linear_sigma, rng, policy.s_min, policy.max_retries)
    return _apply(img, w, s_new, policy)


def augment(record: tuple[GrayImage, ViewingWindow], policy: AugmentPolicy, rng: AugmentRng):
    """Augment one ``(image, window)`` record according to its probe kind."""
    img, w = record
    if w.probe is Probe.CONVEX:
        return augment_convex(img, w, policy, rng)
    if w.probe is Probe.LINEAR:
        if not policy.apply_linear_transform:
            return img, w
        return augment_linear(img, w, policy, rng)
    raise GeometryError(f"unknown probe kind {w.probe!r}")


def augment_many(
    items: Sequence[tuple[str, GrayImage, ViewingWindow]],
    policy: AugmentPolicy,
    seed: int,
    epoch: int,
    workers: int = 1,
) -> list[tuple[GrayImage, ViewingWindow]]:
    """Augment ``(item_id, image, window)`` triples, in input order."""

    def one(item):
        item_id, img, w = item
        return augment((img, w), policy, AugmentRng(seed, item_id, epoch))

    if workers <= 1:
        return [one(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, items))
