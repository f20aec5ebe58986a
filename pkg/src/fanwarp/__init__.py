"""Projective linear-convex augmentation for ultrasound frames."""

from .augment import AugmentPolicy, AugmentRng, augment, augment_convex, augment_linear, sample_slope
from .geometry import (
    GeometryError,
    Homography,
    Point2,
    Probe,
    ViewingWindow,
    apply_homography,
    edge_slopes,
    estimate_homography,
    invert,
    resample_window,
)
from .raster import GrayImage, WindowMask, downsample, psnr, render_mask, warp_image
from .windowfit import estimate_window

__all__ = [
    "AugmentPolicy", "AugmentRng", "augment", "augment_convex", "augment_linear", "sample_slope",
    "GeometryError", "Homography", "Point2", "Probe", "ViewingWindow", "apply_homography", "edge_slopes",
    "estimate_homography", "invert", "resample_window",
    "GrayImage", "WindowMask", "downsample", "psnr", "render_mask", "warp_image",
    "estimate_window",
]

__version__ = "0.1.0"
