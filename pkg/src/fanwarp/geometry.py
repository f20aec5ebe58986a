"""Viewing-window geometry and 4-point homographies.

Coordinates are in pixels with ``x`` to the right and ``y`` increasing
downward.  A viewing window is the quadrilateral of echo data in an
ultrasound frame, described by its four corners::

    p1_left ---------- p1_right        (probe face)
       \\                 /
        \\               /
      p2_left ------ p2_right           (imaging depth)

The slope of a lateral edge is its vertical depth divided by its outward
horizontal run, so a vertical edge (linear probe) has slope ``inf`` and a
smaller slope means a wider flare.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "GeometryError",
    "Probe",
    "Point2",
    "ViewingWindow",
    "Homography",
    "S_MIN",
    "edge_slopes",
    "resample_window",
    "estimate_homography",
    "apply_homography",
    "apply_homography_array",
    "invert",
    "compose",
]

S_MIN = 0.5

_DET_EPS = 1e-12
_NORM_EPS = 1e-9
_DENOM_EPS = 1e-12


class GeometryError(ValueError):
    """Invalid or degenerate geometric configuration."""


class Probe(str, Enum):
    CONVEX = "convex"
    LINEAR = "linear"


class Point2(NamedTuple):
    x: float
    y: float


def _cross(o: Point2, a: Point2, b: Point2) -> float:
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)


def _collinear_triple(pts: Sequence[Point2], tol: float = 1e-9):
    """Return the first (i, j, k) index triple that is collinear, else None.

    ``tol`` is relative to the squared extent of the point set.
    """
    xs = [p.x for p in pts]
    ys = [p.y for p in pts]
    scale = max(max(xs) - min(xs), max(ys) - min(ys), 1.0) ** 2
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                if abs(_cross(pts[i], pts[j], pts[k])) <= tol * scale:
                    return i, j, k
    return None


@dataclass(frozen=True)
class ViewingWindow:
    """Four corners of the echo region plus the probe that produced it.

    Construction validates the corner ordering and that no three corners
    are collinear; a violation raises :class:`GeometryError` with the
    corners in the message.
    """

    p1_left: Point2
    p2_left: Point2
    p1_right: Point2
    p2_right: Point2
    probe: Probe = Probe.CONVEX

    def __post_init__(self):
        for name in ("p1_left", "p2_left", "p1_right", "p2_right"):
            p = getattr(self, name)
            p = Point2(float(p[0]), float(p[1]))
            if not (math.isfinite(p.x) and math.isfinite(p.y)):
                raise GeometryError(f"non-finite corner {name}={p}; {self._dump()}")
            object.__setattr__(self, name, p)
        object.__setattr__(self, "probe", Probe(self.probe))

        if not (self.p1_left.y < self.p2_left.y and self.p1_right.y < self.p2_right.y):
            raise GeometryError(f"top corners must lie above bottom corners; {self._dump()}")
        if not self.p1_left.x < self.p1_right.x:
            raise GeometryError(f"p1_left must be left of p1_right; {self._dump()}")
        # bottom edge crossing over makes a bow-tie, not a window
        if not self.p2_left.x < self.p2_right.x:
            raise GeometryError(f"p2_left must be left of p2_right; {self._dump()}")
        bad = _collinear_triple(self.corners())
        if bad is not None:
            raise GeometryError(f"corners {bad} are collinear; {self._dump()}")

    def _dump(self) -> str:
        return (
            f"p1_left={tuple(self.p1_left)} p2_left={tuple(self.p2_left)} "
            f"p1_right={tuple(self.p1_right)} p2_right={tuple(self.p2_right)} "
            f"probe={getattr(self.probe, 'value', self.probe)}"
        )

    def corners(self) -> tuple[Point2, Point2, Point2, Point2]:
        """Corners in annotation order: p1_left, p2_left, p1_right, p2_right."""
        return (self.p1_left, self.p2_left, self.p1_right, self.p2_right)

    def polygon(self) -> tuple[Point2, Point2, Point2, Point2]:
        """Corners in boundary order p1_left -> p1_right -> p2_right -> p2_left."""
        return (self.p1_left, self.p1_right, self.p2_right, self.p2_left)

    def to_annotation(self) -> list[float]:
        """The 8-number annotation ``[p1lx, p1ly, p2lx, p2ly, p1rx, p1ry, p2rx, p2ry]``."""
        return [c for p in self.corners() for c in p]

    @classmethod
    def from_annotation(cls, values: Sequence[float], probe: Probe | str = Probe.CONVEX) -> "ViewingWindow":
        values = list(values)
        if len(values) != 8:
            raise GeometryError(f"window annotation needs 8 numbers, got {len(values)}")
        try:
            v = [float(x) for x in values]
        except (TypeError, ValueError) as exc:
            raise GeometryError(f"window annotation must be numeric: {values!r}") from exc
        return cls(
            Point2(v[0], v[1]), Point2(v[2], v[3]), Point2(v[4], v[5]), Point2(v[6], v[7]), Probe(probe)
        )

    def is_rectangular(self, tol: float = 1.0) -> bool:
        return abs(self.p1_left.x - self.p2_left.x) <= tol and abs(self.p1_right.x - self.p2_right.x) <= tol

    def translated(self, dx: float, dy: float) -> "ViewingWindow":
        return ViewingWindow(
            *(Point2(p.x + dx, p.y + dy) for p in self.corners()), probe=self.probe
        )


def _edge_slope(depth: float, outward_run: float) -> float:
    if outward_run <= 0:
        return math.inf
    return depth / outward_run


def edge_slopes(w: ViewingWindow) -> tuple[float, float]:
    """Return ``(left, right)`` lateral edge slopes of a window.

    Edges that are vertical or lean inward report ``inf``.

    >>> w = ViewingWindow((40, 10), (10, 90), (60, 10), (90, 90))
    >>> edge_slopes(w)[0]
    2.6666666666666665
    """
    left = _edge_slope(w.p2_left.y - w.p1_left.y, w.p1_left.x - w.p2_left.x)
    right = _edge_slope(w.p2_right.y - w.p1_right.y, w.p2_right.x - w.p1_right.x)
    return left, right


def resample_window(w: ViewingWindow, s_new: float, s_min: float = S_MIN) -> ViewingWindow:
    """Move the bottom corners so both lateral edges get slope ``s_new``.

    Top corners and the bottom y-coordinates stay fixed.  An edge whose
    slope already equals ``s_new`` keeps its corner untouched, so resampling
    a window at its own slope is an exact identity.
    """
    if not math.isfinite(s_new) or s_new < s_min:
        raise GeometryError(f"slope {s_new!r} must be finite and >= {s_min}")
    left, right = edge_slopes(w)
    p2_left = w.p2_left
    if left != s_new:
        p2_left = Point2(w.p1_left.x - (w.p2_left.y - w.p1_left.y) / s_new, w.p2_left.y)
    p2_right = w.p2_right
    if right != s_new:
        p2_right = Point2(w.p1_right.x + (w.p2_right.y - w.p1_right.y) / s_new, w.p2_right.y)
    return ViewingWindow(w.p1_left, p2_left, w.p1_right, p2_right, w.probe)


@dataclass(frozen=True)
class Homography:
    """Invertible 3x3 projective matrix, stored row-major as 9 floats.

    Normalised so ``m[2][2] == 1`` when that entry is not tiny, otherwise
    to unit Frobenius norm.
    """

    m: tuple[float, ...]

    def __post_init__(self):
        a = np.asarray(self.m, dtype=np.float64).reshape(-1)
        if a.size != 9 or not np.all(np.isfinite(a)):
            raise GeometryError(f"homography needs 9 finite entries, got {self.m!r}")
        a = _normalise(a.reshape(3, 3))
        if abs(np.linalg.det(a)) <= _DET_EPS:
            raise GeometryError(f"singular homography {a.tolist()}")
        object.__setattr__(self, "m", tuple(float(v) for v in a.reshape(-1)))

    @classmethod
    def identity(cls) -> "Homography":
        return cls((1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0))

    @classmethod
    def translation(cls, dx: float, dy: float) -> "Homography":
        return cls((1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0))

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.m, dtype=np.float64).reshape(3, 3)

    def to_json(self) -> list[float]:
        return list(self.m)

    @classmethod
    def from_json(cls, values: Sequence[float]) -> "Homography":
        return cls(tuple(float(v) for v in values))


def _normalise(a: np.ndarray) -> np.ndarray:
    if abs(a[2, 2]) > _NORM_EPS:
        return a / a[2, 2]
    return a / np.linalg.norm(a)


def _solve_pivoting(a: list[list[float]], b: list[float]) -> list[float]:
    """Solve ``a x = b`` by Gaussian elimination with partial pivoting."""
    n = len(b)
    rows = [list(a[i]) + [b[i]] for i in range(n)]
    scale = max(abs(v) for r in rows for v in r[:n]) or 1.0
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(rows[r][col]))
        if abs(rows[piv][col]) <= 1e-13 * scale:
            raise np.linalg.LinAlgError(f"singular system at column {col}")
        rows[col], rows[piv] = rows[piv], rows[col]
        pivot_row = rows[col]
        for r in range(col + 1, n):
            f = rows[r][col] / pivot_row[col]
            if f != 0.0:
                row = rows[r]
                for c in range(col, n + 1):
                    row[c] -= f * pivot_row[c]
    x = [0.0] * n
    for i in range(n - 1, -1, -1):
        s = rows[i][n]
        for c in range(i + 1, n):
            s -= rows[i][c] * x[c]
        x[i] = s / rows[i][i]
    return x


def estimate_homography(src: Sequence[Point2], dst: Sequence[Point2]) -> Homography:
    """Exact homography mapping four ``src`` points onto four ``dst`` points.

    Direct linear transform with ``m[2][2]`` fixed to 1: the eight
    unknowns come from two equations per correspondence.  Identical
    quadruples return the exact identity.

    Raises
    ------
    GeometryError
        If either quadruple has three collinear points or the linear
        system is singular.
    """
    src = [Point2(float(p[0]), float(p[1])) for p in src]
    dst = [Point2(float(p[0]), float(p[1])) for p in dst]
    if len(src) != 4 or len(dst) != 4:
        raise GeometryError("exactly four correspondences are required")
    for name, quad in (("src", src), ("dst", dst)):
        bad = _collinear_triple(quad)
        if bad is not None:
            pts = [tuple(quad[i]) for i in bad]
            raise GeometryError(f"{name} points {bad} are collinear: {pts}")
    if src == dst:
        return Homography.identity()

    a: list[list[float]] = []
    b: list[float] = []
    for (x, y), (u, v) in zip(src, dst):
        a.append([x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y])
        b.append(u)
        a.append([0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y])
        b.append(v)
    try:
        h = _solve_pivoting(a, b)
    except np.linalg.LinAlgError as exc:
        raise GeometryError(f"degenerate correspondences src={src} dst={dst}: {exc}") from exc
    return Homography(tuple(h) + (1.0,))


def apply_homography(h: Homography, p: Point2) -> Point2:
    m = h.m
    x, y = float(p[0]), float(p[1])
    d = m[6] * x + m[7] * y + m[8]
    if abs(d) <= _DENOM_EPS:
        raise GeometryError(f"point {(x, y)} maps to infinity")
    return Point2((m[0] * x + m[1] * y + m[2]) / d, (m[3] * x + m[4] * y + m[5]) / d)


def apply_homography_array(h: Homography, xs: np.ndarray, ys: np.ndarray):
    """Vectorised :func:`apply_homography`; points at infinity come back as NaN."""
    m = h.m
    d = m[6] * xs + m[7] * ys + m[8]
    bad = np.abs(d) <= _DENOM_EPS
    d = np.where(bad, np.nan, d)
    return (m[0] * xs + m[1] * ys + m[2]) / d, (m[3] * xs + m[4] * ys + m[5]) / d


def invert(h: Homography) -> Homography:
    """Inverse via the adjugate, renormalised."""
    a, b, c, d, e, f, g, i_, k = h.m
    adj = (
        e * k - f * i_, c * i_ - b * k, b * f - c * e,
        f * g - d * k, a * k - c * g, c * d - a * f,
        d * i_ - e * g, b * g - a * i_, a * e - b * d,
    )
    det = a * adj[0] + b * adj[3] + c * adj[6]
    if abs(det) <= _DET_EPS:
        raise GeometryError(f"cannot invert near-singular homography {h.m}")
    return Homography(adj)


def compose(outer: Homography, inner: Homography) -> Homography:
    """Homography applying ``inner`` first, then ``outer``."""
    return Homography(tuple((outer.matrix @ inner.matrix).reshape(-1)))
