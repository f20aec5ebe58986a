"""Manifests, leakage-free stratified splits and the augmented sample stream."""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .augment import AugmentPolicy, AugmentRng, augment, derive_seed
from .geometry import GeometryError, Probe, ViewingWindow
from .raster import GrayImage, load_image

__all__ = [
    "ManifestError",
    "SplitWarning",
    "ManifestRecord",
    "StreamItem",
    "SPLITS",
    "DEFAULT_FRACTIONS",
    "load_manifest",
    "write_manifest",
    "split",
    "save_assignment",
    "load_assignment",
    "stats",
    "format_stats",
    "stream",
    "CachedLoader",
]

LABELS = ("positive", "negative")
SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.72, 0.14, 0.14)
_FIELDS = ("id", "path", "probe", "label", "video_id", "window")


class ManifestError(ValueError):
    pass


class SplitWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    path: str
    probe: Probe
    label: str
    video_id: str | None = None
    window: tuple[float, ...] | None = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ManifestError(f"record id must be a nonempty string, got {self.id!r}")
        if not isinstance(self.path, str) or not self.path:
            raise ManifestError(f"record {self.id}: path must be a nonempty string")
        try:
            object.__setattr__(self, "probe", Probe(self.probe))
        except ValueError:
            raise ManifestError(
                f"record {self.id}: probe {self.probe!r} not in {[p.value for p in Probe]}"
            ) from None
        if self.label not in LABELS:
            raise ManifestError(f"record {self.id}: label {self.label!r} not in {list(LABELS)}")
        if self.video_id is not None and not isinstance(self.video_id, str):
            raise ManifestError(f"record {self.id}: video_id must be a string or null")
        if self.window is not None:
            try:
                w = ViewingWindow.from_annotation(self.window, self.probe)
            except (GeometryError, TypeError) as exc:
                raise ManifestError(f"record {self.id}: malformed window annotation: {exc}") from None
            object.__setattr__(self, "window", tuple(w.to_annotation()))

    @property
    def target(self) -> int:
        return 1 if self.label == "positive" else 0

    @property
    def group(self) -> str:
        return self.video_id if self.video_id is not None else self.id

    def viewing_window(self) -> ViewingWindow:
        if self.window is None:
            raise ManifestError(f"record {self.id} has no window annotation")
        return ViewingWindow.from_annotation(self.window, self.probe)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "path": self.path,
            "probe": self.probe.value,
            "label": self.label,
            "video_id": self.video_id,
            "window": None if self.window is None else list(self.window),
        }


def load_manifest(path: str | Path) -> list[ManifestRecord]:
    """Read a JSON-lines manifest.

    Relative image paths are resolved against the manifest's directory.
    Unknown fields are ignored with a warning.
    """
    path = Path(path)
    base = path.parent
    records: list[ManifestRecord] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise ManifestError(f"{path}:{lineno}: expected a JSON object")
            extra = sorted(set(obj) - set(_FIELDS))
            if extra:
                warnings.warn(f"{path}:{lineno}: ignoring unknown fields {extra}", stacklevel=2)
            missing = [k for k in ("id", "path", "probe", "label") if k not in obj]
            if missing:
                raise ManifestError(f"{path}:{lineno}: missing required fields {missing}")
            try:
                rec = ManifestRecord(**{k: obj.get(k) for k in _FIELDS})
            except ManifestError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
            if rec.id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {rec.id!r} (first on line {seen[rec.id]})")
            seen[rec.id] = lineno
            if not Path(rec.path).is_absolute():
                rec = _with_path(rec, str(base / rec.path))
            records.append(rec)
    return records


def _with_path(rec: ManifestRecord, path: str) -> ManifestRecord:
    return ManifestRecord(rec.id, path, rec.probe, rec.label, rec.video_id, rec.window)


def write_manifest(records: Iterable[ManifestRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def split(
    records: Sequence[ManifestRecord],
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 0,
    level: str = "video",
) -> dict[str, str]:
    """Assign every record to train/val/test without splitting a video.

    Groups (``video_id``, or the record id when absent; always the record
    id when ``level="image"``) are bucketed by
    their majority (label, probe) stratum and shuffled with a seeded
    generator.  Strata are processed largest first; each gets
    ``floor(fraction * n_groups)`` groups per split and its leftover groups
    go to whichever split is furthest behind its overall target.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")

    if level not in ("video", "image"):
        raise ValueError(f"level must be 'video' or 'image', got {level!r}")
    members: dict[str, list[ManifestRecord]] = defaultdict(list)
    for rec in records:
        members[rec.group if level == "video" else rec.id].append(rec)

    strata: dict[tuple[str, str], list[str]] = defaultdict(list)
    for g in sorted(members):
        votes = Counter((r.label, r.probe.value) for r in members[g])
        top = max(votes.values())
        strata[min(k for k, v in votes.items() if v == top)].append(g)

    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "split", 0)))
    assigned_groups = [0, 0, 0]
    seen_groups = 0
    out: dict[str, str] = {}
    for key in sorted(strata, key=lambda k: (-len(strata[k]), k)):
        groups = strata[key]
        order = [groups[i] for i in rng.permutation(len(groups))]
        n = len(order)
        if n < 3:
            warnings.warn(
                f"stratum {key} has {n} group(s); cannot fill all three splits, assigning to train",
                SplitWarning,
                stacklevel=2,
            )
            counts = [n, 0, 0]
        else:
            counts = [math.floor(f * n + 1e-9) for f in fractions]
            open_ = [0, 1, 2]
            for _ in range(n - sum(counts)):
                target = [f * (seen_groups + n) for f in fractions]
                deficit = [target[i] - assigned_groups[i] - counts[i] for i in range(3)]
                pick = max(open_, key=lambda i: (deficit[i], -i))
                counts[pick] += 1
                open_.remove(pick)
        seen_groups += n
        pos = 0
        for s, c in zip(SPLITS, counts):
            for g in order[pos:pos + c]:
                for r in members[g]:
                    out[r.id] = s
            pos += c
        for i in range(3):
            assigned_groups[i] += counts[i]
    return out


def save_assignment(assignment: Mapping[str, str], path: str | Path) -> None:
    Path(path).write_text(json.dumps(dict(assignment), sort_keys=True, indent=0) + "\n", encoding="utf-8")


def load_assignment(path: str | Path) -> dict[str, str]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict) or any(v not in SPLITS for v in data.values()):
        raise ManifestError(f"{path}: expected a JSON object mapping id to one of {list(SPLITS)}")
    return data


def stats(records: Iterable[ManifestRecord]) -> dict:
    """Counts by probe, label, probe x label and window-annotation coverage."""
    records = list(records)
    by_probe = {p.value: 0 for p in Probe}
    by_label = {lab: 0 for lab in LABELS}
    cells = {f"{p.value}/{lab}": 0 for p in Probe for lab in LABELS}
    annotated = 0
    for r in records:
        by_probe[r.probe.value] += 1
        by_label[r.label] += 1
        cells[f"{r.probe.value}/{r.label}"] += 1
        annotated += r.window is not None
    return {
        "total": len(records),
        "by_probe": by_probe,
        "by_label": by_label,
        "by_probe_label": cells,
        "windows_annotated": annotated,
        "window_coverage": annotated / len(records) if records else 0.0,
    }


def format_stats(table: dict) -> str:
    lines = [f"{'probe':<8} {'label':<9} {'count':>7}"]
    for key, n in table["by_probe_label"].items():
        probe, label = key.split("/")
        lines.append(f"{probe:<8} {label:<9} {n:>7}")
    lines.append(f"{'total':<18} {table['total']:>7}")
    lines.append(f"{'windows':<18} {table['windows_annotated']:>7}  ({table['window_coverage']:.1%})")
    return "\n".join(lines)


class StreamItem(NamedTuple):
    image: GrayImage
    label: int
    id: str


class CachedLoader:
    """Image loader keeping decoded frames as 8-bit arrays in memory."""

    def __init__(self, loader: Callable[[str], GrayImage] = load_image):
        self._loader = loader
        self._cache: dict[str, np.ndarray] = {}

    def __call__(self, path: str) -> GrayImage:
        a = self._cache.get(path)
        if a is None:
            img = self._loader(path)
            q = np.floor(img.data * 255.0 + 0.5)
            if np.array_equal(q / 255.0, img.data):
                self._cache[path] = q.astype(np.uint8)
            return img
        return GrayImage(a / 255.0)


def stream(
    records: Sequence[ManifestRecord],
    assignment: Mapping[str, str],
    split_name: str,
    policy: AugmentPolicy | None,
    seed: int,
    epoch: int,
    *,
    augment_train: bool = True,
    workers: int = 1,
    loader: Callable[[str], GrayImage] = load_image,
    chunk: int = 64,
) -> Iterator[StreamItem]:
    """Yield every record of ``split_name`` once, in a seeded shuffled order.

    Only the train split is augmented, with a generator derived from
    ``(seed, record id, epoch)``; val and test images come through as
    stored.  ``policy=None`` or ``augment_train=False`` disables
    augmentation entirely.  Output is identical for any ``workers``.
    """
    if split_name not in SPLITS:
        raise ValueError(f"unknown split {split_name!r}; expected one of {list(SPLITS)}")
    chosen = sorted((r for r in records if assignment.get(r.id) == split_name), key=lambda r: r.id)
    do_augment = split_name == "train" and augment_train and policy is not None
    if do_augment:
        for r in chosen:
            if r.window is None:
                raise ManifestError(f"record {r.id} has no window annotation; estimate it before streaming")
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, f"order:{split_name}", epoch)))
    ordered = [chosen[i] for i in rng.permutation(len(chosen))]

    def produce(rec: ManifestRecord) -> StreamItem:
        img = loader(rec.path)
        if do_augment:
            img, _ = augment((img, rec.viewing_window()), policy, AugmentRng(seed, rec.id, epoch))
        return StreamItem(img, rec.target, rec.id)

    if workers <= 1:
        for rec in ordered:
            yield produce(rec)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for start in range(0, len(ordered), chunk):
            yield from pool.map(produce, ordered[start:start + chunk])
