"""Axis-aligned box unions with measure-zero point exclusions.

Spatial regions are finite unions of axis-aligned boxes, optionally minus a
finite set of excluded points.  Excluded points matter only to counting-measure
sums over events; every geometric quantity (area, morphology, Jaccard) ignores
them.  Areas are computed exactly by a coordinate-compression sweep.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

AREA_TOL = 1e-12


def _as_box_array(boxes) -> np.ndarray:
    arr = np.asarray(boxes, dtype=float)
    if arr.size == 0:
        return np.empty((0, 4))
    arr = arr.reshape(-1, 4)
    if np.any(arr[:, 2] < arr[:, 0]) or np.any(arr[:, 3] < arr[:, 1]):
        raise ValueError("box must satisfy x1 >= x0 and y1 >= y0")
    # degenerate boxes carry no area and are dropped
    keep = (arr[:, 2] - arr[:, 0] > AREA_TOL) & (arr[:, 3] - arr[:, 1] > AREA_TOL)
    return arr[keep]


def _as_point_array(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return np.empty((0, 2))
    return arr.reshape(-1, 2)


def _union_area(boxes: np.ndarray) -> float:
    """Exact area of a box union by sweeping compressed x-slabs."""
    if len(boxes) == 0:
        return 0.0
    xs = np.unique(np.concatenate([boxes[:, 0], boxes[:, 2]]))
    total = 0.0
    for x0, x1 in zip(xs[:-1], xs[1:]):
        width = x1 - x0
        if width <= 0.0:
            continue
        xm = 0.5 * (x0 + x1)
        cover = boxes[(boxes[:, 0] <= xm) & (boxes[:, 2] >= xm)]
        if len(cover) == 0:
            continue
        total += width * _interval_union_length(cover[:, 1], cover[:, 3])
    return total


def _interval_union_length(lo: np.ndarray, hi: np.ndarray) -> float:
    order = np.argsort(lo, kind="stable")
    lo, hi = lo[order], hi[order]
    length = 0.0
    cur_lo, cur_hi = lo[0], hi[0]
    for a, b in zip(lo[1:], hi[1:]):
        if a > cur_hi:
            length += cur_hi - cur_lo
            cur_lo, cur_hi = a, b
        else:
            cur_hi = max(cur_hi, b)
    return length + (cur_hi - cur_lo)


def _complement_boxes(boxes: np.ndarray, bounds) -> np.ndarray:
    """Decompose bounds-minus-union into disjoint boxes (x-slab strips)."""
    bx0, by0, bx1, by1 = (float(v) for v in bounds)
    if len(boxes) == 0:
        return np.array([[bx0, by0, bx1, by1]])
    clipped = clip_boxes(boxes, bounds)
    xs = np.unique(np.concatenate([[bx0, bx1], clipped[:, 0], clipped[:, 2]]))
    xs = xs[(xs >= bx0) & (xs <= bx1)]
    out = []
    for x0, x1 in zip(xs[:-1], xs[1:]):
        if x1 - x0 <= 0.0:
            continue
        xm = 0.5 * (x0 + x1)
        cover = clipped[(clipped[:, 0] <= xm) & (clipped[:, 2] >= xm)]
        gaps = _interval_gaps(cover[:, 1] if len(cover) else np.empty(0),
                              cover[:, 3] if len(cover) else np.empty(0),
                              by0, by1)
        for g0, g1 in gaps:
            out.append((x0, g0, x1, g1))
    return _as_box_array(out)


def _interval_gaps(lo, hi, y0, y1):
    if len(lo) == 0:
        return [(y0, y1)] if y1 - y0 > AREA_TOL else []
    order = np.argsort(lo, kind="stable")
    lo, hi = lo[order], hi[order]
    gaps = []
    cursor = y0
    for a, b in zip(lo, hi):
        a, b = max(a, y0), min(b, y1)
        if b < cursor:
            continue
        if a > cursor:
            gaps.append((cursor, a))
        cursor = max(cursor, b)
    if y1 - cursor > AREA_TOL:
        gaps.append((cursor, y1))
    return [(a, b) for a, b in gaps if b - a > AREA_TOL]


def clip_boxes(boxes: np.ndarray, bounds) -> np.ndarray:
    bx0, by0, bx1, by1 = (float(v) for v in bounds)
    if len(boxes) == 0:
        return np.empty((0, 4))
    arr = boxes.copy()
    arr[:, 0] = np.maximum(arr[:, 0], bx0)
    arr[:, 1] = np.maximum(arr[:, 1], by0)
    arr[:, 2] = np.minimum(arr[:, 2], bx1)
    arr[:, 3] = np.minimum(arr[:, 3], by1)
    return _as_box_array(arr)


def _pairwise_intersections(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if len(a) == 0 or len(b) == 0:
        return np.empty((0, 4))
    x0 = np.maximum(a[:, None, 0], b[None, :, 0])
    y0 = np.maximum(a[:, None, 1], b[None, :, 1])
    x1 = np.minimum(a[:, None, 2], b[None, :, 2])
    y1 = np.minimum(a[:, None, 3], b[None, :, 3])
    boxes = np.stack([x0, y0, x1, y1], axis=-1).reshape(-1, 4)
    keep = (boxes[:, 2] - boxes[:, 0] > AREA_TOL) & (boxes[:, 3] - boxes[:, 1] > AREA_TOL)
    return boxes[keep]


@dataclass(frozen=True, eq=False)
class RegionUnion:
    """Union of axis-aligned boxes minus a finite excluded-point set."""

    boxes: np.ndarray = field(default_factory=lambda: np.empty((0, 4)))
    excluded: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))

    def __post_init__(self):
        object.__setattr__(self, "boxes", _as_box_array(self.boxes))
        object.__setattr__(self, "excluded", _as_point_array(self.excluded))
        self.boxes.setflags(write=False)
        self.excluded.setflags(write=False)

    @classmethod
    def empty(cls) -> "RegionUnion":
        return cls()

    @classmethod
    def from_balls(cls, centers, delta: float, bounds, excluded=()) -> "RegionUnion":
        """Union of clipped l-inf balls of radius delta around the centers."""
        centers = _as_point_array(centers)
        if len(centers) == 0:
            return cls(excluded=_as_point_array(excluded))
        boxes = np.column_stack([
            centers[:, 0] - delta, centers[:, 1] - delta,
            centers[:, 0] + delta, centers[:, 1] + delta,
        ])
        return cls(boxes=clip_boxes(boxes, bounds), excluded=_as_point_array(excluded))

    @property
    def is_empty(self) -> bool:
        return len(self.boxes) == 0

    def area(self) -> float:
        return _union_area(self.boxes)

    def contains_points(self, points) -> np.ndarray:
        """Membership mask; excluded points are never members."""
        pts = _as_point_array(points)
        if len(pts) == 0:
            return np.zeros(0, dtype=bool)
        if len(self.boxes) == 0:
            return np.zeros(len(pts), dtype=bool)
        b = self.boxes
        inside = (
            (pts[:, None, 0] >= b[None, :, 0]) & (pts[:, None, 0] <= b[None, :, 2])
            & (pts[:, None, 1] >= b[None, :, 1]) & (pts[:, None, 1] <= b[None, :, 3])
        ).any(axis=1)
        if len(self.excluded) and inside.any():
            # excluded locations are exact coordinates of scored events
            hit = (pts[:, None, :] == self.excluded[None, :, :]).all(axis=2).any(axis=1)
            inside &= ~hit
        return inside

    def to_dict(self) -> dict:
        return {"boxes": self.boxes.tolist(), "excluded": self.excluded.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "RegionUnion":
        return cls(boxes=d.get("boxes", []), excluded=d.get("excluded", []))

    @classmethod
    def from_json(cls, text: str) -> "RegionUnion":
        return cls.from_dict(json.loads(text))


def region_area(r: RegionUnion) -> float:
    return r.area()


def intersect(a: RegionUnion, b: RegionUnion) -> RegionUnion:
    return RegionUnion(boxes=_pairwise_intersections(a.boxes, b.boxes))


def union(a: RegionUnion, b: RegionUnion) -> RegionUnion:
    if len(a.boxes) == 0:
        return RegionUnion(boxes=b.boxes)
    if len(b.boxes) == 0:
        return RegionUnion(boxes=a.boxes)
    return RegionUnion(boxes=np.vstack([a.boxes, b.boxes]))


def jaccard(a: RegionUnion, b: RegionUnion) -> float:
    """Intersection-over-union of two box unions; 1 when both are empty."""
    if a.is_empty and b.is_empty:
        return 1.0
    inter = _union_area(_pairwise_intersections(a.boxes, b.boxes))
    denom = _union_area(np.vstack([a.boxes, b.boxes])) if not (a.is_empty or b.is_empty) \
        else _union_area(a.boxes) + _union_area(b.boxes)
    if denom <= AREA_TOL:
        return 1.0
    return inter / denom


def dilate(r: RegionUnion, delta: float, bounds) -> RegionUnion:
    """Minkowski dilation by the l-inf ball, clipped to the domain."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if r.is_empty:
        return RegionUnion.empty()
    grown = r.boxes + np.array([-delta, -delta, delta, delta])
    return RegionUnion(boxes=clip_boxes(grown, bounds))


def erode(r: RegionUnion, delta: float, bounds) -> RegionUnion:
    """Erosion by the l-inf ball: complement of the dilated complement."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    comp = _complement_boxes(r.boxes, bounds)
    comp_grown = dilate(RegionUnion(boxes=comp), delta, bounds)
    return RegionUnion(boxes=_complement_boxes(comp_grown.boxes, bounds))


def complement(r: RegionUnion, bounds) -> RegionUnion:
    return RegionUnion(boxes=_complement_boxes(r.boxes, bounds))
