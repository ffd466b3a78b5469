"""Planar primitives: slope cones, polylines, segment arrangements.

Directions are written as slopes ``v1 / v2`` (second component normalised
to one), so a cone is a closed slope interval.  The horizontal direction has
no finite slope and is represented by the ``HORIZONTAL`` sentinel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import DegenerateImage

TAU_GEOM = 1e-12


class _Horizontal:
    __slots__ = ()

    def __repr__(self):
        return "HORIZONTAL"

    def __reduce__(self):
        return "HORIZONTAL"


HORIZONTAL = _Horizontal()


@dataclass(frozen=True)
class Cone:
    """Closed slope interval ``[s_lo, s_hi]``.

    ``s_lo == s_hi`` is accepted and describes a single ray; degenerate
    maps (zero shear) have rays as their invariant cones.  ``horizontal``
    marks the cone made of the horizontal direction alone.
    """

    s_lo: float
    s_hi: float
    horizontal: bool = False

    def __post_init__(self):
        if self.horizontal:
            return
        if not (math.isfinite(self.s_lo) and math.isfinite(self.s_hi)):
            raise ValueError("cone slopes must be finite")
        if self.s_lo > self.s_hi:
            raise ValueError(f"empty cone [{self.s_lo}, {self.s_hi}]")

    @classmethod
    def ray(cls, slope):
        if slope is HORIZONTAL:
            return cls(0.0, 0.0, horizontal=True)
        return cls(float(slope), float(slope))

    @property
    def width(self):
        return 0.0 if self.horizontal else self.s_hi - self.s_lo

    @property
    def is_ray(self):
        return self.horizontal or self.s_lo == self.s_hi

    def contains_slope(self, s, tol=0.0):
        if s is HORIZONTAL:
            return self.horizontal
        if self.horizontal:
            return False
        return self.s_lo - tol <= s <= self.s_hi + tol

    def contains_vector(self, v, tol=0.0):
        a, b = float(v[0]), float(v[1])
        if b == 0.0:
            return self.horizontal and a != 0.0
        return self.contains_slope(a / b, tol)

    def contains_cone(self, other: "Cone"):
        if self.horizontal or other.horizontal:
            return self.horizontal and other.horizontal
        return self.s_lo <= other.s_lo and other.s_hi <= self.s_hi

    def hull(self, other: "Cone"):
        if self.horizontal or other.horizontal:
            raise DegenerateImage("hull with the horizontal direction")
        return Cone(min(self.s_lo, other.s_lo), max(self.s_hi, other.s_hi))

    def padded(self, pad):
        return Cone(self.s_lo - pad, self.s_hi + pad)

    def to_list(self):
        return "horizontal" if self.horizontal else [self.s_lo, self.s_hi]


def map_direction(m, slope):
    """Transport a slope through the matrix ``m``.

    Returns ``HORIZONTAL`` when the image direction has zero second
    component instead of an infinite slope.
    """
    (a11, a12), (a21, a22) = m
    if slope is HORIZONTAL:
        num, den = a11, a21
    else:
        num, den = a11 * slope + a12, a21 * slope + a22
    if den == 0:
        return HORIZONTAL
    return num / den


def _entry_values(entry):
    if isinstance(entry, (tuple, list)):
        lo, hi = entry
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ValueError(f"bad interval entry {entry}")
        return {Fraction(lo), Fraction(hi)}
    if not math.isfinite(entry):
        raise ValueError("matrix entries must be finite")
    return {Fraction(entry)}


def round_down(q: Fraction):
    f = float(q)
    return f if Fraction(f) <= q else math.nextafter(f, -math.inf)


def round_up(q: Fraction):
    f = float(q)
    return f if Fraction(f) >= q else math.nextafter(f, math.inf)


def map_cone_exact(m_interval, c: Cone):
    """Exact rational bounds of the image slope interval.

    Each entry of ``m_interval`` is a number or a ``(lo, hi)`` pair.  The
    slope transport is monotone in every entry and in ``s`` separately
    whenever the denominator keeps its sign, so the extremes sit on the
    corners of the parameter box.  Returns ``(lo, hi)`` as Fractions.
    """
    if c.horizontal:
        raise DegenerateImage("cannot transport the horizontal cone")
    (e11, e12), (e21, e22) = m_interval
    v11, v12, v21, v22 = (_entry_values(e) for e in (e11, e12, e21, e22))
    slopes = {Fraction(c.s_lo), Fraction(c.s_hi)}
    dens = [a21 * s + a22 for a21, a22, s in product(v21, v22, slopes)]
    if min(dens) <= 0 <= max(dens):
        raise DegenerateImage("an admissible matrix maps a cone direction to the horizontal")
    images = [
        (a11 * s + a12) / (a21 * s + a22)
        for a11, a12, a21, a22, s in product(v11, v12, v21, v22, slopes)
    ]
    return min(images), max(images)


def map_cone(m_interval, c: Cone) -> Cone:
    """Image cone, rounded outward to floats so it stays sound."""
    lo, hi = map_cone_exact(m_interval, c)
    return Cone(round_down(lo), round_up(hi))


@dataclass(frozen=True)
class Separation:
    disjoint: bool
    boundary_touch: bool = False

    def __bool__(self):
        return self.disjoint


def cones_disjoint(c1: Cone, c2: Cone) -> Separation:
    """Disjointness of the cone interiors.

    Cones sharing only a boundary ray count as disjoint with the touch flag
    raised; two rays are disjoint only when they differ.
    """
    if c1.horizontal or c2.horizontal:
        raise DegenerateImage("disjointness is defined for slope cones only")
    if c1.s_hi < c2.s_lo or c2.s_hi < c1.s_lo:
        return Separation(True)
    if (c1.s_hi == c2.s_lo or c2.s_hi == c1.s_lo) and not (c1.is_ray and c2.is_ray):
        return Separation(True, True)
    return Separation(False)


class Polyline:
    """Piecewise linear curve with an arc-length parametrisation."""

    __slots__ = ("vertices", "cumlen")

    def __init__(self, vertices):
        v = np.array(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 2:
            raise ValueError("a polyline needs at least two 2-d vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("polyline vertices must be finite")
        chords = np.hypot(*np.diff(v, axis=0).T)
        if np.any(chords == 0.0):
            raise ValueError("consecutive polyline vertices must be distinct")
        v.flags.writeable = False
        cum = np.concatenate([[0.0], np.cumsum(chords)])
        cum.flags.writeable = False
        self.vertices = v
        self.cumlen = cum

    @classmethod
    def segment(cls, a, b):
        """Unchecked two-vertex constructor for hot loops (a != b assumed)."""
        obj = cls.__new__(cls)
        v = np.array([a, b], dtype=float)
        v.flags.writeable = False
        cum = np.array([0.0, math.hypot(v[1, 0] - v[0, 0], v[1, 1] - v[0, 1])])
        cum.flags.writeable = False
        obj.vertices, obj.cumlen = v, cum
        return obj

    def __len__(self):
        return len(self.vertices)

    def __repr__(self):
        return f"Polyline({len(self)} vertices, length={self.length:.6g})"

    @property
    def length(self):
        return float(self.cumlen[-1])

    @property
    def start(self):
        return self.vertices[0]

    @property
    def end(self):
        return self.vertices[-1]

    def chord_vectors(self):
        return np.diff(self.vertices, axis=0)

    def point_at(self, t):
        """Point(s) at arc-length ``t`` (clipped to the curve)."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.length)
        i = np.clip(np.searchsorted(self.cumlen, t, side="right") - 1, 0, len(self) - 2)
        d = self.cumlen[i + 1] - self.cumlen[i]
        w = ((t - self.cumlen[i]) / d)[..., None]
        return self.vertices[i] * (1 - w) + self.vertices[i + 1] * w

    def midpoint(self):
        return self.point_at(0.5 * self.length)

    def refined(self, step):
        """Insert vertices so that every chord is at most ``step`` long."""
        chords = np.diff(self.cumlen)
        if chords.max() <= step:
            return self
        parts = [self.vertices[:1]]
        for i, c in enumerate(chords):
            k = max(1, math.ceil(c / step))
            w = (np.arange(1, k + 1) / k)[:, None]
            parts.append(self.vertices[i] * (1 - w) + self.vertices[i + 1] * w)
        return Polyline(np.vstack(parts))

    def sub(self, t0, t1, merge_tol=1e-9):
        """Sub-curve between arc-lengths ``t0 < t1``.

        Interior vertices closer than ``merge_tol`` to a cut point are
        dropped so no micro-chords appear.
        """
        t0, t1 = max(0.0, t0), min(self.length, t1)
        inner = np.nonzero((self.cumlen > t0 + merge_tol) & (self.cumlen < t1 - merge_tol))[0]
        pts = np.vstack([self.point_at(t0)[None], self.vertices[inner], self.point_at(t1)[None]])
        return Polyline(pts)

    def mapped(self, fn):
        return Polyline(fn(self.vertices))

    def samples(self, pitch, offset=0.0):
        """Arc-length lattice ``offset + k*pitch`` restricted to the curve."""
        t = np.arange(math.ceil((0.0 - offset) / pitch), math.floor((self.length - offset) / pitch) + 1)
        t = offset + t * pitch
        return t, self.point_at(t)


def segment_distance(points, a, b):
    """Distances from ``points`` (n,2) to the segment ``ab``."""
    p = np.asarray(points, dtype=float)
    d = np.asarray(b, float) - np.asarray(a, float)
    dd = float(d @ d)
    if dd == 0.0:
        return np.hypot(*(p - a).T)
    u = np.clip(((p - a) @ d) / dd, 0.0, 1.0)
    return np.hypot(*(p - (a + u[:, None] * d)).T)


def polyline_distance(points, line: Polyline):
    p = np.atleast_2d(points)
    out = np.full(len(p), np.inf)
    for a, b in zip(line.vertices[:-1], line.vertices[1:]):
        np.minimum(out, segment_distance(p, a, b), out=out)
    return out


def closest_arclength(point, line: Polyline):
    """Arc-length of the point of ``line`` nearest to ``point``."""
    best, best_t = np.inf, 0.0
    for i, (a, b) in enumerate(zip(line.vertices[:-1], line.vertices[1:])):
        d = b - a
        u = min(1.0, max(0.0, float((point - a) @ d) / float(d @ d)))
        dist = math.hypot(*(a + u * d - point))
        if dist < best:
            best, best_t = dist, line.cumlen[i] + u * (line.cumlen[i + 1] - line.cumlen[i])
    return best_t, best


def intersect_segments(p0, p1, q0, q1, tol=TAU_GEOM):
    """Intersection point of two segments, or None.

    Parallel (including collinear) pairs return None.  Touching within
    ``tol`` in the segment parameters counts as intersecting.
    """
    r = np.subtract(p1, p0)
    s = np.subtract(q1, q0)
    den = r[0] * s[1] - r[1] * s[0]
    if abs(den) <= tol * math.hypot(*r) * math.hypot(*s):
        return None
    qp = np.subtract(q0, p0)
    t = (qp[0] * s[1] - qp[1] * s[0]) / den
    u = (qp[0] * r[1] - qp[1] * r[0]) / den
    if -tol <= t <= 1 + tol and -tol <= u <= 1 + tol:
        return np.asarray(p0, float) + t * r
    return None


def all_pair_intersections(segs, tol=TAU_GEOM):
    """Vectorised all-pairs intersection of an (m,2,2) segment array.

    Returns ``(points, i, j)`` for every crossing or touching pair i < j.
    """
    segs = np.asarray(segs, dtype=float)
    m = len(segs)
    if m < 2:
        return np.empty((0, 2)), np.empty(0, int), np.empty(0, int)
    i, j = np.triu_indices(m, 1)
    p0, r = segs[i, 0], segs[i, 1] - segs[i, 0]
    q0, s = segs[j, 0], segs[j, 1] - segs[j, 0]
    den = r[:, 0] * s[:, 1] - r[:, 1] * s[:, 0]
    scale = np.hypot(*r.T) * np.hypot(*s.T)
    ok = np.abs(den) > tol * scale
    qp = q0 - p0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / den
        u = (qp[:, 0] * r[:, 1] - qp[:, 1] * r[:, 0]) / den
    ok &= (t >= -tol) & (t <= 1 + tol) & (u >= -tol) & (u <= 1 + tol)
    pts = p0[ok] + t[ok, None] * r[ok]
    return pts, i[ok], j[ok]


@dataclass
class ArrangementVertex:
    point: np.ndarray
    segments: tuple  # indices of input segments through the vertex
    rays: int  # distinct edge directions leaving the vertex (= faces around it)

    @property
    def multiplicity(self):
        return len(self.segments)


@dataclass
class SegmentArrangement:
    segments: np.ndarray
    vertices: list
    tol: float

    @property
    def max_multiplicity(self):
        return max((v.multiplicity for v in self.vertices), default=0)

    def points(self):
        if not self.vertices:
            return np.empty((0, 2))
        return np.array([v.point for v in self.vertices])


def _ray_angles(point, seg, tol):
    a, b = seg
    length = math.hypot(*(b - a))
    d = (b - a) / length
    out = []
    if math.hypot(*(point - a)) > tol:
        out.append(math.atan2(-d[1], -d[0]))
    if math.hypot(*(point - b)) > tol:
        out.append(math.atan2(d[1], d[0]))
    return out


def _count_directions(angles, tol=1e-9):
    if not angles:
        return 0
    a = np.sort(np.mod(angles, 2 * math.pi))
    gaps = np.diff(np.concatenate([a, [a[0] + 2 * math.pi]]))
    return max(1, int(np.sum(gaps > tol)))


def _distances_to_segments(point, segs):
    a, d = segs[:, 0], segs[:, 1] - segs[:, 0]
    u = np.clip(np.einsum("ij,ij->i", point - a, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
    return np.hypot(*(a + u[:, None] * d - point).T)


def build_arrangement(segments: Iterable[Sequence], tol=TAU_GEOM) -> SegmentArrangement:
    """Vertices of a planar segment arrangement with their incidences.

    Intersection points closer than ``tol`` are merged (single linkage);
    the incident segments of a vertex are all segments within ``tol`` of
    it.  The result does not depend on the order of the input segments.
    """
    segs = np.asarray([np.asarray(s, dtype=float).reshape(2, 2) for s in segments])
    if len(segs) and np.any(np.hypot(*(segs[:, 1] - segs[:, 0]).T) == 0):
        raise ValueError("arrangement segments must have positive length")
    pts, _, _ = all_pair_intersections(segs, tol)
    vertices = []
    if len(pts):
        pairs = cKDTree(pts).query_pairs(tol, output_type="ndarray")
        graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(pts),) * 2)
        _, label = connected_components(graph, directed=False)
        for g in range(label.max() + 1):
            c = pts[label == g].mean(axis=0)
            inc = np.nonzero(_distances_to_segments(c, segs) <= tol)[0]
            angles = []
            for k in inc:
                angles += _ray_angles(c, segs[k], tol)
            vertices.append(ArrangementVertex(c, tuple(int(k) for k in inc), _count_directions(angles)))
        vertices.sort(key=lambda v: (v.point[0], v.point[1]))
    return SegmentArrangement(segs, vertices, tol)


def clip_polygon(poly, normal, offset):
    """Part of a convex polygon where ``normal . x >= offset``."""
    poly = np.asarray(poly, dtype=float)
    if len(poly) == 0:
        return poly
    val = poly @ np.asarray(normal, float) - offset
    out = []
    for i in range(len(poly)):
        p, q = poly[i], poly[(i + 1) % len(poly)]
        vp, vq = val[i], val[(i + 1) % len(poly)]
        if vp >= 0:
            out.append(p)
        if (vp >= 0) != (vq >= 0):
            out.append(p + (vp / (vp - vq)) * (q - p))
    return np.array(out).reshape(-1, 2)


def polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    x, y = np.asarray(poly).T
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def in_convex_polygon(points, poly, tol=1e-12):
    """Membership of ``points`` in a counter-clockwise convex polygon."""
    p = np.atleast_2d(points)
    ok = np.ones(len(p), dtype=bool)
    for i in range(len(poly)):
        a, b = poly[i], poly[(i + 1) % len(poly)]
        cross = (b[0] - a[0]) * (p[:, 1] - a[1]) - (b[1] - a[1]) * (p[:, 0] - a[0])
        ok &= cross >= -tol
    return ok
