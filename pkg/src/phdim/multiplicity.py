"""How many continuity pieces of f^n can meet at one point.

For piecewise affine maps the pieces of f^n (n-cylinders) are convex
polygons, built by pulling the singularity lines back through the composed
branch maps.  Their common boundaries form a segment arrangement; the number
of pieces meeting at a vertex is the number of distinct edge directions
leaving it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceeded
from .geometry import build_arrangement, clip_polygon, polygon_area
from .maps import PiecewiseMap
from .rng import generator

N_MAX = 10
SNAP = 1e-9  # composed inverse branches lose a few digits
MIN_AREA = 1e-14
MIN_LENGTH = 1e-10


@dataclass
class Cylinder:
    polygon: np.ndarray
    A: np.ndarray
    b: np.ndarray
    itinerary: tuple


def _line_in_polygon(poly, normal, offset):
    """Chord of a convex polygon cut by the line normal . x = offset."""
    val = poly @ normal - offset
    pts = []
    for i in range(len(poly)):
        p, q = poly[i], poly[(i + 1) % len(poly)]
        vp, vq = val[i], val[(i + 1) % len(poly)]
        if vp == 0:
            pts.append(p)
        if (vp < 0 < vq) or (vq < 0 < vp):
            pts.append(p + (vp / (vp - vq)) * (q - p))
    if len(pts) < 2:
        return None
    pts = np.array(pts)
    d = np.array([-normal[1], normal[0]])
    proj = pts @ d
    a, b = pts[proj.argmin()], pts[proj.argmax()]
    if math.hypot(*(b - a)) <= MIN_LENGTH:
        return None
    return np.array([a, b])


def _restrict_to_segment(chord, A, b, seg):
    """Part of ``chord`` whose image under x -> A x + b lies on ``seg``."""
    img = chord @ A.T + b
    q0, q1 = seg
    d = q1 - q0
    dd = float(d @ d)
    u = (img - q0) @ d / dd
    lo, hi = max(0.0, min(u)), min(1.0, max(u))
    if hi <= lo:
        return None
    t = np.array([(lo - u[0]) / (u[1] - u[0]), (hi - u[0]) / (u[1] - u[0])]) if u[1] != u[0] else np.array([0.0, 1.0])
    out = chord[0] + t[:, None] * (chord[1] - chord[0])
    if math.hypot(*(out[1] - out[0])) <= MIN_LENGTH:
        return None
    return out


def cylinders(spec: PiecewiseMap, n):
    """n-cylinders as convex polygons and the cut segments separating them.

    Returns (cells, segments) where segments is a list of (2,2) arrays,
    the pieces of N, f^-1 N, ..., f^-(n-1) N inside the domain.
    """
    if not spec.is_affine:
        raise ValueError("exact cylinders need a piecewise affine map")
    x0, x1, y0, y1 = spec.domain
    rect = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    cells = [Cylinder(rect, np.eye(2), np.zeros(2), ())]
    branches = [spec.branch_affine(p) for p in range(1, spec.n_pieces + 1)]
    halfplanes = [spec.piece_halfplanes(p) for p in range(1, spec.n_pieces + 1)]
    sing = spec.singular_segments()
    segments = []
    for _ in range(n):
        nxt = []
        for cell in cells:
            for seg in sing:
                d = seg[1] - seg[0]
                nrm = np.array([-d[1], d[0]])
                chord = _line_in_polygon(cell.polygon, cell.A.T @ nrm, float(nrm @ (seg[0] - cell.b)))
                if chord is not None:
                    part = _restrict_to_segment(chord, cell.A, cell.b, seg)
                    if part is not None:
                        segments.append(part)
            for j, ((Aj, bj), hps) in enumerate(zip(branches, halfplanes), start=1):
                poly = cell.polygon
                for a1, a2, c in hps:
                    a = np.array([a1, a2])
                    poly = clip_polygon(poly, cell.A.T @ a, c - float(a @ cell.b))
                    if len(poly) < 3:
                        break
                if len(poly) >= 3 and polygon_area(poly) > MIN_AREA:
                    nxt.append(Cylinder(poly, Aj @ cell.A, Aj @ cell.b + bj, cell.itinerary + (j,)))
        cells = nxt
    return cells, segments


@dataclass
class MultiplicityRecord:
    n: int
    k_n: int
    L: int
    segments: int
    vertices: int
    mode: str = "exact-arrangement"


@dataclass
class MultiplicityEstimate:
    records: list = field(default_factory=list)

    @property
    def rate(self):
        """log(k_n)/n at the largest n, the finite-n stand-in for the limsup."""
        if not self.records:
            return float("nan")
        r = self.records[-1]
        return math.log(r.k_n) / r.n

    @property
    def slope(self):
        if len(self.records) < 2:
            return float("nan")
        n = [r.n for r in self.records]
        return float(np.polyfit(n, np.log([r.k_n for r in self.records]), 1)[0])

    COLUMNS = ("n", "k_n", "L", "segments", "vertices", "mode")

    def rows(self):
        return [[getattr(r, c) for c in self.COLUMNS] for r in self.records]


def _interior(spec, p, tol):
    x0, x1, y0, y1 = spec.domain
    return x0 + tol < p[0] < x1 - tol and y0 + tol < p[1] < y1 - tol


def multiplicity_at(spec: PiecewiseMap, n, tol=SNAP):
    """(k_n, L, arrangement) for one n."""
    _, segs = cylinders(spec, n)
    arr = build_arrangement(segs, tol) if segs else None
    inner = [v for v in (arr.vertices if arr else []) if _interior(spec, v.point, 10 * tol)]
    if inner:
        k = max(v.rays for v in inner)
        L = max(v.multiplicity for v in inner)
    else:
        k = 2 if segs else 1
        L = 1 if segs else 0
    return max(k, 2 if segs else 1), L, arr


def multiplicity_exact(spec: PiecewiseMap, n, n_max=N_MAX, tol=SNAP) -> MultiplicityEstimate:
    """k_1, ..., k_n from exact cylinder arrangements."""
    if n > n_max:
        raise BudgetExceeded(f"n={n} exceeds n_max={n_max}")
    est = MultiplicityEstimate()
    for m in range(1, n + 1):
        k, L, arr = multiplicity_at(spec, m, tol)
        est.records.append(MultiplicityRecord(m, k, L, len(arr.segments) if arr else 0, len(arr.vertices) if arr else 0))
    return est


def multiplicity_proxy(spec: PiecewiseMap, n, seed=0, *, centers=200, radius=1e-5, angles=720):
    """Growth proxy for maps without exact cylinders: distinct n-step
    itineraries on small circles around random points of the singularity
    set (and their preimage-rich neighbourhoods)."""
    from .curves import itineraries

    rng = generator(seed, "multiplicity-proxy")
    sing = spec.singular_segments()
    pick = rng.integers(0, len(sing), centers)
    u = rng.uniform(0, 1, centers)
    c = sing[pick, 0] + u[:, None] * (sing[pick, 1] - sing[pick, 0])
    th = np.linspace(0, 2 * math.pi, angles, endpoint=False)
    ring = np.column_stack([np.cos(th), np.sin(th)]) * radius
    est = MultiplicityEstimate()
    for m in range(1, n + 1):
        best = 1
        for p in c:
            codes, _ = itineraries(spec, p + ring, m)
            if len(codes):
                best = max(best, int(np.unique(codes, axis=0).shape[0]))
        est.records.append(MultiplicityRecord(m, best, 0, 0, 0, "growth-proxy"))
    return est
