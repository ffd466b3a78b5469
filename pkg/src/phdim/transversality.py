"""Discretised (eps, delta)-transversality of curve pairs.

For a ball B, the two curves are transversal in B when some base points
x1, x2 on the curves satisfy |y1 - y2| >= delta (d1(x1, y1) + d2(x2, y2))
for every y1, y2 on the curves inside B, with d_i the arc-length metric.
Ball centres sit on a global lattice of pitch eps/4 and curve points on an
arc-length lattice of pitch eps/16; both pitches are parameters.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cones import unstable_cone
from .curves import split_at_singularity
from .geometry import Cone, Polyline, closest_arclength, polyline_distance
from .maps import PiecewiseMap
from .rng import generator

DEFAULT_DELTAS = tuple(2.0**-j for j in range(1, 13))
SLACK = 1e-12


@dataclass
class TransversalityReport:
    epsilon: float
    delta_max: float
    deltas_tested: list
    balls_checked: int
    witness_center: list | None = None
    witness_delta: float | None = None
    trials: list = field(default_factory=list)

    @property
    def passed(self):
        return self.delta_max > 0

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "delta_max": self.delta_max,
            "deltas_tested": list(self.deltas_tested),
            "balls_checked": self.balls_checked,
            "witness_center": self.witness_center,
            "witness_delta": self.witness_delta,
            "trials": self.trials,
        }


def _ball_samples(line: Polyline, center, eps, pitch):
    t, pts = line.samples(pitch)
    inside = np.hypot(*(pts - center).T) < eps
    t, pts = t[inside], pts[inside]
    if len(t) == 0:
        tc, dist = closest_arclength(center, line)
        if dist >= eps:
            return None
        t, pts = np.array([tc]), line.point_at(np.array([tc]))
    return t, pts


def _balls(g1, g2, eps, center_pitch):
    lo = np.minimum(g1.vertices.min(0), g2.vertices.min(0)) - eps
    hi = np.maximum(g1.vertices.max(0), g2.vertices.max(0)) + eps
    i0, i1 = np.floor(lo / center_pitch).astype(int), np.ceil(hi / center_pitch).astype(int)
    gx, gy = np.meshgrid(np.arange(i0[0], i1[0] + 1), np.arange(i0[1], i1[1] + 1), indexing="ij")
    centers = np.column_stack([gx.ravel(), gy.ravel()]) * center_pitch
    near = (polyline_distance(centers, g1) < eps) & (polyline_distance(centers, g2) < eps)
    return centers[near]


def ball_margin(t1, p1, t2, p2, delta):
    """max over base pairs of min over test pairs of
    |y1 - y2| - delta (|t1 - s1| + |t2 - s2|); transversal iff >= 0."""
    D = np.hypot(p1[:, None, 0] - p2[None, :, 0], p1[:, None, 1] - p2[None, :, 1])
    T1 = np.abs(t1[:, None] - t1[None, :])
    T2 = np.abs(t2[:, None] - t2[None, :])
    # H[i, b] = min_a D[a, b] - delta T1[i, a]
    H = (D[None, :, :] - delta * T1[:, :, None]).min(axis=1)
    # Q[i, j] = min_b H[i, b] - delta T2[j, b]
    Q = (H[:, None, :] - delta * T2[None, :, :]).min(axis=2)
    return float(Q.max())


def _prepare(g1, g2, epsilon, center_pitch, point_pitch):
    cp = epsilon / 4 if center_pitch is None else center_pitch
    pp = epsilon / 16 if point_pitch is None else point_pitch
    balls = []
    for c in _balls(g1, g2, epsilon, cp):
        s1 = _ball_samples(g1, c, epsilon, pp)
        s2 = _ball_samples(g2, c, epsilon, pp)
        if s1 is not None and s2 is not None:
            balls.append((c, s1, s2))
    return balls


def _first_failure(balls, delta):
    for c, (t1, p1), (t2, p2) in balls:
        if ball_margin(t1, p1, t2, p2, delta) < -SLACK:
            return c
    return None


def check_pair_transversal(g1: Polyline, g2: Polyline, epsilon, delta=None, *, deltas=DEFAULT_DELTAS,
                           center_pitch=None, point_pitch=None) -> TransversalityReport:
    """Check one delta (``delta`` given) or find the largest passing delta
    of the ``deltas`` grid by bisection (the test is monotone in delta)."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    grid = sorted([delta] if delta is not None else deltas, reverse=True)
    if not all(0 < d < 1 for d in grid):
        raise ValueError("delta must lie in (0, 1)")
    balls = _prepare(g1, g2, epsilon, center_pitch, point_pitch)
    # grid is descending; find the first index that passes
    lo, hi = 0, len(grid)
    witness, witness_delta = None, None
    while lo < hi:
        mid = (lo + hi) // 2
        fail = _first_failure(balls, grid[mid])
        if fail is None:
            hi = mid
        else:
            lo = mid + 1
            witness, witness_delta = fail.tolist(), grid[mid]
    delta_max = grid[lo] if lo < len(grid) else 0.0
    return TransversalityReport(epsilon, delta_max, grid, len(balls), witness, witness_delta)


# -- condition (T) sampler -----------------------------------------------------------


def _branch_preimages(spec, z):
    """One preimage of ``z`` per piece for affine branches (None if some
    branch has no preimage inside its own piece)."""
    out = []
    for piece in range(1, spec.n_pieces + 1):
        aff = spec.branch_affine(piece)
        if aff is None:
            return None
        A, b = aff
        try:
            x = np.linalg.solve(A, z - b)
        except np.linalg.LinAlgError:
            return None
        if spec.piece_index(x[None])[0] != piece:
            return None
        out.append(x)
    return out


def _preimage_by_search(spec, z, piece, rng, iters=60):
    """Newton iteration for a branch preimage of non-affine maps."""
    x = spec.random_points(rng, 1)[0]
    for _ in range(iters):
        fx = spec.apply_piece(x[None], np.array([piece]))[0]
        J = spec.jacobian_piece(x[None], np.array([piece]))[0]
        step = np.linalg.solve(J, fx - z)
        x = x - step
        if np.hypot(*step) < 1e-15:
            break
    if spec.piece_index(x[None])[0] != piece:
        return None
    return x


def _short_curve(spec, center, slope, length, piece):
    """Straight cone segment through ``center``, clipped to the domain and
    cut at the singularity set; the part containing ``center`` is kept."""
    d = np.array([slope, 1.0]) / math.hypot(slope, 1.0)
    lo, hi = -0.5 * length, 0.5 * length
    x0, x1, y0, y1 = spec.domain
    for j, (a, b) in enumerate(((x0, x1), (y0, y1))):
        if d[j] != 0:
            ta, tb = sorted(((a - center[j]) / d[j], (b - center[j]) / d[j]))
            lo, hi = max(lo, ta), min(hi, tb)
    if hi - lo < 0.25 * length:
        return None
    seg = Polyline([center + lo * d, center + hi * d])
    for part in split_at_singularity(spec, seg):
        if polyline_distance(center[None], part)[0] < 1e-12 and part.length >= 0.25 * length:
            if spec.piece_index(part.midpoint()[None])[0] == piece:
                return part
    return None


def _trial(spec, cone, k, seed, epsilon, length, deltas, center_pitch, point_pitch, max_tries=200):
    rng = generator(seed, f"condition-T/{k}")
    for _ in range(max_tries):
        z = spec.random_points(rng, 1)[0]
        if spec.is_affine:
            pre = _branch_preimages(spec, z)
        else:
            pre = [_preimage_by_search(spec, z, piece, rng) for piece in range(1, spec.n_pieces + 1)]
            pre = None if any(p is None for p in pre) else pre
        if pre is None or len(pre) < 2:
            continue
        images = []
        for piece, x in enumerate(pre, start=1):
            slope = rng.uniform(cone.s_lo, cone.s_hi) if cone.width > 0 else cone.s_lo
            curve = _short_curve(spec, x, slope, length, piece)
            if curve is None:
                break
            fine = curve if spec.is_affine else curve.refined(1e-3)
            images.append(Polyline(spec.apply_piece(fine.vertices, np.full(len(fine), piece))))
        if len(images) < len(pre):
            continue
        worst = None
        for i in range(len(images)):
            for j in range(i + 1, len(images)):
                rep = check_pair_transversal(images[i], images[j], epsilon, deltas=deltas,
                                             center_pitch=center_pitch, point_pitch=point_pitch)
                if worst is None or rep.delta_max < worst.delta_max:
                    worst = rep
        return {"trial": k, "target": z.tolist(), "delta_max": worst.delta_max,
                "balls": worst.balls_checked, "witness_center": worst.witness_center}
    return {"trial": k, "target": None, "delta_max": None, "balls": 0, "witness_center": None}


def sample_condition_T(spec: PiecewiseMap, trials=100, seed=0, *, epsilon=0.05, length=0.05,
                       cone: Cone | None = None, deltas=DEFAULT_DELTAS, center_pitch=None,
                       point_pitch=None, threads=1) -> TransversalityReport:
    """Random pairs of short cone curves, one per piece, whose images pass
    through a common random point; reports the smallest delta_max seen."""
    cone = unstable_cone(spec) if cone is None else cone
    args = (spec, cone)
    kw = (seed, epsilon, length, deltas, center_pitch, point_pitch)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(lambda k: _trial(*args, k, *kw), range(trials)))
    else:
        rows = [_trial(*args, k, *kw) for k in range(trials)]
    done = [r for r in rows if r["delta_max"] is not None]
    if not done:
        return TransversalityReport(epsilon, 0.0, list(deltas), 0, trials=rows)
    worst = min(done, key=lambda r: (r["delta_max"], r["trial"]))
    return TransversalityReport(
        epsilon,
        worst["delta_max"],
        sorted(deltas, reverse=True),
        sum(r["balls"] for r in done),
        worst["witness_center"],
        None,
        rows,
    )
