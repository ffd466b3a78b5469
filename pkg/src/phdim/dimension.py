"""Dimension formula, Lyapunov exponents, box counting and the beta identity."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DomainError, InsufficientPoints, OrbitEscaped, SignError
from .maps import PiecewiseMap
from .rng import generator


class FormulaResult(NamedTuple):
    dimension: float
    invertible: bool


def dim_formula(chi_u, chi_s) -> FormulaResult:
    """min{2, 1 - chi_u/chi_s} together with the flag chi_u + chi_s <= 0."""
    if not (chi_s < 0 < chi_u):
        raise SignError(f"need chi_s < 0 < chi_u, got chi_u={chi_u}, chi_s={chi_s}")
    return FormulaResult(min(2.0, 1.0 - chi_u / chi_s), chi_u + chi_s <= 0)


@dataclass
class DimensionReport:
    method: str
    value: float
    status: str = "ok"
    diagnostics: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)
    seed: int | None = None

    def to_dict(self):
        return {
            "method": self.method,
            "value": self.value,
            "status": self.status,
            "diagnostics": self.diagnostics,
            "parameters": self.parameters,
            "seed": self.seed,
        }


def formula_report(chi_u, chi_s, source="analytic"):
    res = dim_formula(chi_u, chi_s)
    return DimensionReport(
        "formula",
        res.dimension,
        diagnostics={"chi_u": chi_u, "chi_s": chi_s, "invertible": res.invertible, "exponents": source},
    )


# -- Lyapunov exponents --------------------------------------------------------------


def qr_step(J, q1, q2):
    """Gram-Schmidt step of the tangent cocycle for a batch of frames.

    ``J`` is (n,2,2) and ``q1``, ``q2`` (n,2) orthonormal columns.  Returns
    the new frame and the diagonal factors (r11, r22) of J [q1 q2] = Q R.
    """
    v1 = np.einsum("nij,nj->ni", J, q1)
    v2 = np.einsum("nij,nj->ni", J, q2)
    r11 = np.hypot(v1[:, 0], v1[:, 1])
    q1 = v1 / r11[:, None]
    r12 = np.einsum("ni,ni->n", q1, v2)
    v2 = v2 - r12[:, None] * q1
    r22 = np.hypot(v2[:, 0], v2[:, 1])
    return q1, v2 / r22[:, None], r11, r22


def identity_frames(n):
    return np.tile([1.0, 0.0], (n, 1)), np.tile([0.0, 1.0], (n, 1))


@dataclass
class LyapunovEstimate:
    chi_u: float
    chi_s: float
    steps: int
    stderr: tuple
    seed: int
    restarts: int = 0

    def to_dict(self):
        return {
            "chi_u": self.chi_u,
            "chi_s": self.chi_s,
            "steps": self.steps,
            "stderr": list(self.stderr),
            "seed": self.seed,
            "restarts": self.restarts,
        }


def _orbit_pieces(spec, x, n_steps, burn_in, rng):
    """Advance all orbits together; returns (points, pieces, restarts) with
    shapes (n_orbits, n_steps, 2) and (n_orbits, n_steps).  An orbit that
    lands on the singularity set restarts from a fresh point after its own
    burn-in."""

    def fresh(count):
        nonlocal restarts
        y = spec.random_points(rng, count)
        for _ in range(burn_in):
            p = spec.piece_index(y)
            if np.any(p < 0):
                raise OrbitEscaped("orbit left the domain")
            bad = p == 0
            if bad.any():
                restarts += int(bad.sum())
                y[bad] = spec.random_points(rng, int(bad.sum()))
                p = spec.piece_index(y)
                if np.any(p <= 0):
                    continue
            y = spec.refill_low_bits(spec.apply_piece(y, p), rng)
        return y

    restarts = 0
    x = fresh(len(x)) if burn_in else x
    xs = np.empty((len(x), n_steps, 2))
    ps = np.empty((len(x), n_steps), dtype=np.int64)
    k = 0
    while k < n_steps:
        piece = spec.piece_index(x)
        if np.any(piece <= 0):
            if np.any(piece < 0):
                raise OrbitEscaped("orbit left the domain")
            bad = piece == 0
            restarts += int(bad.sum())
            x[bad] = fresh(int(bad.sum()))
            continue
        xs[:, k], ps[:, k] = x, piece
        x = spec.refill_low_bits(spec.apply_piece(x, piece), rng)
        k += 1
    return xs, ps, restarts


def _scalar_orbit(spec, step, n_steps, burn_in, rng):
    """Single-orbit version of ``_orbit_pieces`` for affine maps, stepping
    plain floats."""
    refill = type(spec).refill_low_bits is not PiecewiseMap.refill_low_bits
    xs, ps = [], []
    restarts, burn = 0, burn_in
    u, v = spec.random_points(rng, 1)[0].tolist()
    while len(ps) < n_steps:
        piece, nu, nv = step(u, v)
        if piece < 0:
            raise OrbitEscaped("orbit left the domain")
        if piece == 0:
            restarts += 1
            u, v = spec.random_points(rng, 1)[0].tolist()
            burn = burn_in
            continue
        if burn:
            burn -= 1
        else:
            xs.append((u, v))
            ps.append(piece)
        u, v = nu, nv
        if refill:
            u, v = spec.refill_low_bits(np.array([[u, v]]), rng)[0].tolist()
    return np.array(xs), np.array(ps, dtype=np.int64), restarts


LYAPUNOV_BATCHES = 16


def estimate_lyapunov(spec: PiecewiseMap, n_steps=10_000, seed=0, *, burn_in=100) -> LyapunovEstimate:
    """Exponents along one random orbit of ``n_steps`` iterates.

    A unit tangent vector is pushed along the orbit and renormalised at
    every step; its log growth gives the first exponent, and the second is
    the mean log determinant minus the first.  Standard errors come from
    batch means over contiguous stretches of the orbit.
    """
    if n_steps < 1000:
        raise ValueError("n_steps must be at least 1000")
    rng = generator(seed, "lyapunov")
    step = spec.affine_stepper()
    if step is not None:
        xs, ps, restarts = _scalar_orbit(spec, step, n_steps, burn_in, rng)
    else:
        xs, ps, restarts = _orbit_pieces(spec, spec.random_points(rng, 1), n_steps, burn_in, rng)
        xs, ps = xs[0], ps[0]
    J = spec.jacobian_piece(xs, ps)
    logs1 = []
    v1, v2 = 1.0, 0.0
    for j11, j12, j21, j22 in J.reshape(-1, 4).tolist():
        a, b = j11 * v1 + j12 * v2, j21 * v1 + j22 * v2
        r = math.hypot(a, b)
        v1, v2 = a / r, b / r
        logs1.append(math.log(r))
    logs1 = np.array(logs1)
    logs2 = np.log(np.abs(J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0])) - logs1
    stats = []
    for logs in (logs1, logs2):
        batches = np.array([math.fsum(b) / len(b) for b in np.array_split(logs, LYAPUNOV_BATCHES)])
        stats.append((math.fsum(logs) / n_steps, float(batches.std(ddof=1) / math.sqrt(len(batches)))))
    (chi_u, su), (chi_s, ss) = sorted(stats, key=lambda p: -p[0])
    return LyapunovEstimate(chi_u, chi_s, n_steps, (su, ss), seed, restarts)


# -- box counting --------------------------------------------------------------------


def box_counts(points, levels, domain=(-1.0, 1.0, -1.0, 1.0)):
    """Occupied cells of side 2**-level on a grid anchored at the domain's
    lower-left corner."""
    pts = np.asarray(points, dtype=float)
    x0, _, y0, _ = domain
    finest = max(levels)
    scale = 2.0**finest
    ix = np.floor((pts[:, 0] - x0) * scale).astype(np.int64)
    iy = np.floor((pts[:, 1] - y0) * scale).astype(np.int64)
    counts = []
    for L in levels:
        sh = finest - L
        key = ((ix >> sh) << 32) | (iy >> sh)
        counts.append(int(np.unique(key).size))
    return counts


def box_count_dimension(points, min_level=4, max_level=9, *, domain=(-1.0, 1.0, -1.0, 1.0), min_points=100_000):
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    params = {"min_level": min_level, "max_level": max_level, "points": len(pts), "domain": list(domain)}
    if not 2 <= min_level < max_level <= 12:
        raise ValueError("need 2 <= min_level < max_level <= 12")
    if len(pts) < min_points:
        raise InsufficientPoints(f"{len(pts)} points, need at least {min_points}")
    levels = list(range(min_level, max_level + 1))
    counts = box_counts(pts, levels, domain)
    used = list(levels)
    # saturation guard: drop the two finest levels if nearly every point owns a cell
    if len(used) > 3 and all(counts[-i] * 2 >= len(pts) for i in (1, 2)):
        used = used[:-2]
    y = np.log([counts[levels.index(L)] for L in used])
    x = np.array(used) * math.log(2.0)
    slope, icept = np.polyfit(x, y, 1)
    resid = y - (slope * x + icept)
    diag = {"levels": levels, "counts": counts, "levels_fitted": used, "residuals": resid.tolist(), "intercept": float(icept)}
    return DimensionReport("boxcount", float(slope), diagnostics=diag, parameters=params)


# -- beta integral -----------------------------------------------------------------


def beta_integral(s):
    """Closed form of the integral of (1 + x^2)^(-s/2) over [0, inf)."""
    if not s > 1:
        raise DomainError("the integral diverges for s <= 1")
    return 0.5 * math.sqrt(math.pi) * math.exp(math.lgamma((s - 1) / 2) - math.lgamma(s / 2))
