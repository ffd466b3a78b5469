"""Empirical curve measures and capped Riesz energies

    E_s(mu, M) = double integral of min{M, |x - y|^-s} dmu(x) dmu(y).

The estimator splits the kernel at a radius R.  Pairs farther apart than R
are handled by plain Monte Carlo; for the near part every sampled outer
point gets the exact inner integral over the nearby pieces of the support
(closed form along segments, exact sums over atoms).  The same random pairs
are reused for every (s, M), so differences across caps are nearly
noise-free.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import beta as beta_fn
from scipy.special import betainc, hyp2f1

from .curves import CurveFamily
from .dimension import DimensionReport
from .errors import Inconclusive
from .rng import generator

EXACT_ATOMS = 2048
BATCHES = 16


@dataclass
class EmpiricalMeasure:
    """Finite measure made of weighted segments (uniform along each) and/or
    weighted atoms.  ``segments`` with equal endpoints are atoms."""

    segments: np.ndarray  # (K, 2, 2)
    weights: np.ndarray  # (K,)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=float).reshape(-1, 2, 2)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.segments) != len(self.weights) or len(self.weights) == 0:
            raise ValueError("need one positive weight per component")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")
        if abs(math.fsum(self.weights) - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {math.fsum(self.weights)!r}, not 1")

    @classmethod
    def atoms(cls, points, weights=None, **prov):
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        w = np.full(len(p), 1.0 / len(p)) if weights is None else np.asarray(weights, float)
        return cls(np.stack([p, p], axis=1), w, prov)

    @property
    def lengths(self):
        return np.hypot(*(self.segments[:, 1] - self.segments[:, 0]).T)

    @property
    def is_atomic(self):
        return bool(np.all(self.lengths == 0))

    @property
    def points(self):
        """Representative support points (segment midpoints or atoms)."""
        return self.segments.mean(axis=1)

    def sample(self, rng, n):
        cdf = np.cumsum(self.weights)
        idx = np.minimum(np.searchsorted(cdf, rng.uniform(0, cdf[-1], n), side="right"), len(cdf) - 1)
        u = rng.uniform(0, 1, n)[:, None]
        seg = self.segments[idx]
        return seg[:, 0] + u * (seg[:, 1] - seg[:, 0]), idx


def build_mu_n(fam: CurveFamily, points_per_curve=None):
    """Each curve carries mass 1/N, spread uniformly in arc length.

    With ``points_per_curve`` the mass sits on that many atoms per curve
    (centres of equal arc-length bins); otherwise every chord is kept as a
    uniformly weighted segment, which is the measure itself.
    """
    if len(fam) == 0:
        raise ValueError("empty curve family")
    N = len(fam)
    prov = {"generation": fam.generation, "curves": N, "q": fam.q, "l": fam.l}
    if points_per_curve:
        k = int(points_per_curve)
        t = (np.arange(k) + 0.5) / k
        pts = np.vstack([c.point_at(t * c.length) for c in fam.curves])
        return EmpiricalMeasure.atoms(pts, np.full(len(pts), 1.0 / (N * k)), **prov, points_per_curve=k)
    segs, w = [], []
    for c in fam.curves:
        v = c.vertices
        segs.append(np.stack([v[:-1], v[1:]], axis=1))
        w.append(np.diff(c.cumlen) / (c.length * N))
    w = np.concatenate(w)
    return EmpiricalMeasure(np.concatenate(segs), w / math.fsum(w), prov)


@dataclass
class EnergyEstimate:
    s: float
    M: float
    n: int | None
    value: float
    stderr: float
    pairs_sampled: int
    seed: int
    method: str
    excluded_mass: float = 0.0

    def to_dict(self):
        return {k: getattr(self, k) for k in ("s", "M", "n", "value", "stderr", "pairs_sampled", "seed", "method", "excluded_mass")}


# -- closed-form inner integrals ----------------------------------------------------------


def line_kernel_integral(v, h, s):
    """Integral of (h^2 + t^2)^(-s/2) over t in [0, v], for v >= 0, h > 0."""
    v, h = np.broadcast_arrays(np.asarray(v, float), np.asarray(h, float))
    if s <= 1:
        return v * h ** (-s) * hyp2f1(0.5, s / 2, 1.5, -((v / h) ** 2))
    b = 0.5 * (s - 1)
    r = h * h + v * v
    x, y = v * v / r, h * h / r
    frac = np.where(x < 0.5, betainc(0.5, b, x), 1.0 - betainc(b, 0.5, y))
    return h ** (1 - s) * 0.5 * beta_fn(0.5, b) * frac


def _power_tail(a, c, s):
    """Integral of t^-s over [c, a], c > 0."""
    if s == 1.0:
        return np.log(a / c)
    return (a ** (1 - s) - c ** (1 - s)) / (1 - s)


def capped_line_integral(ta, tb, h, s, M):
    """Integral of min{M, (h^2 + t^2)^(-s/2)} dt over [ta, tb] (arrays).

    The cap is active for |t| < c = sqrt(r_M^2 - h^2), r_M = M^(-1/s).
    """
    ta, tb, h = np.broadcast_arrays(np.asarray(ta, float), np.asarray(tb, float), np.asarray(h, float))
    rM = M ** (-1.0 / s)
    c = np.sqrt(np.maximum(rM * rM - h * h, 0.0))
    n = len(ta)
    T = np.concatenate([ta, tb])
    hh, cc = np.concatenate([h, h]), np.concatenate([c, c])
    a = np.abs(T)
    val = M * np.minimum(a, cc)
    big = a > cc
    pos = big & (hh > 0)
    if pos.any():
        tail = line_kernel_integral(a[pos], hh[pos], s)
        inner = pos & (cc > 0)
        sub = np.zeros(len(T))
        if inner.any():
            sub[inner] = line_kernel_integral(cc[inner], hh[inner], s)
        val[pos] += tail - sub[pos]
    zero = big & (hh == 0)
    if zero.any():
        val[zero] += _power_tail(a[zero], cc[zero], s)
    val *= np.sign(T)
    return val[n:] - val[:n]


def _kernel(d, s, M):
    with np.errstate(divide="ignore"):
        return np.minimum(M, np.where(d > 0, d ** (-s), np.inf))


# -- estimator ---------------------------------------------------------------------------


class _Chunks:
    """Support cut into pieces no longer than R, indexed by a KD-tree on
    their midpoints; ``owner`` maps chunks back to components."""

    def __init__(self, mu: EmpiricalMeasure, R):
        seg, L = mu.segments, mu.lengths
        nch = np.maximum(1, np.ceil(L / R).astype(np.int64))
        owner = np.repeat(np.arange(len(seg)), nch)
        k = np.arange(nch.sum()) - np.repeat(np.cumsum(nch) - nch, nch)
        d = seg[owner, 1] - seg[owner, 0]
        mid = seg[owner, 0] + ((k + 0.5) / nch[owner])[:, None] * d
        self.owner = owner
        self.tree = cKDTree(mid)


@dataclass
class _NearGeometry:
    """Everything about the outer points' near neighbourhoods that does not
    depend on (s, M): clipped parameter intervals on nearby segments and
    distances to nearby atoms."""

    n_outer: int
    seg_x: np.ndarray
    ta: np.ndarray
    tb: np.ndarray
    h: np.ndarray
    density: np.ndarray
    atom_x: np.ndarray
    atom_d: np.ndarray
    atom_w: np.ndarray


def _near_geometry(mu: EmpiricalMeasure, ch: _Chunks, x, R, exclude_duplicates=False):
    # a chunk of length <= R meeting B(x, R) has its midpoint within 1.5 R
    nb = ch.tree.query_ball_point(x, 1.5 * R)
    cnt = np.fromiter((len(v) for v in nb), dtype=np.int64, count=len(nb))
    xi = np.repeat(np.arange(len(x)), cnt)
    ci = np.concatenate([np.asarray(v, dtype=np.int64) for v in nb]) if cnt.sum() else np.zeros(0, np.int64)
    key = np.unique(xi * len(mu.weights) + ch.owner[ci])
    xi, own = key // len(mu.weights), key % len(mu.weights)
    p = x[xi]
    A, B = mu.segments[own, 0], mu.segments[own, 1]
    L = mu.lengths[own]
    atom = L == 0
    ad = np.hypot(*(p[atom] - A[atom]).T)
    keep = ad < R
    if exclude_duplicates:
        keep &= ad > 0
    seg = ~atom
    u = (B[seg] - A[seg]) / L[seg, None]
    w = p[seg] - A[seg]
    t0 = np.einsum("ij,ij->i", w, u)
    h = np.abs(w[:, 0] * u[:, 1] - w[:, 1] * u[:, 0])
    half = np.sqrt(np.maximum(R * R - h * h, 0.0))
    ta = np.maximum(-t0, -half)
    tb = np.minimum(L[seg] - t0, half)
    ok = tb > ta
    return _NearGeometry(
        len(x), xi[seg][ok], ta[ok], tb[ok], h[ok], (mu.weights[own[seg]] / L[seg])[ok],
        xi[atom][keep], ad[keep], mu.weights[own[atom]][keep],
    )


def _near_mean(g: _NearGeometry, s, M):
    """Mean over outer points of the exact near-field potential."""
    parts = []
    if len(g.ta):
        parts.append(capped_line_integral(g.ta, g.tb, g.h, s, M) * g.density)
    if len(g.atom_d):
        parts.append(_kernel(g.atom_d, s, M) * g.atom_w)
    if not parts:
        return 0.0
    xi = np.concatenate([g.seg_x, g.atom_x])
    phi = np.bincount(xi, weights=np.concatenate(parts), minlength=g.n_outer)
    return math.fsum(phi) / g.n_outer


def _exact_atoms(mu, s, M, exclude_duplicates):
    p, w = mu.points, mu.weights
    total, dup = 0.0, 0.0
    for i in range(len(p)):
        d = np.hypot(*(p - p[i]).T)
        k = _kernel(d, s, M)
        if exclude_duplicates:
            dup += w[i] * math.fsum(w[d == 0])
            k[d == 0] = 0.0
        total += w[i] * math.fsum(w * k)
    return total, dup


def _close_pairs(mu, R):
    """Distances and weight products of atom pairs closer than R."""
    p, w = mu.points, mu.weights
    pairs = cKDTree(p).query_pairs(R, output_type="ndarray")
    return np.hypot(*(p[pairs[:, 0]] - p[pairs[:, 1]]).T), w[pairs[:, 0]] * w[pairs[:, 1]]


def _near_atoms_exact(mu, close, s, M, exclude_duplicates):
    d, ww = close
    diag = math.fsum(mu.weights**2)
    if exclude_duplicates:
        dup = diag + 2.0 * math.fsum(ww[d == 0])
        return 2.0 * math.fsum(ww[d > 0] * _kernel(d[d > 0], s, M)), dup
    return 2.0 * math.fsum(ww * _kernel(d, s, M)) + M * diag, 0.0


class EnergyEstimator:
    """Energy of one measure at any (s, M).

    Random pairs, outer points and their near-field geometry are drawn once,
    so scans over (s, M) reuse identical draws (common random numbers).
    Small atomic measures are summed exactly; larger atomic measures get
    their near field (pairs closer than R) summed exactly via a KD-tree.
    """

    def __init__(self, mu: EmpiricalMeasure, pairs=200_000, seed=0, *, near_radius=0.01, outer=None,
                 batches=BATCHES, exclude_duplicates=False):
        if pairs < 10_000:
            raise ValueError("pairs must be at least 1e4")
        self.mu, self.seed, self.R = mu, seed, near_radius
        self.exclude_duplicates = exclude_duplicates
        self.pairs, self.batches = int(pairs), int(batches)
        self.exact = mu.is_atomic and len(mu.weights) <= EXACT_ATOMS
        if self.exact:
            return
        per = self.pairs // self.batches
        n_outer = max(1, (outer if outer is not None else self.pairs // 50) // self.batches)
        chunks = None if mu.is_atomic else _Chunks(mu, near_radius)
        self.close = _close_pairs(mu, near_radius) if mu.is_atomic else None
        self.far_d, self.near = [], []
        for b in range(self.batches):
            rng = generator(seed, f"energy/batch/{b}")
            x, _ = mu.sample(rng, per)
            y, _ = mu.sample(rng, per)
            d = np.hypot(*(x - y).T)
            self.far_d.append(d[d >= near_radius])
            self.far_count = per
            if chunks is not None:
                xo, _ = mu.sample(rng, n_outer)
                self.near.append(_near_geometry(mu, chunks, xo, near_radius, exclude_duplicates))

    def __call__(self, s, M) -> EnergyEstimate:
        n = self.mu.provenance.get("generation")
        if self.exact:
            v, dup = _exact_atoms(self.mu, s, M, self.exclude_duplicates)
            return EnergyEstimate(s, M, n, v, 0.0, 0, self.seed, "exact-atoms", dup)
        dup = 0.0
        if self.mu.is_atomic:
            near_atoms, dup = _near_atoms_exact(self.mu, self.close, s, M, self.exclude_duplicates)
        est = np.empty(self.batches)
        for b in range(self.batches):
            far = math.fsum(_kernel(self.far_d[b], s, M)) / self.far_count
            near = near_atoms if self.mu.is_atomic else _near_mean(self.near[b], s, M)
            est[b] = far + near
        value = min(M, max(0.0, math.fsum(est) / self.batches))
        se = float(est.std(ddof=1) / math.sqrt(self.batches))
        return EnergyEstimate(s, M, n, value, se, self.far_count * self.batches, self.seed, "near-exact/far-mc", dup)


def energy(mu: EmpiricalMeasure, s, M, pairs=200_000, seed=0, **kw) -> EnergyEstimate:
    if not 0 < s < 2.5:
        raise ValueError("s must lie in (0, 2.5)")
    if not M > 0:
        raise ValueError("M must be positive")
    return EnergyEstimator(mu, pairs, seed, **kw)(s, M)


# -- classification and the s-scan ----------------------------------------------------------

BOUNDED_GEN, BOUNDED_CAP, DIVERGENT = 1.1, 1.25, 2.0


def classify_energy(gen_ratios, cap_ratio):
    """Threshold verdict from generation ratios E(n+2)/E(n) and the cap
    ratio E(100 M)/E(M)."""
    ratios = list(gen_ratios) + [cap_ratio]
    if any(r >= DIVERGENT for r in ratios):
        return "divergent"
    if all(r <= BOUNDED_GEN for r in gen_ratios) and cap_ratio <= BOUNDED_CAP:
        return "bounded"
    return "inconclusive"


def increment_ratio(e_lo, e_mid, e_hi):
    """Ratio of successive energy increments over equal factors in M.

    For E(M) = A + B M^((s - D)/s) the increments over a factor q grow by
    q^((s - D)/s): below 1 (finite limit) iff s < D.
    """
    inc1, inc2 = e_mid - e_lo, e_hi - e_mid
    tiny = 1e-12 * max(abs(e_hi), 1e-300)
    if inc1 <= tiny:
        return 0.0 if inc2 <= tiny else math.inf
    return inc2 / inc1


def critical_exponent_scan(measures, s_grid, *, M0=1e5, spread=100.0, pairs=200_000, seed=0, near_radius=0.01,
                           exclude_duplicates=False) -> DimensionReport:
    """Classify energies over ``s_grid`` and bracket the critical exponent.

    ``measures`` maps generation -> EmpiricalMeasure; the last three
    generations enter the threshold verdicts.  The bracket is placed where
    the increments of E across caps M0/spread, M0, M0*spread stop shrinking.
    """
    gens = sorted(measures)
    if len(gens) < 3:
        raise ValueError("need at least three generations")
    gens = gens[-3:]
    grid = sorted(round(float(s), 12) for s in s_grid)
    if not all(1 < s < 2 for s in grid):
        raise ValueError("s_grid must lie in (1, 2)")
    est = {n: EnergyEstimator(measures[n], pairs, seed, near_radius=near_radius, exclude_duplicates=exclude_duplicates) for n in gens}
    top = gens[-1]
    table = []
    for s in grid:
        e_gen = [est[n](s, M0) for n in gens]
        e_lo, e_hi = est[top](s, M0 / spread), est[top](s, M0 * spread)
        vals = [e.value for e in e_gen]
        gen_ratios = [vals[1] / vals[0], vals[2] / vals[1]]
        cap_ratio = e_hi.value / vals[2]
        verdict = classify_energy(gen_ratios, cap_ratio)
        rho = increment_ratio(e_lo.value, vals[2], e_hi.value)
        implied = s * (1 - math.log(rho) / math.log(spread)) if 0 < rho < math.inf else None
        table.append({
            "s": s,
            "E_gen": vals,
            "stderr_gen": [e.stderr for e in e_gen],
            "E_cap": [e_lo.value, vals[2], e_hi.value],
            "stderr_cap": [e_lo.stderr, e_gen[2].stderr, e_hi.stderr],
            "gen_ratios": gen_ratios,
            "cap_ratio": cap_ratio,
            "verdict": verdict,
            "increment_ratio": rho,
            "trend": "divergent" if rho >= 1 else "bounded",
            "implied_dimension": implied,
        })
    trend = [row["trend"] for row in table]
    first_div = trend.index("divergent") if "divergent" in trend else len(trend)
    if any(t == "divergent" for t in trend[:first_div]) or any(t == "bounded" for t in trend[first_div:]):
        raise Inconclusive("increment trend is not monotone in s", table)
    if first_div == 0:
        lo, hi, value = 1.0, grid[0], grid[0]
    elif first_div == len(grid):
        lo, hi, value = grid[-1], 2.0, grid[-1]
    else:
        lo, hi = grid[first_div - 1], grid[first_div]
        r0, r1 = table[first_div - 1]["increment_ratio"], table[first_div]["increment_ratio"]
        if 0 < r0 and r1 < math.inf:
            g0, g1 = math.log(r0), math.log(r1)
            value = lo + (hi - lo) * (-g0) / (g1 - g0) if g1 != g0 else 0.5 * (lo + hi)
        else:
            value = 0.5 * (lo + hi)
    verdicts = [row["verdict"] for row in table]
    bounded = [row["s"] for row in table if row["verdict"] == "bounded"]
    divergent = [row["s"] for row in table if row["verdict"] == "divergent"]
    threshold_bracket = [max(bounded) if bounded else 1.0, min(divergent) if divergent else 2.0]
    diag = {
        "bracket": [lo, hi],
        "bracket_width": hi - lo,
        "threshold_verdicts": verdicts,
        "threshold_bracket": threshold_bracket,
        "generations": gens,
        "table": table,
    }
    params = {"M0": M0, "spread": spread, "pairs": pairs, "near_radius": near_radius, "s_grid": grid}
    return DimensionReport("energy-critical", float(value), diagnostics=diag, parameters=params, seed=seed)


def curve_measures(spec, generations, *, l=0.05, q=1, refine_step=1e-3, seed_curve=None):
    """mu_n for each requested generation of one curve-family run."""
    from .curves import grow_family, seed_family

    fam = seed_family(spec, q=q, l=l) if seed_curve is None else seed_curve
    _, _, kept = grow_family(spec, fam, max(generations), refine_step, keep=set(generations))
    return {n: build_mu_n(kept[n]) for n in generations}


def uniform_measures(count=200_000, draws=3, seed=0, domain=(-1.0, 1.0, -1.0, 1.0)):
    """Independent uniform atom clouds on a rectangle, labelled 0..draws-1;
    the two-dimensional reference for the scan."""
    x0, x1, y0, y1 = domain
    out = {}
    for n in range(draws):
        rng = generator(seed, f"uniform-reference/{n}")
        pts = np.column_stack([rng.uniform(x0, x1, count), rng.uniform(y0, y1, count)])
        out[n] = EmpiricalMeasure.atoms(pts, generation=n)
    return out


def write_scan_csv(report: DimensionReport, fh):
    cols = ["s", "verdict", "trend", "increment_ratio", "implied_dimension", "cap_ratio", "gen_ratio_1", "gen_ratio_2",
            "E_cap_lo", "E_cap_mid", "E_cap_hi"]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(cols)
    fmt = lambda v: "" if v is None else (f"{v:.17g}" if isinstance(v, float) else v)  # noqa: E731
    for r in report.diagnostics["table"]:
        w.writerow([fmt(v) for v in (r["s"], r["verdict"], r["trend"], r["increment_ratio"], r["implied_dimension"],
                                      r["cap_ratio"], *r["gen_ratios"], *r["E_cap"])])
