"""Iterate-split-chop engine for families of unstable curves, plus
cylinder counting and the expansion-factor filter."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConeViolation, InsufficientData
from .geometry import Cone, Polyline
from .maps import PiecewiseMap

CUT_MERGE = 1e-9  # vertices this close to a cut point are dropped
MIN_PIECE = 1e-12  # shorter split pieces are numerical debris
MIN_CHORD_FOR_SLOPE = 1e-6


@dataclass
class CurveFamily:
    """Curves of one generation; ``itineraries`` is an (N, generation*q)
    array of piece ids and ``parents`` the index of each curve's parent."""

    generation: int
    q: int
    l: float
    curves: list
    itineraries: np.ndarray
    parents: np.ndarray

    def __post_init__(self):
        self.itineraries = np.asarray(self.itineraries, dtype=np.int8).reshape(len(self.curves), -1)
        self.parents = np.asarray(self.parents, dtype=np.int64).reshape(len(self.curves))

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return CurveFamily(self.generation, self.q, self.l, [self.curves[i] for i in idx],
                           self.itineraries[idx], self.parents[idx])

    def __len__(self):
        return len(self.curves)

    @property
    def total_length(self):
        return math.fsum(c.length for c in self.curves)

    def vertex_rows(self):
        """(curve id, vertex index, x1, x2) rows for CSV dumps."""
        for i, c in enumerate(self.curves):
            for j, (a, b) in enumerate(c.vertices):
                yield i, j, a, b


@dataclass
class GenerationRecord:
    n: int
    count: int
    total_length: float
    cut_events: int
    discarded_length: float
    mapped_length: float


@dataclass
class GrowthLog:
    records: list = field(default_factory=list)

    COLUMNS = ("n", "count", "total_length", "cut_events", "discarded_length", "mapped_length")

    def rows(self):
        return [[getattr(r, c) for c in self.COLUMNS] for r in self.records]

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in self.rows():
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def split_at_singularity(spec: PiecewiseMap, c: Polyline):
    """Cut ``c`` at every crossing with the singularity segments."""
    v = c.vertices
    p0, r = v[:-1], np.diff(v, axis=0)
    cuts = []
    for q0, q1 in spec.singular_segments():
        s = q1 - q0
        den = r[:, 0] * s[1] - r[:, 1] * s[0]
        qp = q0 - p0
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (qp[:, 0] * s[1] - qp[:, 1] * s[0]) / den
            u = (qp[:, 0] * r[:, 1] - qp[:, 1] * r[:, 0]) / den
        hit = (den != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
        for i in np.nonzero(hit)[0]:
            cuts.append(c.cumlen[i] + t[i] * (c.cumlen[i + 1] - c.cumlen[i]))
    if not cuts:
        return [c]
    pos = np.unique(np.clip(np.concatenate([[0.0], cuts, [c.length]]), 0.0, c.length))
    return [c.sub(a, b, CUT_MERGE) for a, b in zip(pos[:-1], pos[1:]) if b - a > MIN_PIECE]


def chop(c: Polyline, l):
    """Greedy pieces of length l from the start while more than 2l remain;
    the remainder is kept if at least l long.  Returns (pieces, discarded)."""
    if c.length < l:
        return [], c.length
    n = int(n_cuts(np.array([c.length]), l)[0])
    out = [c.sub(j * l, (j + 1) * l, CUT_MERGE) for j in range(n)]
    out.append(c.sub(n * l, c.length, CUT_MERGE) if n else c)
    return out, 0.0


def n_cuts(length, l):
    """Smallest j with length - j*l <= 2l (number of greedy l-pieces)."""
    n = np.maximum(0, np.ceil((length - 2 * l) / l)).astype(np.int64)
    n = np.where((n > 0) & (length - (n - 1) * l <= 2 * l), n - 1, n)
    return np.where(length - n * l > 2 * l, n + 1, n)


def _classify_curve(spec, c):
    for frac in (0.5, 1 / 3, 2 / 3):
        piece = int(spec.piece_index(c.point_at(frac * c.length)[None])[0])
        if piece > 0:
            return piece
    return piece


def seed_family(spec: PiecewiseMap, *, center=None, slope=None, length=None, q=1, l=0.05, cone=None):
    """Generation 0: one straight cone segment inside piece 1."""
    if center is None:
        poly = spec.piece_polygon(1)
        center = poly.mean(axis=0)
    center = np.asarray(center, float)
    if slope is None:
        from .cones import unstable_cone

        c = unstable_cone(spec) if cone is None else cone
        slope = 0.5 * (c.s_lo + c.s_hi)
    length = 3.3 * l if length is None else length
    d = np.array([slope, 1.0]) / math.hypot(slope, 1.0)
    seg = Polyline([center - 0.5 * length * d, center + 0.5 * length * d])
    parts = split_at_singularity(spec, seg)
    seg = max(parts, key=lambda p: p.length)
    return CurveFamily(0, q, l, [seg], np.zeros((1, 0), np.int8), [-1])


def _advance_one(spec, c, itin, q, l, refine_step):
    pieces = [(c, itin)]
    cuts, dropped = 0, 0.0
    for _ in range(q):
        nxt = []
        for pc, pit in pieces:
            if not spec.is_affine:
                pc = pc.refined(refine_step)
            piece = _classify_curve(spec, pc)
            if piece <= 0:
                dropped += pc.length
                continue
            img = Polyline(spec.apply_piece(pc.vertices, np.full(len(pc), piece)))
            parts = split_at_singularity(spec, img)
            cuts += len(parts) - 1
            dropped += img.length - math.fsum(p.length for p in parts)
            nxt.extend((p, pit + (piece,)) for p in parts)
        pieces = nxt
    mapped = math.fsum(p.length for p, _ in pieces) + dropped
    out = []
    discarded = dropped
    for p, pit in pieces:
        kept, lost = chop(p, l)
        discarded += lost
        out.extend((k, pit) for k in kept)
    return out, cuts, discarded, mapped


def _advance_straight(spec, fam, l):
    """Vectorised generation step for affine maps acting on segments."""
    segs = np.array([c.vertices for c in fam.curves])
    a, b = segs[:, 0], segs[:, 1]
    codes = fam.itineraries
    owner = np.arange(len(segs))
    order = np.zeros(len(segs), dtype=np.int64)  # position along the parent
    cuts = 0
    dropped = 0.0
    affine = [spec.branch_affine(p) for p in range(1, spec.n_pieces + 1)]
    sing = spec.singular_segments()
    for step in range(fam.q):
        piece = spec.piece_index(0.5 * (a + b))
        good = piece > 0
        dropped += float(np.hypot(*(b - a)[~good].T).sum())
        a, b, codes, owner, order, piece = a[good], b[good], codes[good], owner[good], order[good], piece[good]
        A = np.array([m for m, _ in affine])[piece - 1]
        off = np.array([v for _, v in affine])[piece - 1]
        a = np.einsum("nij,nj->ni", A, a) + off
        b = np.einsum("nij,nj->ni", A, b) + off
        codes = np.column_stack([codes, piece.astype(np.int8)])
        r = b - a
        T = np.full((len(a), len(sing)), np.inf)
        for j, (q0, q1) in enumerate(sing):
            sv = q1 - q0
            den = r[:, 0] * sv[1] - r[:, 1] * sv[0]
            qp = q0 - a
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (qp[:, 0] * sv[1] - qp[:, 1] * sv[0]) / den
                u = (qp[:, 0] * r[:, 1] - qp[:, 1] * r[:, 0]) / den
            hit = (den != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
            T[hit, j] = t[hit]
        T.sort(axis=1)
        bounds = np.column_stack([np.zeros(len(a)), np.minimum(T, 1.0), np.ones(len(a))])
        length = np.hypot(r[:, 0], r[:, 1])
        parts = []
        for k in range(bounds.shape[1] - 1):
            t0, t1 = bounds[:, k], bounds[:, k + 1]
            keep = (t1 - t0) * length > MIN_PIECE
            parts.append((k, np.nonzero(keep)[0], t0[keep], t1[keep]))
            cuts += int(np.count_nonzero(keep & (k > 0)))
        idx = np.concatenate([p[1] for p in parts])
        sub = np.concatenate([np.full(len(p[1]), p[0]) for p in parts])
        t0 = np.concatenate([p[2] for p in parts])
        t1 = np.concatenate([p[3] for p in parts])
        na = a[idx] + t0[:, None] * r[idx]
        nb = a[idx] + t1[:, None] * r[idx]
        key_owner, key_order = owner[idx], order[idx] * (len(sing) + 1) + sub
        srt = np.lexsort((key_order, key_owner))
        a, b, codes = na[srt], nb[srt], codes[idx][srt]
        owner, order = key_owner[srt], key_order[srt]
    length = np.hypot(*(b - a).T)
    mapped = float(length.sum()) + dropped
    short = length < l
    discarded = dropped + float(length[short].sum())
    a, b, codes, owner, length = a[~short], b[~short], codes[~short], owner[~short], length[~short]
    n_cut = n_cuts(length, l)
    rep = n_cut + 1
    src = np.repeat(np.arange(len(a)), rep)
    j = np.arange(rep.sum()) - np.repeat(np.cumsum(rep) - rep, rep)
    s0 = j * l
    s1 = np.where(j < n_cut[src], (j + 1) * l, length[src])
    d = (b - a)[src] / length[src, None]
    na = a[src] + s0[:, None] * d
    nb = np.where((j == n_cut[src])[:, None], b[src], a[src] + s1[:, None] * d)
    curves = [Polyline.segment(p, q) for p, q in zip(na, nb)]
    new = CurveFamily(fam.generation + 1, fam.q, fam.l, curves, codes[src], owner[src])
    return new, cuts, discarded, mapped


def _check_cone(curves, cone, tol):
    for c in curves:
        d = c.chord_vectors()
        long = np.hypot(d[:, 0], d[:, 1]) >= MIN_CHORD_FOR_SLOPE
        d = d[long]
        if np.any(d[:, 1] == 0):
            raise ConeViolation("horizontal chord in an unstable curve")
        s = d[:, 0] / d[:, 1]
        if np.any(s < cone.s_lo - tol) or np.any(s > cone.s_hi + tol):
            raise ConeViolation(f"chord slope {s[(s < cone.s_lo - tol) | (s > cone.s_hi + tol)][0]:.12g} outside {cone}")


def advance_family(spec: PiecewiseMap, fam: CurveFamily, refine_step=1e-3, *, cone: Cone | str | None = "auto",
                   slope_tol=1e-9, threads=1):
    """One generation: map every curve q times (splitting after each step),
    chop into [l, 2l] pieces and check the chord slopes against ``cone``
    (the reference unstable cone by default, None to skip).
    Returns (family, GenerationRecord)."""
    if isinstance(cone, str):
        from .cones import unstable_cone

        cone = unstable_cone(spec)
    if spec.is_affine and all(len(c) == 2 for c in fam.curves):
        new, cuts, discarded, mapped = _advance_straight(spec, fam, fam.l)
        if cone is not None:
            _check_cone(new.curves, cone, slope_tol)
        rec = GenerationRecord(new.generation, len(new), new.total_length, cuts, discarded, mapped)
        return new, rec
    job = lambda c: _advance_one(spec, c, (), fam.q, fam.l, refine_step)  # noqa: E731
    items = fam.curves
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(job, items))
    else:
        results = [job(it) for it in items]
    curves, itins, parents = [], [], []
    cuts, discarded, mapped = 0, [], []
    for parent, (out, n_cut, lost, m) in enumerate(results):
        for c, it in out:
            curves.append(c)
            itins.append(tuple(fam.itineraries[parent]) + it)
            parents.append(parent)
        cuts += n_cut
        discarded.append(lost)
        mapped.append(m)
    if cone is not None:
        _check_cone(curves, cone, slope_tol)
    itins = np.array(itins, dtype=np.int8).reshape(len(curves), (fam.generation + 1) * fam.q)
    new = CurveFamily(fam.generation + 1, fam.q, fam.l, curves, itins, parents)
    rec = GenerationRecord(new.generation, len(curves), new.total_length, cuts, math.fsum(discarded), math.fsum(mapped))
    return new, rec


def grow_family(spec, fam, generations, refine_step=1e-3, *, cone="auto", keep=None, threads=1):
    """Advance ``generations`` times.  Returns (final family, GrowthLog,
    {generation: family} for generations listed in ``keep``)."""
    log = GrowthLog([GenerationRecord(fam.generation, len(fam), fam.total_length, 0, 0.0, fam.total_length)])
    kept = {}
    keep = set(keep or ())
    if fam.generation in keep:
        kept[fam.generation] = fam
    for _ in range(generations):
        fam, rec = advance_family(spec, fam, refine_step, cone=cone, threads=threads)
        log.records.append(rec)
        if fam.generation in keep:
            kept[fam.generation] = fam
    return fam, log, kept


def growth_rate(log: GrowthLog, burn_in=5):
    recs = [r for r in log.records if r.n >= burn_in]
    if len(recs) < 3:
        raise InsufficientData(f"need at least 3 generations after burn-in {burn_in}, have {len(recs)}")
    n = np.array([r.n for r in recs], dtype=float)
    y = np.log([max(r.count, 1) for r in recs])
    return float(np.polyfit(n, y, 1)[0])


def itineraries(spec: PiecewiseMap, points, m):
    """(n, m) forward itineraries; rows hitting the singularity set or
    leaving the domain are dropped.  Returns (codes, kept row indices)."""
    x = np.asarray(points, dtype=float).reshape(-1, 2)
    idx = np.arange(len(x))
    codes = np.zeros((len(x), m), dtype=np.int16)
    for j in range(m):
        piece = spec.piece_index(x)
        ok = piece > 0
        x, idx, codes, piece = x[ok], idx[ok], codes[ok], piece[ok]
        codes[:, j] = piece
        x = spec.apply_piece(x, piece)
    return codes, idx


def count_cylinders(spec: PiecewiseMap, points, m):
    codes, _ = itineraries(spec, points, m)
    if len(codes) == 0:
        return 0
    return int(np.unique(codes, axis=0).shape[0])


def expansion_logs(spec: PiecewiseMap, points, r):
    """Log diagonal QR factors of the r-step derivative at each point.

    Returns (log_u, log_s, ok) where ok marks orbits that stayed off the
    singularity set for r steps.
    """
    from .dimension import identity_frames, qr_step

    x = np.asarray(points, dtype=float).reshape(-1, 2).copy()
    n = len(x)
    ok = np.ones(n, dtype=bool)
    q1, q2 = identity_frames(n)
    l1, l2 = np.zeros((n, r)), np.zeros((n, r))
    for j in range(r):
        piece = spec.piece_index(x)
        ok &= piece > 0
        piece = np.where(ok, piece, 1)
        J = spec.jacobian_piece(x, piece)
        q1, q2, r11, r22 = qr_step(J, q1, q2)
        l1[:, j], l2[:, j] = np.log(r11), np.log(r22)
        x = spec.apply_piece(x, piece)
    s1 = np.array([math.fsum(row) for row in l1])
    s2 = np.array([math.fsum(row) for row in l2])
    return np.maximum(s1, s2), np.minimum(s1, s2), ok


def filter_by_expansion(spec: PiecewiseMap, fam: CurveFamily, r, eps, exponents):
    """Keep curves whose midpoint's r-step factors lie within
    exp((chi -+ eps) r) of the given exponents (unstable and stable)."""
    chi_u, chi_s = exponents
    mids = np.array([c.midpoint() for c in fam.curves]).reshape(-1, 2)
    lu, ls, ok = expansion_logs(spec, mids, r)
    slack = 1e-12 * max(r, 1)
    keep = ok & (np.abs(lu - r * chi_u) <= r * eps + slack) & (np.abs(ls - r * chi_s) <= r * eps + slack)
    return fam.subset(np.nonzero(keep)[0])
