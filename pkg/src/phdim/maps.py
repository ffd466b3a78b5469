"""Piecewise maps of a planar rectangle: skew-Belykh, the halving/doubling
map, and general piecewise affine maps.

Pieces are numbered from 1.  Vectorised classification uses 0 for points
within ``TAU_GEOM`` of the singularity set and -1 for points outside the
closed domain.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import ImageEscapesDomain, InvalidMapSpec, OnSingularity, OutsideDomain
from .geometry import TAU_GEOM, clip_polygon, polygon_area

SCHEMA_VERSION = 1
ON_SINGULARITY = 0
OUTSIDE = -1


class ParameterRangeWarning(UserWarning):
    pass


def _rect(domain):
    x0, x1, y0, y1 = domain
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


class PiecewiseMap:
    """Common interface; subclasses fill in the branch formulas."""

    kind = "abstract"
    domain = (-1.0, 1.0, -1.0, 1.0)
    n_pieces = 2
    is_affine = False
    normalized_margins = False
    tol = TAU_GEOM

    # -- evaluation, vectorised ------------------------------------------------
    def piece_index(self, pts):
        raise NotImplementedError

    def apply_piece(self, pts, piece):
        raise NotImplementedError

    def jacobian_piece(self, pts, piece):
        raise NotImplementedError

    def in_domain(self, pts, tol=None):
        tol = self.tol if tol is None else tol
        p = np.atleast_2d(pts)
        x0, x1, y0, y1 = self.domain
        a, b = p[:, 0], p[:, 1]
        ok = a >= x0 - tol
        ok &= a <= x1 + tol
        ok &= b >= y0 - tol
        ok &= b <= y1 + tol
        return ok

    def step(self, pts):
        """One application to an (n,2) array; returns (images, pieces).

        Rows with piece <= 0 are returned unchanged and must be discarded
        by the caller.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        piece = self.piece_index(pts)
        out = pts.copy()
        ok = piece > 0
        if ok.any():
            out[ok] = self.apply_piece(pts[ok], piece[ok])
        return out, piece

    def refill_low_bits(self, pts, rng):
        """Hook for maps whose floating-point orbits lose information."""
        return pts

    def affine_stepper(self):
        """Scalar ``(x1, x2) -> (piece, y1, y2)`` with the conventions of
        ``piece_index``, or None when some branch is not affine.  Avoids
        per-call array overhead in long sequential orbits."""
        branches = []
        for piece in range(1, self.n_pieces + 1):
            aff = self.branch_affine(piece)
            if aff is None:
                return None
            (a11, a12), (a21, a22) = aff[0].tolist()
            c1, c2 = aff[1].tolist()
            hps = [(a1, a2, c, math.hypot(a1, a2) if self.normalized_margins else 1.0)
                   for a1, a2, c in self.piece_halfplanes(piece)]
            branches.append((piece, hps, a11, a12, a21, a22, c1, c2))
        tol = self.tol
        x0, x1, y0, y1 = self.domain
        x0, x1, y0, y1 = x0 - tol, x1 + tol, y0 - tol, y1 + tol

        def step(u, v):
            if not (x0 <= u <= x1 and y0 <= v <= y1):
                return OUTSIDE, u, v
            best, arg = -math.inf, None
            for br in branches:
                m = min(((a1 * u + a2 * v - c) / n for a1, a2, c, n in br[1]), default=math.inf)
                if m > best:
                    best, arg = m, br
            if best <= tol:
                return ON_SINGULARITY, u, v
            piece, _, a11, a12, a21, a22, c1, c2 = arg
            return piece, a11 * u + a12 * v + c1, a21 * u + a22 * v + c2

        return step

    # -- structure ---------------------------------------------------------------
    def piece_halfplanes(self, piece):
        """Half-planes ``a . x > c`` whose intersection with K is the piece."""
        raise NotImplementedError

    def piece_polygon(self, piece):
        poly = _rect(self.domain)
        for a1, a2, c in self.piece_halfplanes(piece):
            poly = clip_polygon(poly, (a1, a2), c)
        return poly

    def branch_affine(self, piece):
        """``(A, b)`` with branch(x) = A x + b, or None if not affine."""
        return None

    def jacobian_bounds(self, piece):
        """Interval matrix enclosing every Jacobian of the branch."""
        raise NotImplementedError

    def singular_segments(self):
        """(m,2,2) array of the singularity segments inside the domain."""
        raise NotImplementedError

    def random_points(self, rng, n):
        x0, x1, y0, y1 = self.domain
        return np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])

    def to_dict(self):
        raise NotImplementedError

    @property
    def content_hash(self):
        return spec_hash(self)

    def _check_images(self, per_edge=257):
        for piece in range(1, self.n_pieces + 1):
            poly = self.piece_polygon(piece)
            if polygon_area(poly) <= 0:
                raise InvalidMapSpec(f"piece {piece} is empty")
            w = np.linspace(0, 1, per_edge)[:, None]
            edge_pts = [poly[i] * (1 - w) + poly[(i + 1) % len(poly)] * w for i in range(len(poly))]
            pts = np.vstack(edge_pts)
            img = self.apply_piece(pts, np.full(len(pts), piece))
            if not self.in_domain(img, 1e-9).all():
                bad = img[~self.in_domain(img, 1e-9)][0]
                raise InvalidMapSpec(f"branch {piece} maps its piece outside the domain (e.g. to {bad})")


# -- skew-Belykh family -------------------------------------------------------


@dataclass(frozen=True)
class BelykhParams:
    lam: float
    gamma: float
    rho: float
    k: float
    a1: float = 0.0
    a2: float = 0.0
    b1: float = 0.0
    b2: float = 0.0
    psi1: tuple = ()
    psi2: tuple = ()
    rho_psi: float | None = None

    @classmethod
    def standard(cls, lam=0.3, **kw):
        """lam 0.3, gamma 1.8, rho 0.1, k 0.1, b = -+0.8; other values via keywords."""
        base = dict(lam=lam, gamma=1.8, rho=0.1, k=0.1, b1=-0.8, b2=0.8)
        base.update(kw)
        return cls(**base)

    @classmethod
    def degenerate(cls, lam=0.3, gamma=1.8):
        """Zero shear and horizontal singularity: the attractor is x1 = 0."""
        return cls(lam=lam, gamma=gamma, rho=0.0, k=0.0, b1=1 - gamma, b2=gamma - 1)


def _poly_derivative_bound(coeffs):
    c = np.asarray(coeffs, dtype=float)
    if len(c) < 2:
        return 0.0, 0.0
    d = P.polyder(c)
    grid = np.linspace(-1.0, 1.0, 2001)
    sampled = float(np.max(np.abs(P.polyval(grid, d))))
    coef_sum = float(np.sum(np.abs(d)))
    return sampled, coef_sum


class BelykhMap(PiecewiseMap):
    """x2 > k x1: (lam x1 + a1 + rho x2 + psi1(x2), gamma x2 + b1)
    x2 < k x1: (lam x1 + a2 + psi2(x2), gamma x2 + b2)
    on K = [-1,1]^2; psi are polynomials in x2 (lowest degree first)."""

    kind = "belykh"

    def __init__(self, params: BelykhParams):
        p = params
        for name in ("lam", "gamma", "rho", "k", "a1", "a2", "b1", "b2"):
            if not math.isfinite(getattr(p, name)):
                raise InvalidMapSpec(f"{name} must be finite")
        if not 0 < p.lam < 1:
            raise InvalidMapSpec("lambda must lie in (0, 1)")
        if not p.gamma > 1:
            raise InvalidMapSpec("gamma must exceed 1")
        if not -1 < p.k < 1:
            raise InvalidMapSpec("k must lie in (-1, 1)")
        if not 0.5 < p.lam < 1:
            warnings.warn(f"lambda={p.lam} outside (1/2, 1)", ParameterRangeWarning, stacklevel=2)
        psi1 = tuple(float(c) for c in p.psi1)
        psi2 = tuple(float(c) for c in p.psi2)
        perturbed = any(c != 0 for c in psi1 + psi2)
        if p.rho == 0 and perturbed:
            raise InvalidMapSpec("zero shear requires psi1 = psi2 = 0")
        bounds = [_poly_derivative_bound(c) for c in (psi1, psi2)]
        sampled = max(b[0] for b in bounds)
        coef = max(b[1] for b in bounds)
        rho_psi = p.rho_psi
        if rho_psi is None:
            rho_psi = coef if perturbed else 0.0
        if rho_psi < 0 or sampled > rho_psi * (1 + 1e-12):
            raise InvalidMapSpec(f"|psi'| reaches {sampled:.6g}, above rho_psi={rho_psi}")
        if p.rho != 0 and not rho_psi < abs(p.rho) / 2:
            raise InvalidMapSpec("rho_psi must stay below |rho|/2")
        self.params = BelykhParams(**{**asdict(p), "psi1": psi1, "psi2": psi2, "rho_psi": float(rho_psi)})
        self._d1 = P.polyder(np.asarray(psi1)) if len(psi1) > 1 else np.zeros(1)
        self._d2 = P.polyder(np.asarray(psi2)) if len(psi2) > 1 else np.zeros(1)
        self.perturbed = perturbed
        self.is_affine = not perturbed
        self._check_images()

    def __repr__(self):
        return f"BelykhMap({self.params})"

    def piece_index(self, pts):
        p = np.atleast_2d(pts)
        g = p[:, 1] - self.params.k * p[:, 0]
        out = np.where(g > 0, 1, 2)
        out[np.abs(g) <= self.tol] = ON_SINGULARITY
        out[~self.in_domain(p)] = OUTSIDE
        return out

    def apply_piece(self, pts, piece):
        p = self.params
        x1, x2 = np.atleast_2d(pts).T
        upper = piece == 1
        out = np.empty((len(x1), 2))
        out[:, 0] = p.lam * x1 + np.where(upper, p.a1 + p.rho * x2, p.a2)
        if self.perturbed:
            out[:, 0] += np.where(upper, P.polyval(x2, p.psi1 or (0.0,)), P.polyval(x2, p.psi2 or (0.0,)))
        out[:, 1] = p.gamma * x2 + np.where(upper, p.b1, p.b2)
        return out

    def jacobian_piece(self, pts, piece):
        p = self.params
        x2 = np.atleast_2d(pts)[:, 1]
        if self.perturbed:
            a12 = np.where(piece == 1, p.rho + P.polyval(x2, self._d1), P.polyval(x2, self._d2))
        else:
            a12 = np.where(piece == 1, p.rho, 0.0)
        J = np.zeros((len(x2), 2, 2))
        J[:, 0, 0] = p.lam
        J[:, 0, 1] = a12
        J[:, 1, 1] = p.gamma
        return J

    def piece_halfplanes(self, piece):
        k = self.params.k
        return [(-k, 1.0, 0.0)] if piece == 1 else [(k, -1.0, 0.0)]

    def branch_affine(self, piece):
        if self.perturbed:
            return None
        p = self.params
        if piece == 1:
            return np.array([[p.lam, p.rho], [0.0, p.gamma]]), np.array([p.a1, p.b1])
        return np.array([[p.lam, 0.0], [0.0, p.gamma]]), np.array([p.a2, p.b2])

    def jacobian_bounds(self, piece):
        p = self.params
        r = p.rho_psi
        base = p.rho if piece == 1 else 0.0
        a12 = base if r == 0 else (base - r, base + r)
        return ((p.lam, a12), (0.0, p.gamma))

    def singular_segments(self):
        k = self.params.k
        return np.array([[[-1.0, -k], [1.0, k]]])

    def to_dict(self):
        d = asdict(self.params)
        d["lambda"] = d.pop("lam")
        d["psi1"], d["psi2"] = list(d["psi1"]), list(d["psi2"])
        return {"schema": SCHEMA_VERSION, "kind": self.kind, **d}


class RemarkMap(PiecewiseMap):
    """(x1, x2) -> (x1/2, 2 x2 mod 1) on the unit square, cut at x2 = 1/2."""

    kind = "remark"
    domain = (0.0, 1.0, 0.0, 1.0)
    is_affine = True
    # unrevealed binary digits of x2 are redrawn below this scale
    low_bits_scale = 2.0**-50

    def __repr__(self):
        return "RemarkMap()"

    def piece_index(self, pts):
        p = np.atleast_2d(pts)
        g = p[:, 1] - 0.5
        out = np.where(g < -self.tol, 1, np.where(g > self.tol, 2, ON_SINGULARITY))
        return np.where(self.in_domain(p), out, OUTSIDE)

    def apply_piece(self, pts, piece):
        x1, x2 = np.atleast_2d(pts).T
        return np.column_stack([0.5 * x1, 2.0 * x2 - (piece == 2)])

    def jacobian_piece(self, pts, piece):
        J = np.zeros((len(np.atleast_2d(pts)), 2, 2))
        J[:, 0, 0], J[:, 1, 1] = 0.5, 2.0
        return J

    def refill_low_bits(self, pts, rng):
        # doubling shifts one binary digit out per step; without fresh low
        # digits every float orbit collapses onto 0 within ~53 steps
        pts[:, 1] = np.minimum(pts[:, 1] + rng.uniform(0, self.low_bits_scale, len(pts)), 1.0)
        return pts

    def piece_halfplanes(self, piece):
        return [(0.0, -1.0, -0.5)] if piece == 1 else [(0.0, 1.0, 0.5)]

    def branch_affine(self, piece):
        return np.array([[0.5, 0.0], [0.0, 2.0]]), np.array([0.0, 0.0 if piece == 1 else -1.0])

    def jacobian_bounds(self, piece):
        return ((0.5, 0.0), (0.0, 2.0))

    def singular_segments(self):
        return np.array([[[0.0, 0.5], [1.0, 0.5]]])

    def to_dict(self):
        return {"schema": SCHEMA_VERSION, "kind": self.kind}


@dataclass(frozen=True)
class AffinePiece:
    halfplanes: tuple  # ((a1, a2, c), ...) meaning a1 x1 + a2 x2 > c
    matrix: tuple
    offset: tuple = (0.0, 0.0)


class AffineMap(PiecewiseMap):
    """Piecewise affine map on a rectangle with convex pieces cut by lines."""

    kind = "affine"
    is_affine = True
    normalized_margins = True

    def __init__(self, pieces, domain=(-1.0, 1.0, -1.0, 1.0)):
        self.domain = tuple(float(v) for v in domain)
        self.pieces = tuple(
            AffinePiece(
                tuple(tuple(float(v) for v in h) for h in pc.halfplanes),
                tuple(tuple(float(v) for v in row) for row in pc.matrix),
                tuple(float(v) for v in pc.offset),
            )
            for pc in pieces
        )
        if not self.pieces:
            raise InvalidMapSpec("an affine map needs at least one piece")
        self.n_pieces = len(self.pieces)
        self._A = np.array([pc.matrix for pc in self.pieces])
        self._b = np.array([pc.offset for pc in self.pieces])
        if self._A.shape[1:] != (2, 2) or self._b.shape[1:] != (2,):
            raise InvalidMapSpec("piece matrices must be 2x2 and offsets 2-vectors")
        self._check_partition()
        self._check_images()

    def __repr__(self):
        return f"AffineMap({self.n_pieces} pieces)"

    def _margins(self, p):
        m = np.full((len(p), self.n_pieces), np.inf)
        for i, pc in enumerate(self.pieces):
            for a1, a2, c in pc.halfplanes:
                norm = math.hypot(a1, a2)
                m[:, i] = np.minimum(m[:, i], (a1 * p[:, 0] + a2 * p[:, 1] - c) / norm)
        return m

    def _check_partition(self):
        g = np.linspace(0, 1, 101)
        x0, x1, y0, y1 = self.domain
        X, Y = np.meshgrid(x0 + (x1 - x0) * g, y0 + (y1 - y0) * g)
        m = self._margins(np.column_stack([X.ravel(), Y.ravel()]))
        if np.any((m > self.tol).sum(axis=1) > 1):
            raise InvalidMapSpec("pieces overlap")
        if np.any(m.max(axis=1) < -1e-6):
            raise InvalidMapSpec("pieces do not cover the domain")

    def piece_index(self, pts):
        p = np.atleast_2d(pts)
        m = self._margins(p)
        best = m.argmax(axis=1)
        out = np.where(m[np.arange(len(p)), best] > self.tol, best + 1, ON_SINGULARITY)
        return np.where(self.in_domain(p), out, OUTSIDE)

    def apply_piece(self, pts, piece):
        p = np.atleast_2d(pts)
        i = np.asarray(piece) - 1
        return np.einsum("nij,nj->ni", self._A[i], p) + self._b[i]

    def jacobian_piece(self, pts, piece):
        return self._A[np.asarray(piece) - 1].copy()

    def piece_halfplanes(self, piece):
        return list(self.pieces[piece - 1].halfplanes)

    def branch_affine(self, piece):
        return self._A[piece - 1].copy(), self._b[piece - 1].copy()

    def jacobian_bounds(self, piece):
        return tuple(tuple(row) for row in self.pieces[piece - 1].matrix)

    def singular_segments(self):
        x0, x1, y0, y1 = self.domain
        segs = {}
        for piece in range(1, self.n_pieces + 1):
            poly = self.piece_polygon(piece)
            for i in range(len(poly)):
                a, b = poly[i], poly[(i + 1) % len(poly)]
                on_box = any(
                    (abs(a[j] - v) < 1e-12 and abs(b[j] - v) < 1e-12) for j, v in ((0, x0), (0, x1), (1, y0), (1, y1))
                )
                if on_box or math.hypot(*(b - a)) < 1e-12:
                    continue
                key = tuple(sorted((tuple(np.round(a, 9)), tuple(np.round(b, 9)))))
                segs.setdefault(key, (a, b))
        return np.array([np.array(v) for v in segs.values()]).reshape(-1, 2, 2)

    def to_dict(self):
        return {
            "schema": SCHEMA_VERSION,
            "kind": self.kind,
            "domain": list(self.domain),
            "pieces": [
                {"halfplanes": [list(h) for h in pc.halfplanes], "matrix": [list(r) for r in pc.matrix], "offset": list(pc.offset)}
                for pc in self.pieces
            ],
        }


# -- scalar API with errors ------------------------------------------------------


def classify(spec: PiecewiseMap, p) -> int:
    piece = int(spec.piece_index(np.asarray(p, dtype=float)[None])[0])
    if piece == OUTSIDE:
        raise OutsideDomain(f"{tuple(p)} lies outside the domain")
    if piece == ON_SINGULARITY:
        raise OnSingularity(f"{tuple(p)} lies on the singularity set")
    return piece


def apply(spec: PiecewiseMap, p):
    piece = classify(spec, p)
    img = spec.apply_piece(np.asarray(p, dtype=float)[None], np.array([piece]))[0]
    if not spec.in_domain(img[None])[0]:
        raise ImageEscapesDomain(f"image {tuple(img)} of {tuple(p)} leaves the domain")
    return img


def jacobian(spec: PiecewiseMap, p):
    piece = classify(spec, p)
    return spec.jacobian_piece(np.asarray(p, dtype=float)[None], np.array([piece]))[0]


def analytic_exponents(spec: PiecewiseMap):
    """(chi_u, chi_s) when every Jacobian is the same triangular matrix."""
    if isinstance(spec, BelykhMap):
        if spec.perturbed:
            return None
        return math.log(spec.params.gamma), math.log(spec.params.lam)
    if isinstance(spec, RemarkMap):
        return math.log(2.0), -math.log(2.0)
    if isinstance(spec, AffineMap):
        A = spec._A
        if np.all(A == A[0]) and (A[0, 1, 0] == 0 or A[0, 0, 1] == 0):
            d = sorted(math.log(abs(v)) for v in np.diag(A[0]) if v != 0)
            if len(d) == 2:
                return d[1], d[0]
    return None


# -- serialisation ---------------------------------------------------------------


def spec_from_dict(d) -> PiecewiseMap:
    if not isinstance(d, dict):
        raise InvalidMapSpec("map spec must be a JSON object")
    schema = d.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise InvalidMapSpec(f"unsupported map schema {schema}")
    kind = d.get("kind")
    try:
        if kind == "belykh":
            known = {"lambda", "gamma", "rho", "k", "a1", "a2", "b1", "b2", "psi1", "psi2", "rho_psi", "schema", "kind"}
            extra = set(d) - known
            if extra:
                raise InvalidMapSpec(f"unknown Belykh fields {sorted(extra)}")
            args = {key: d[key] for key in known - {"schema", "kind", "lambda"} if key in d}
            args["lam"] = d["lambda"]
            for key in ("psi1", "psi2"):
                args[key] = tuple(args.get(key, ()))
            for key in ("lam", "gamma", "rho", "k", "a1", "a2", "b1", "b2"):
                if key in args and (isinstance(args[key], bool) or not isinstance(args[key], (int, float))):
                    raise InvalidMapSpec(f"{key} must be a number")
            return BelykhMap(BelykhParams(**args))
        if kind == "remark":
            return RemarkMap()
        if kind == "affine":
            pieces = [AffinePiece(tuple(pc["halfplanes"]), tuple(pc["matrix"]), tuple(pc.get("offset", (0.0, 0.0)))) for pc in d["pieces"]]
            return AffineMap(pieces, d.get("domain", (-1.0, 1.0, -1.0, 1.0)))
    except (KeyError, TypeError) as exc:
        raise InvalidMapSpec(f"malformed {kind} spec: {exc!r}") from exc
    raise InvalidMapSpec(f"unknown map kind {kind!r}")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def spec_hash(spec: PiecewiseMap) -> str:
    return hashlib.sha256(canonical_json(spec.to_dict()).encode()).hexdigest()


def load_spec(path) -> PiecewiseMap:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidMapSpec(f"{path}: {exc}") from exc
    return spec_from_dict(d)
