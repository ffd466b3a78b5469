"""Interval certificates for invariant cones, branch-image disjointness and
the cone criterion for vanishing multiplicity entropy."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np

from .errors import CriterionInapplicable, DegenerateImage, InvalidForRhoZero, NotFound
from .geometry import Cone, map_cone, map_cone_exact, map_direction, round_down, round_up
from .maps import BelykhMap, PiecewiseMap, RemarkMap


def _exact_cone(lo: Fraction, hi: Fraction) -> Cone:
    return Cone(round_down(lo), round_up(hi))


def _contains_exact(c: Cone, lo: Fraction, hi: Fraction):
    return Fraction(c.s_lo) <= lo and hi <= Fraction(c.s_hi)


def unstable_cone(spec: PiecewiseMap) -> Cone:
    """Invariant cone of the reference construction.

    For the Belykh family this is the interval between
    (min(0, rho) - rho_psi)/(gamma - lam) and (max(0, rho) + rho_psi)/(gamma - lam),
    which reduces to the familiar positive-shear cone when rho > 0.  Affine
    maps iterate the vertical ray and take the hull until it stabilises.
    """
    if isinstance(spec, BelykhMap):
        # use the float shear intervals the certificate sees, so rounding in
        # rho +- rho_psi cannot break exact invariance
        lam, gam = Fraction(spec.params.lam), Fraction(spec.params.gamma)
        shear = [spec.jacobian_bounds(piece)[0][1] for piece in (1, 2)]
        lo = min(Fraction(e[0]) if isinstance(e, tuple) else Fraction(e) for e in shear)
        hi = max(Fraction(e[1]) if isinstance(e, tuple) else Fraction(e) for e in shear)
        return _exact_cone(min(0, lo) / (gam - lam), max(0, hi) / (gam - lam))
    if isinstance(spec, RemarkMap):
        return Cone.ray(0.0)
    cone = Cone.ray(0.0)
    for _ in range(500):
        grown = cone
        for piece in range(1, spec.n_pieces + 1):
            grown = grown.hull(map_cone(spec.jacobian_bounds(piece), cone))
        if grown.s_lo >= cone.s_lo - 1e-15 and grown.s_hi <= cone.s_hi + 1e-15:
            return cone
        cone = grown
    raise NotFound("vertical ray hull did not stabilise")


@dataclass
class ConeCertificate:
    unstable_cone: Cone
    image_cones: list
    invariant: bool
    expansion_lower_bound: float
    expanding: bool
    disjoint_images: bool
    boundary_touch: bool = False
    equivalent_inequality_holds: bool | None = None
    agreement: bool | None = None

    @property
    def passed(self):
        ok = self.invariant and self.expanding and self.disjoint_images
        return ok and self.agreement is not False

    def to_dict(self):
        return {
            "unstable_cone": self.unstable_cone.to_list(),
            "image_cones": [c.to_list() for c in self.image_cones],
            "invariant": self.invariant,
            "expanding": self.expanding,
            "expansion_lower_bound": self.expansion_lower_bound,
            "disjoint_images": self.disjoint_images,
            "boundary_touch": self.boundary_touch,
            "equivalent_inequality_holds": self.equivalent_inequality_holds,
            "agreement": self.agreement,
            "passed": self.passed,
        }


def _expansion_bound(m_interval, c: Cone):
    """Lower bound of |J v| / |v| over the interval matrix and the cone,
    using only the second component of J v."""
    (_, _), (e21, e22) = m_interval
    lo21, hi21 = (e21, e21) if not isinstance(e21, (tuple, list)) else e21
    lo22, hi22 = (e22, e22) if not isinstance(e22, (tuple, list)) else e22
    vals = [a * s + b for a in (lo21, hi21) for b in (lo22, hi22) for s in (c.s_lo, c.s_hi)]
    if min(vals) <= 0 <= max(vals):
        return 0.0
    smax = max(abs(c.s_lo), abs(c.s_hi))
    return min(abs(v) for v in vals) / math.sqrt(1.0 + smax**2)


def _images(spec, candidate):
    exact = [map_cone_exact(spec.jacobian_bounds(piece), candidate) for piece in range(1, spec.n_pieces + 1)]
    return exact, [_exact_cone(lo, hi) for lo, hi in exact]


def _disjointness(exact):
    """Strict separation of every pair of exact image intervals; pairs that
    share only a boundary ray fail strictness but raise the touch flag."""
    disjoint, touch = True, False
    for a, b in combinations(exact, 2):
        if a[1] < b[0] or b[1] < a[0]:
            continue
        disjoint = False
        touch |= a[1] == b[0] or b[1] == a[0]
    return disjoint, touch


def certify_unstable_cone(spec: PiecewiseMap, candidate: Cone) -> ConeCertificate:
    exact, cones = _images(spec, candidate)
    invariant = all(_contains_exact(candidate, lo, hi) for lo, hi in exact)
    bound = min(_expansion_bound(spec.jacobian_bounds(piece), candidate) for piece in range(1, spec.n_pieces + 1))
    disjoint, touch = _disjointness(exact)
    return ConeCertificate(candidate, cones, invariant, bound, bound > 1.0, disjoint, touch)


def _belykh_inequality(p):
    """Closed-form separation of the two branch-image cones, in rationals."""
    lam, gam, rho, r = (Fraction(v) for v in (p.lam, p.gamma, p.rho, p.rho_psi))
    if r == 0:
        return gam > 2 * lam
    gap = gam - lam
    if rho > 0:
        lower1 = -r * lam / (gam * gap) + (rho - r) / gam
        upper2 = (rho + r) * lam / (gam * gap) + r / gam
        return lower1 > upper2
    lower2 = (rho - r) * lam / (gam * gap) - r / gam
    upper1 = r * lam / (gam * gap) + (rho + r) / gam
    return upper1 < lower2


def check_condition_T_cones(spec: BelykhMap) -> ConeCertificate:
    """Sufficient cone test for transversality of the two branch images."""
    if not isinstance(spec, BelykhMap):
        raise TypeError("the closed-form cross-check exists for the Belykh family only")
    if spec.params.rho == 0:
        raise InvalidForRhoZero("with zero shear the unstable cone degenerates to a ray")
    cert = certify_unstable_cone(spec, unstable_cone(spec))
    cert.equivalent_inequality_holds = _belykh_inequality(spec.params)
    cert.agreement = cert.disjoint_images == cert.equivalent_inequality_holds
    return cert


# -- multiplicity cones -------------------------------------------------------------


@dataclass
class MultiplicityCertificate:
    cu: Cone
    cd: Cone
    conditions: dict = field(default_factory=dict)
    tangent_slopes: list = field(default_factory=list)
    tangent_images: list = field(default_factory=list)
    cd_images: list = field(default_factory=list)

    @property
    def passed(self):
        return bool(self.conditions) and all(self.conditions.values())

    def to_dict(self):
        return {
            "cu": self.cu.to_list(),
            "cd": self.cd.to_list(),
            "conditions": dict(self.conditions),
            "tangent_slopes": self.tangent_slopes,
            "tangent_images": [c.to_list() for c in self.tangent_images],
            "cd_images": [c.to_list() for c in self.cd_images],
            "passed": self.passed,
        }


def _adjacent_pieces(spec, seg):
    a, b = seg
    mid = 0.5 * (a + b)
    d = (b - a) / np.hypot(*(b - a))
    nrm = np.array([-d[1], d[0]])
    pts = np.array([mid + 1e-7 * nrm, mid - 1e-7 * nrm])
    return sorted({int(p) for p in spec.piece_index(pts) if p > 0})


def check_multiplicity_cones(spec: PiecewiseMap, cu: Cone, cd: Cone) -> MultiplicityCertificate:
    """Four sub-conditions on (cu, cd) at every singularity segment:
    tangent images in cd, images of cd in cu, cd and cu disjoint, tangent
    outside cu."""
    segs = spec.singular_segments()
    tangent_ok = cd_ok = outside_ok = True
    slopes, t_images, cd_images = [], [], []
    for seg in segs:
        dx, dy = seg[1] - seg[0]
        if dy == 0:
            raise CriterionInapplicable("the singularity line is horizontal; its tangent image stays horizontal")
        t = Fraction(float(dx)) / Fraction(float(dy))
        slopes.append(float(t))
        outside_ok &= not (Fraction(cu.s_lo) <= t <= Fraction(cu.s_hi))
        for piece in _adjacent_pieces(spec, seg):
            J = spec.jacobian_bounds(piece)
            lo, hi = _exact_ray_image(J, t)
            t_images.append(_exact_cone(lo, hi))
            tangent_ok &= _contains_exact(cd, lo, hi)
            lo2, hi2 = map_cone_exact(J, cd)
            cd_images.append(_exact_cone(lo2, hi2))
            cd_ok &= _contains_exact(cu, lo2, hi2)
    disjoint = Fraction(cd.s_hi) < Fraction(cu.s_lo) or Fraction(cu.s_hi) < Fraction(cd.s_lo)
    conditions = {
        "tangent_image_in_cd": bool(tangent_ok),
        "cd_maps_into_cu": bool(cd_ok),
        "cd_cu_disjoint": bool(disjoint),
        "tangent_N_outside_cu": bool(outside_ok),
    }
    return MultiplicityCertificate(cu, cd, conditions, slopes, t_images, cd_images)


def _exact_ray_image(J, t: Fraction):
    def vals(e):
        if isinstance(e, (tuple, list)):
            return [Fraction(e[0]), Fraction(e[1])]
        return [Fraction(e)]

    (e11, e12), (e21, e22) = J
    out = []
    for a11 in vals(e11):
        for a12 in vals(e12):
            for a21 in vals(e21):
                for a22 in vals(e22):
                    den = a21 * t + a22
                    if den == 0:
                        raise DegenerateImage("tangent direction mapped to the horizontal")
                    out.append((a11 * t + a12) / den)
    return min(out), max(out)


def search_multiplicity_cones(spec: PiecewiseMap, pads=(0.0, 1e-3, 1e-2, 0.05, 0.1, 0.25, 0.5, 1.0)):
    """Look for (cu, cd) passing ``check_multiplicity_cones``.

    cd starts as the hull of the tangent images and is widened by each pad
    in turn; cu is the hull of the invariant cone and the images of cd,
    grown until invariant.  Raises NotFound when no pad works.
    """
    segs = spec.singular_segments()
    if any(seg[1][1] == seg[0][1] for seg in segs):
        raise CriterionInapplicable("horizontal singularity line")
    base = unstable_cone(spec)
    images = []
    for seg in segs:
        dx, dy = seg[1] - seg[0]
        t = Fraction(float(dx)) / Fraction(float(dy))
        for piece in _adjacent_pieces(spec, seg):
            images.append(_exact_ray_image(spec.jacobian_bounds(piece), t))
    need = _exact_cone(min(i[0] for i in images), max(i[1] for i in images))
    for pad in pads:
        cd = need.padded(pad * max(need.width, abs(need.s_lo), abs(need.s_hi), 1e-12))
        cu = base
        try:
            for _ in range(200):
                grown = cu
                for piece in range(1, spec.n_pieces + 1):
                    grown = grown.hull(map_cone(spec.jacobian_bounds(piece), cd))
                    grown = grown.hull(map_cone(spec.jacobian_bounds(piece), cu))
                if grown == cu:
                    break
                cu = grown
            else:
                continue
        except DegenerateImage:
            continue
        if not certify_unstable_cone(spec, cu).invariant:
            continue
        cert = check_multiplicity_cones(spec, cu, cd)
        if cert.passed:
            return cu, cd
    raise NotFound("no cone pair passed within the search budget")


def image_slope(spec, point, slope):
    """Slope of the image of a direction at ``point``."""
    piece = int(spec.piece_index(np.asarray(point, float)[None])[0])
    J = spec.jacobian_piece(np.asarray(point, float)[None], np.array([piece]))[0]
    return map_direction(J, slope)

