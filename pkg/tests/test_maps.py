import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from phdim.errors import ImageEscapesDomain, InvalidMapSpec, OnSingularity, OutsideDomain
from phdim.maps import (
    AffineMap,
    AffinePiece,
    BelykhMap,
    BelykhParams,
    ParameterRangeWarning,
    RemarkMap,
    analytic_exponents,
    apply,
    classify,
    jacobian,
    load_spec,
    spec_from_dict,
    spec_hash,
)

FIG_DICT = {"kind": "belykh", "lambda": 0.3, "gamma": 1.8, "rho": 0.1, "k": 0.1, "a1": 0.0, "a2": 0.0, "b1": -0.8, "b2": 0.8}


def quiet_belykh(**kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ParameterRangeWarning)
        return BelykhMap(BelykhParams(**kw))


def test_classify_examples(fig):
    assert classify(fig, (0.0, 0.5)) == 1
    assert classify(fig, (0.5, 0.04)) == 2
    with pytest.raises(OnSingularity):
        classify(fig, (0.0, 0.0))
    with pytest.raises(OutsideDomain):
        classify(fig, (1.5, 0.0))


def test_apply_examples(fig, remark):
    assert np.allclose(apply(fig, (0.0, 0.5)), (0.05, 0.1), atol=1e-15)
    assert np.allclose(apply(fig, (0.5, -0.5)), (0.15, -0.1), atol=1e-15)
    assert np.allclose(apply(remark, (0.5, 0.3)), (0.25, 0.6), atol=1e-15)


def test_apply_reports_escape():
    spec = AffineMap([AffinePiece(((0.0, 1.0, -2.0),), ((1.0, 0.0), (0.0, 1.0)), (0.0, 0.0))])
    object.__setattr__(spec, "_b", np.array([[0.0, 0.9]]))
    with pytest.raises(ImageEscapesDomain):
        apply(spec, (0.0, 0.5))


def test_jacobian_examples(fig, remark):
    assert np.allclose(jacobian(fig, (0.0, 0.5)), [[0.3, 0.1], [0.0, 1.8]])
    assert np.allclose(jacobian(fig, (0.5, -0.5)), [[0.3, 0.0], [0.0, 1.8]])
    assert np.allclose(jacobian(remark, (0.3, 0.3)), [[0.5, 0.0], [0.0, 2.0]])


def test_analytic_exponents(fig, lam05):
    assert analytic_exponents(fig) == pytest.approx((0.587787, -1.203973), abs=1e-6)
    assert analytic_exponents(lam05) == pytest.approx((0.587787, -0.693147), abs=1e-6)
    pert = quiet_belykh(lam=0.3, gamma=1.8, rho=0.1, k=0.1, b1=-0.8, b2=0.8, psi1=(0.0, 0.0, 0.01))
    assert analytic_exponents(pert) is None


def test_lambda_range_warning():
    with pytest.warns(ParameterRangeWarning):
        BelykhMap(BelykhParams.standard())
    with warnings.catch_warnings():
        warnings.simplefilter("error", ParameterRangeWarning)
        BelykhMap(BelykhParams.standard(lam=0.6))


@pytest.mark.parametrize(
    "kw",
    [
        dict(lam=1.2),
        dict(gamma=0.9),
        dict(k=1.0),
        dict(rho=0.0, psi1=(0.0, 0.01)),
        dict(psi1=(0.0, 0.0, 0.1)),  # |psi'| up to 0.2 >= rho/2
        dict(rho_psi=0.001, psi1=(0.0, 0.0, 0.01)),  # declared bound too small
        dict(b1=-0.5),  # pushes piece 1 out of the square
    ],
)
def test_invalid_parameters(kw):
    base = dict(lam=0.3, gamma=1.8, rho=0.1, k=0.1, b1=-0.8, b2=0.8)
    base.update(kw)
    with pytest.raises(InvalidMapSpec):
        quiet_belykh(**base)


def test_perturbed_bound_recorded():
    spec = quiet_belykh(lam=0.3, gamma=1.8, rho=0.1, k=0.1, b1=-0.8, b2=0.8, psi1=(0.0, 0.0, 0.01))
    assert spec.params.rho_psi == pytest.approx(0.02)
    assert spec.perturbed and not spec.is_affine
    lo, hi = spec.jacobian_bounds(1)[0][1]
    assert lo == pytest.approx(0.08) and hi == pytest.approx(0.12)


def _fd_jacobian(spec, p, piece, h):
    J = np.zeros((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        f = lambda q: spec.apply_piece(q[None], np.array([piece]))[0]  # noqa: E731
        J[:, j] = (f(p + e) - f(p - e)) / (2 * h)
    return J


@pytest.mark.parametrize("psi, tol", [((), 1e-7), ((0.0, 0.0, 0.01), 1e-5), ((0.001, -0.01, 0.0, 0.005), 1e-5)])
def test_jacobian_matches_finite_differences(psi, tol):
    spec = quiet_belykh(lam=0.3, gamma=1.8, rho=0.1, k=0.1, b1=-0.8, b2=0.8, psi1=psi, psi2=psi)
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.95, 0.95, (100, 2))
    pieces = spec.piece_index(pts)
    for p, piece in zip(pts, pieces):
        if piece <= 0:
            continue
        J = spec.jacobian_piece(p[None], np.array([piece]))[0]
        assert np.allclose(J, _fd_jacobian(spec, p, piece, 1e-6), atol=tol)


@given(st.floats(-0.99, 0.99), st.floats(-0.99, 0.99), st.floats(-0.99, 0.99), st.floats(-0.99, 0.99))
def test_same_piece_same_branch(x1, y1, x2, y2):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ParameterRangeWarning)
        spec = BelykhMap(BelykhParams.standard())
    p, q = np.array([x1, y1]), np.array([x2, y2])
    gp, gq = y1 - 0.1 * x1, y2 - 0.1 * x2
    if gp * gq <= 0 or min(abs(gp), abs(gq)) < 1e-9:
        return
    piece = spec.piece_index(np.array([p, q]))
    assert piece[0] == piece[1]
    # the branch is affine, so the midpoint maps to the midpoint of the images
    img = spec.apply_piece(np.array([p, q, (p + q) / 2]), np.full(3, piece[0]))
    assert np.allclose(img[2], (img[0] + img[1]) / 2, atol=1e-14)


@pytest.mark.parametrize("seed", range(4))
def test_domain_invariance_for_admissible_parameters(seed):
    rng = np.random.default_rng(seed)
    while True:
        gam = rng.uniform(1.05, 1.95)
        lam = rng.uniform(0.05, 0.95)
        rho = rng.uniform(-0.2, 0.2)
        k = rng.uniform(-0.5, 0.5)
        try:
            spec = quiet_belykh(lam=lam, gamma=gam, rho=rho, k=k, b1=1 - gam, b2=gam - 1)
            break
        except InvalidMapSpec:
            continue
    x = spec.random_points(rng, 100_000)
    for _ in range(100):
        x, piece = spec.step(x)
        x = x[piece > 0]
        assert spec.in_domain(x).all()


def test_remark_map_basics(remark):
    assert classify(remark, (0.2, 0.2)) == 1
    assert classify(remark, (0.2, 0.7)) == 2
    with pytest.raises(OnSingularity):
        classify(remark, (0.2, 0.5))
    with pytest.raises(OutsideDomain):
        classify(remark, (-0.2, 0.5))


def test_affine_map_partition_checks():
    ident = ((0.5, 0.0), (0.0, 0.5))
    with pytest.raises(InvalidMapSpec):
        AffineMap([AffinePiece(((0.0, 1.0, 0.0),), ident), AffinePiece(((0.0, 1.0, 0.1),), ident)])
    with pytest.raises(InvalidMapSpec):
        AffineMap([AffinePiece(((0.0, 1.0, 0.5),), ident)])
    spec = AffineMap([AffinePiece(((0.0, 1.0, 0.0),), ident), AffinePiece(((0.0, -1.0, 0.0),), ident)])
    assert spec.singular_segments().shape == (1, 2, 2)


def test_spec_round_trip_and_hash(tmp_path, fig):
    spec = spec_from_dict(FIG_DICT)
    assert spec_hash(spec) == spec_hash(fig)
    again = spec_from_dict(json.loads(json.dumps(spec.to_dict())))
    assert spec_hash(again) == spec_hash(spec)
    assert spec_hash(spec_from_dict({**FIG_DICT, "lambda": 0.5})) != spec_hash(spec)
    path = tmp_path / "m.json"
    path.write_text(json.dumps(FIG_DICT))
    assert spec_hash(load_spec(path)) == spec_hash(fig)
    assert spec_from_dict({"kind": "remark"}).kind == "remark"
    affine = {"kind": "affine", "pieces": [
        {"halfplanes": [[0, 1, 0]], "matrix": [[0.5, 0], [0, 0.5]]},
        {"halfplanes": [[0, -1, 0]], "matrix": [[0.5, 0], [0, 0.5]]}]}
    assert spec_from_dict(affine).n_pieces == 2


@pytest.mark.parametrize(
    "bad",
    [[], {"kind": "nope"}, {"kind": "belykh"}, {**FIG_DICT, "extra": 1}, {**FIG_DICT, "lambda": "x"}, {**FIG_DICT, "schema": 9},
     {"kind": "affine", "pieces": [{"matrix": [[1, 0], [0, 1]]}]}],
)
def test_spec_errors(bad):
    with pytest.raises(InvalidMapSpec):
        spec_from_dict(bad)


def test_remark_low_bit_refill_keeps_orbits_alive(remark):
    rng = np.random.default_rng(0)
    x = remark.random_points(rng, 1000)
    for _ in range(200):
        x, piece = remark.step(x)
        x = remark.refill_low_bits(x[piece > 0], rng)
    assert len(x) > 900
    assert np.std(x[:, 1]) > 0.2
    assert np.all(x[:, 0] < 1e-50)


def _tilted_affine():
    A = ((0.4, 0.1), (0.0, 1.5))
    return AffineMap([AffinePiece(((-0.3, 1.0, 0.0),), A, (0.0, -0.5)), AffinePiece(((0.3, -1.0, 0.0),), A, (0.0, 0.5))])


@given(st.lists(st.tuples(st.floats(-1.2, 1.2), st.floats(-1.2, 1.2)), min_size=1, max_size=50))
def test_affine_stepper_matches_vectorised(pts):
    specs = [quiet_belykh(lam=0.3, gamma=1.8, rho=0.1, k=0.1, b1=-0.8, b2=0.8), RemarkMap(), _tilted_affine()]
    x = np.array(pts)
    for spec in specs:
        step = spec.affine_stepper()
        piece = spec.piece_index(x)
        img = spec.apply_piece(x, np.where(piece > 0, piece, 1))
        for row, p, y in zip(x.tolist(), piece.tolist(), img):
            q, u, v = step(*row)
            assert q == p
            if p > 0:
                assert (u, v) == pytest.approx(tuple(y), abs=1e-14)


def test_affine_stepper_absent_when_perturbed():
    assert quiet_belykh(lam=0.3, gamma=1.8, rho=0.1, k=0.1, b1=-0.8, b2=0.8, psi1=(0.0, 0.0, 0.01)).affine_stepper() is None
