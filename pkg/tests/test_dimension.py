import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import quad_beta
from phdim.dimension import (
    beta_integral,
    box_count_dimension,
    box_counts,
    dim_formula,
    estimate_lyapunov,
    formula_report,
)
from phdim.errors import DomainError, InsufficientPoints, SignError
from phdim.maps import BelykhMap, BelykhParams, ParameterRangeWarning


def test_formula_examples():
    d, inv = dim_formula(math.log(1.8), math.log(0.3))
    assert d == pytest.approx(1.488206, abs=1e-6) and inv
    assert dim_formula(math.log(1.8), math.log(0.5)).dimension == pytest.approx(1.847997, abs=1e-6)
    d, inv = dim_formula(math.log(2), -math.log(2))
    assert d == 2.0 and inv


def test_formula_clamps_and_flags_non_invertible():
    d, inv = dim_formula(1.0, -0.5)
    assert d == 2.0 and not inv


@pytest.mark.parametrize("bad", [(0.0, -1.0), (1.0, 0.0), (-1.0, -1.0), (1.0, 1.0)])
def test_formula_sign_errors(bad):
    with pytest.raises(SignError):
        dim_formula(*bad)


@given(st.floats(1e-3, 10), st.floats(-10, -1e-3), st.floats(1e-3, 1e3))
def test_formula_scale_invariant(cu, cs, c):
    assert dim_formula(c * cu, c * cs).dimension == pytest.approx(dim_formula(cu, cs).dimension, rel=1e-12)


def test_formula_report_fields():
    rep = formula_report(math.log(1.8), math.log(0.3)).to_dict()
    assert rep["method"] == "formula" and rep["diagnostics"]["invertible"] is True


def test_lyapunov_exact_for_constant_jacobians(fig, remark):
    est = estimate_lyapunov(fig, 1000, seed=0)
    assert est.chi_u == pytest.approx(math.log(1.8), abs=1e-9)
    assert est.chi_s == pytest.approx(math.log(0.3), abs=1e-9)
    est = estimate_lyapunov(remark, 1000, seed=0)
    assert (est.chi_u, est.chi_s) == pytest.approx((math.log(2), -math.log(2)), abs=1e-9)


def test_lyapunov_perturbed():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ParameterRangeWarning)
        spec = BelykhMap(BelykhParams.standard(psi1=(0.0, 0.0, 0.01)))
    a = estimate_lyapunov(spec, 2000, seed=1)
    b = estimate_lyapunov(spec, 2000, seed=2)
    for est in (a, b):
        assert est.chi_u == pytest.approx(math.log(1.8), abs=0.01)
        assert est.chi_s == pytest.approx(math.log(0.3), abs=0.01)
        assert est.chi_s < 0 < est.chi_u
    se = math.hypot(a.stderr[0], b.stderr[0])
    assert abs(a.chi_u - b.chi_u) <= 3 * se + 1e-12


def test_lyapunov_deterministic(fig):
    assert estimate_lyapunov(fig, 1000, seed=4).to_dict() == estimate_lyapunov(fig, 1000, seed=4).to_dict()
    with pytest.raises(ValueError):
        estimate_lyapunov(fig, 10)


def test_box_counts_by_hand():
    pts = np.array([[-0.99, -0.99], [0.99, 0.99], [-0.98, -0.98]])
    assert box_counts(pts, [1, 2, 8]) == [2, 2, 3]


def test_boxcount_segment():
    t = np.random.default_rng(0).uniform(-0.7, 0.7, 100_000)
    pts = np.column_stack([t, 0.3 * t])
    assert box_count_dimension(pts).value == pytest.approx(1.0, abs=0.05)


def test_boxcount_uniform_square():
    # 10^6 points fill the 2^18 cells of level 8 but only 61% of level 9
    pts = np.random.default_rng(1).uniform(-1, 1, (1_000_000, 2))
    assert box_count_dimension(pts, 4, 8).value == pytest.approx(2.0, abs=0.05)
    assert box_count_dimension(pts, 4, 9).value < 1.95


def test_boxcount_translation_robust():
    rng = np.random.default_rng(2)
    t = rng.uniform(-0.7, 0.7, 100_000)
    for pts in (np.column_stack([t, 0.3 * t]), rng.uniform(-0.9, 0.9, (1_000_000, 2))):
        a = box_count_dimension(pts).value
        b = box_count_dimension(pts + 1e-3).value
        assert abs(a - b) < 0.02


def test_boxcount_saturation_guard():
    pts = np.random.default_rng(3).uniform(-1, 1, (100_000, 2))
    rep = box_count_dimension(pts, 4, 12)
    assert rep.diagnostics["levels_fitted"][-1] < 12


def test_boxcount_errors():
    with pytest.raises(InsufficientPoints):
        box_count_dimension(np.zeros((10, 2)))
    with pytest.raises(ValueError):
        box_count_dimension(np.zeros((200_000, 2)), 5, 5)


@pytest.mark.parametrize("s", [1.5, 2.0, 2.5, 3.0, 1.1, 4.7])
def test_beta_matches_quadrature(s):
    assert beta_integral(s) == pytest.approx(quad_beta(s), abs=1e-8)


def test_beta_examples():
    assert beta_integral(2.0) == pytest.approx(math.pi / 2, abs=1e-12)
    assert beta_integral(3.0) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(DomainError):
        beta_integral(1.0)
