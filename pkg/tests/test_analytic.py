import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chemcompass import FieldDirection, RadicalPairModel, singlet_yield_resolvent, singlet_yields
from chemcompass.analytic import (
    AnalyticParams,
    effective_field,
    g,
    regime1_approx,
    weakfield_sensitivity,
    yield_avg,
    yield_branch,
)
from chemcompass.dynamics import yield_from_hamiltonian
from chemcompass.model import electron_spin_sum, singlet_vector

from conftest import OMEGA_46, thetas

GRID19 = np.linspace(0, math.pi, 19)


def test_g_values():
    assert g(0.0, 0.7) == 1.0
    assert g(0.7, 0.7) == 0.5
    assert g(2.0, 1.0) == pytest.approx(0.2)


def test_effective_field_examples():
    f = effective_field(0.0, 1.0, 0.5)
    assert f.B1 == pytest.approx(1.5) and f.theta_p == 0.0 and not f.degenerate
    f = effective_field(math.pi / 2, 3.0, 4.0)
    assert f.B1 == pytest.approx(5.0) and math.sin(f.theta_p) == pytest.approx(0.6)
    f = effective_field(0.0, 1.0, -1.0)
    assert f.B1 == 0.0 and f.degenerate
    with pytest.raises(ValueError):
        effective_field(0.0, -1.0, 0.0)


@given(thetas, st.floats(0, 20), st.floats(-20, 20))
def test_effective_field_invariants(theta, B, b):
    f = effective_field(theta, B, b)
    assert f.B1 ** 2 == pytest.approx((B * math.cos(theta) + b) ** 2 + (B * math.sin(theta)) ** 2, rel=1e-12,
                                      abs=1e-12)
    if f.B1 > 1e-6:
        assert math.sin(f.theta_p) == pytest.approx(B * math.sin(theta) / f.B1, abs=1e-9)
        assert math.cos(f.theta_p) == pytest.approx((B * math.cos(theta) + b) / f.B1, abs=1e-9)


def test_branch_theta0_and_no_coupling():
    p = AnalyticParams(8.1, 2.0, 0.5)
    assert yield_branch(0.0, 1.0, p) == pytest.approx(0.5 + 0.5 * g(1.0, 0.5))
    np.testing.assert_allclose(yield_branch(GRID19, 0.0, p), 1.0, atol=1e-14)
    np.testing.assert_allclose(yield_avg(GRID19, AnalyticParams(8.1, 0.0, 0.5)), 1.0, atol=1e-14)


def test_branch_matches_four_level_resolvent():
    # electron 2 alone sees the extra static field b along z
    B, b, k = 8.100, 1.35, 0.5
    s = electron_spin_sum((2, 2))
    h = B * s[0] + b * np.kron(np.eye(2), np.diag([0.5, -0.5]))
    sv = singlet_vector()
    ref = yield_from_hamiltonian(h, np.outer(sv, sv), np.outer(sv, sv), k)
    assert yield_branch(math.pi / 2, b, AnalyticParams(B, 2 * b, k)) == pytest.approx(ref, abs=1e-8)


def test_regime2_sensitivity():
    vals = yield_avg(np.linspace(0, math.pi / 2, 181), AnalyticParams(OMEGA_46, OMEGA_46 / 3, 0.5))
    assert vals.max() - vals.min() == pytest.approx(0.4, abs=0.03)


def test_theta_reflection_swaps_branches():
    p = AnalyticParams(OMEGA_46, 3.0, 0.5)
    np.testing.assert_allclose(yield_branch(math.pi - GRID19, 1.5, p), yield_branch(GRID19, -1.5, p), atol=1e-12)
    np.testing.assert_allclose(yield_avg(math.pi - GRID19, p), yield_avg(GRID19, p), atol=1e-12)


@given(thetas, st.floats(0, 30), st.floats(0, 60), st.floats(0.05, 5))
def test_range_and_symmetry(theta, B, a, k):
    p = AnalyticParams(B, a, k)
    v = yield_avg(theta, p)
    assert -1e-12 <= v <= 1 + 1e-12
    assert v == pytest.approx(yield_avg(math.pi - theta, p), abs=1e-12)


@pytest.mark.parametrize("ratio", [0.1, 1 / 3, 1.0, 3.0, 10.0])
@pytest.mark.parametrize("k", [0.25, 0.5, 2.0])
def test_oracle_equivalence(ratio, k):
    m = RadicalPairModel.one_nucleus(46.0, k, ratio * OMEGA_46)
    closed = yield_avg(GRID19, AnalyticParams(m.omega_B, ratio * OMEGA_46, k))
    numeric = np.array([singlet_yield_resolvent(m, FieldDirection(t), "solve") for t in GRID19])
    assert np.max(np.abs(closed - numeric)) < 1e-8


def test_degenerate_branch_delegated():
    # b = -B cos(theta) with sin(theta) = 0 leaves electron 2 field-free
    p = AnalyticParams(1.0, 2.0, 0.5)
    info = yield_branch(np.array([0.0, 0.5]), -1.0, p, with_info=True)
    assert list(info.delegated) == [True, False]
    assert info.value[0] == pytest.approx(0.5 + 0.5 * g(1.0, 0.5), abs=1e-12)
    m = RadicalPairModel.one_nucleus(1.0 / 0.1760860, 0.5, 2.0)
    assert yield_avg(0.0, p) == pytest.approx(singlet_yield_resolvent(m, FieldDirection(0.0)), abs=1e-10)


def test_regime1_formula():
    assert regime1_approx(0.0) == 0.5
    assert regime1_approx(math.pi / 2) == pytest.approx(0.25)
    assert regime1_approx(math.pi / 4) == pytest.approx(3 / 8)


@given(thetas)
def test_large_coupling_approaches_regime1(theta):
    k, B = 0.5, OMEGA_46
    for a in (200.0, 2000.0):
        p = AnalyticParams(B, a, k)
        # the branch fields approach a/2 so the residual tracks g(a/2) and B/a
        assert abs(yield_avg(theta, p) - regime1_approx(theta)) <= g(a / 2, k) / 2 + 2 * B / a


def test_weakfield_formula():
    assert weakfield_sensitivity(0.0, 0.5) == 0.0
    assert weakfield_sensitivity(0.5, 0.5) == pytest.approx(1 / 8)
    assert weakfield_sensitivity(1e6, 0.5) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        weakfield_sensitivity(1.0, 0.0)


def test_analytic_matches_vectorized_resolvent():
    m = RadicalPairModel.one_nucleus(46.0, 0.5, 2.0)
    np.testing.assert_allclose(yield_avg(GRID19, AnalyticParams(m.omega_B, 2.0, 0.5)),
                               singlet_yields(m, GRID19), atol=1e-12)
