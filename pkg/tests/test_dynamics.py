import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from chemcompass import (
    DephasingSpec,
    FieldDirection,
    RadicalPairModel,
    build_liouvillian,
    dephasing_operators,
    initial_state,
    propagate,
    singlet_projector,
    singlet_yield_quadrature,
    singlet_yield_resolvent,
    singlet_yields,
)
from chemcompass.dynamics import (
    PropagationResult,
    clamp_yield,
    model_liouvillian,
)
from chemcompass.spin import unvec, vec

from conftest import OMEGA_46, couplings, phis, random_hermitian, rates, thetas


def _matrix_units(n):
    for i in range(n):
        for j in range(n):
            e = np.zeros((n, n), dtype=complex)
            e[i, j] = 1
            yield e


def test_zero_generator():
    assert not np.any(build_liouvillian(np.zeros((4, 4))).matrix)


def test_diagonal_hamiltonian_coherences():
    h = np.diag([0.3, -1.1, 2.0])
    lv = build_liouvillian(h)
    for e in _matrix_units(3):
        i, j = np.argwhere(e)[0]
        np.testing.assert_allclose(lv.apply(e), -1j * (h[i, i] - h[j, j]) * e, atol=1e-14)


@pytest.mark.parametrize("d", [0.0, 0.8, 1.0, -1.0, 2.5])
def test_dissipator_matches_hand_expansion(d):
    # DERIVED oracle: apply the generator to each matrix unit and compare with
    # 1/4 sum(2 L rho L^+ - L^+ L rho - rho L^+ L) written out directly
    ops = dephasing_operators(DephasingSpec(1.3, d), (2, 2))
    lv = build_liouvillian(np.zeros((4, 4)), ops)
    assert lv.includes_dephasing
    for e in _matrix_units(4):
        ref = sum(0.25 * (2 * L @ e @ L.conj().T - L.conj().T @ L @ e - e @ L.conj().T @ L) for L in ops)
        np.testing.assert_allclose(lv.apply(e), ref, atol=1e-14)


def test_uncorrelated_dephasing_keeps_populations():
    ops = dephasing_operators(DephasingSpec(1.0, 0.0), (2, 2))
    lv = build_liouvillian(np.zeros((4, 4)), ops)
    signature = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    for e in _matrix_units(4):
        i, j = np.argwhere(e)[0]
        out = lv.apply(e)
        if i == j:
            assert not np.any(out)
        else:
            assert out[i, j].real < 0
            assert signature[i] != signature[j]


@given(st.integers(0, 2**16), st.floats(0, 3), st.floats(-1.5, 1.5))
def test_generator_trace_and_adjoint(seed, gamma, d):
    rng = np.random.default_rng(seed)
    dims = (2, 2, 2)
    h = random_hermitian(rng, 8)
    lv = build_liouvillian(h, dephasing_operators(DephasingSpec(gamma, d), dims))
    for _ in range(4):
        rho = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        out = lv.apply(rho)
        assert abs(np.trace(out)) < 1e-10
        np.testing.assert_allclose(lv.apply(rho.conj().T), out.conj().T, atol=1e-10)


def test_build_liouvillian_errors():
    with pytest.raises(ValueError):
        build_liouvillian(np.array([[0, 1], [0, 0]]))
    with pytest.raises(ValueError):
        build_liouvillian(np.eye(4), [np.eye(2)])


@given(thetas, st.floats(0.1, 5))
def test_no_hyperfine_yield_is_one(theta, k):
    assert singlet_yield_resolvent(RadicalPairModel.one_nucleus(46.0, k, 0.0), FieldDirection(theta)) == pytest.approx(1.0, abs=1e-12)


def test_zeno_regime():
    m = RadicalPairModel.one_nucleus(46.0, 100.0, OMEGA_46 / 3)
    assert np.all(singlet_yields(m, np.linspace(0, np.pi, 37)) >= 0.98)


def test_large_coupling_theta0():
    m = RadicalPairModel.one_nucleus(46.0, 0.5, 10 * OMEGA_46)
    assert singlet_yield_resolvent(m, FieldDirection(0.0)) == pytest.approx(0.5, abs=0.01)


@given(couplings, rates, thetas, st.floats(0, 3), st.floats(-1, 1))
@settings(max_examples=25)
def test_solve_and_spectral_agree(a, k, theta, gamma, d):
    m = RadicalPairModel.one_nucleus(46.0, k, a)
    solve = singlet_yield_resolvent(m, FieldDirection(theta), "solve")
    assert solve == pytest.approx(singlet_yield_resolvent(m, FieldDirection(theta), "spectral"), abs=1e-10)
    md = m.with_dephasing(gamma, d)
    assert 0.0 <= singlet_yield_resolvent(md, FieldDirection(theta)) <= 1.0
    with pytest.raises(ValueError):
        singlet_yield_resolvent(m.with_dephasing(1.0), FieldDirection(theta), "spectral")


@given(couplings, rates, thetas, st.floats(0, 2))
@settings(max_examples=25)
def test_field_sign_invariance(a, k, theta, gamma):
    # -B n is the same as +B along the direction (pi - theta, phi + pi)
    m = RadicalPairModel.one_nucleus(46.0, k, a, gamma=gamma, d=0.3)
    plus = singlet_yield_resolvent(m, FieldDirection(theta))
    minus = singlet_yield_resolvent(m, FieldDirection(math.pi - theta, math.pi))
    assert plus == pytest.approx(minus, abs=1e-8)


@given(couplings, rates, thetas, phis)
@settings(max_examples=25)
def test_phi_invariance_axial(a, k, theta, phi):
    m = RadicalPairModel.one_nucleus(46.0, k, a)
    assert singlet_yield_resolvent(m, FieldDirection(theta, phi)) == pytest.approx(
        singlet_yield_resolvent(m, FieldDirection(theta)), abs=1e-8)


@given(couplings, rates, thetas, st.floats(0, 2), st.floats(-1, 1))
@settings(max_examples=25)
def test_theta_reflection_symmetry(a, k, theta, gamma, d):
    m = RadicalPairModel.one_nucleus(46.0, k, a, gamma=gamma, d=d)
    assert singlet_yield_resolvent(m, FieldDirection(theta)) == pytest.approx(
        singlet_yield_resolvent(m, FieldDirection(math.pi - theta)), abs=1e-8)


def test_clamp_yield():
    assert clamp_yield(1 + 1e-12) == 1.0
    assert clamp_yield(-1e-12) == 0.0
    assert clamp_yield(0.3) == 0.3


@pytest.mark.parametrize("gamma,d", [(0.0, 0.0), (0.7, 0.0), (1.5, 1.0)])
def test_propagate_matches_matrix_exponential(regime2, gamma, d):
    # DERIVED oracle: exp(L t) via eigendecomposition of the 64x64 generator
    m = regime2.with_dephasing(gamma, d)
    direction = FieldDirection(0.7)
    lv = model_liouvillian(m, direction).matrix
    w, v = np.linalg.eig(lv)
    vinv = np.linalg.inv(v)
    rho0 = vec(initial_state(m))
    p = vec(singlet_projector(m))
    res = propagate(m, direction, t_end=2.0, sample_dt=0.5)
    for t, f in zip(res.times, res.singlet):
        ref = np.real(np.vdot(p, v @ (np.exp(w * t) * (vinv @ rho0))))
        assert f == pytest.approx(ref, abs=1e-8)
    np.testing.assert_allclose(unvec(expm(lv * 2.0) @ rho0), res.final_state, atol=1e-8)


def test_propagate_state_invariants(regime2):
    for m in (regime2, regime2.with_dephasing(1.0, 0.0)):
        res = propagate(m, FieldDirection(1.1), t_end=4.0, sample_dt=0.25, store_states=True)
        assert res.singlet[0] == pytest.approx(1.0, abs=1e-14)
        purity0 = np.trace(res.states[0] @ res.states[0]).real
        for rho in res.states:
            assert abs(np.trace(rho) - 1) < 1e-8
            assert np.max(np.abs(rho - rho.conj().T)) < 1e-10
            assert np.min(np.linalg.eigvalsh((rho + rho.conj().T) / 2)) > -1e-8
            if not m.dephasing.active:
                assert abs(np.trace(rho @ rho).real - purity0) < 1e-8
        assert np.all((res.singlet > -1e-9) & (res.singlet < 1 + 1e-9))


def test_propagate_fixed_step_matches_adaptive(regime2):
    d = FieldDirection(0.4)
    a = propagate(regime2, d, t_end=3.0, sample_dt=0.5)
    b = propagate(regime2, d, t_end=3.0, sample_dt=0.5, method="fixed")
    np.testing.assert_allclose(a.singlet, b.singlet, atol=1e-8)
    assert np.array_equal(b.singlet, propagate(regime2, d, t_end=3.0, sample_dt=0.5, method="fixed").singlet)


def test_propagate_rejects_bad_arguments(regime2):
    with pytest.raises(ValueError):
        propagate(regime2, FieldDirection(0.0), t_end=0.0)
    with pytest.raises(ValueError):
        propagate(regime2, FieldDirection(0.0), t_end=1.0, method="euler")


def test_propagate_vs_resolvent_19_angles(regime2):
    # fixed RK4 at the bounding step; the adaptive integrator is spot-checked below
    for m in (regime2, regime2.with_dephasing(0.5, 0.0)):
        grid = np.linspace(0, math.pi, 19)
        exact = singlet_yields(m, grid)
        for theta, ref in zip(grid, exact):
            res = propagate(m, FieldDirection(theta), sample_dt=0.01, method="fixed")
            q = singlet_yield_quadrature(res, m.k)
            assert q.value == pytest.approx(ref, abs=1e-6)
            assert q.error < 1e-4


def test_adaptive_propagation_matches_resolvent(regime2):
    m = regime2.with_dephasing(0.5, 1.0)
    res = propagate(m, FieldDirection(1.0), sample_dt=0.01)
    q = singlet_yield_quadrature(res, m.k)
    assert q.value == pytest.approx(singlet_yields(m, [1.0])[0], abs=1e-6)


def _flat(value, k, t_end, n=2001):
    t = np.linspace(0, t_end, n)
    return PropagationResult(t, np.full(n, value), np.eye(4) / 4)


def test_quadrature_constant_signals():
    k = 0.5
    one = singlet_yield_quadrature(_flat(1.0, k, 14 / k), k)
    assert one.value == pytest.approx(1 - math.exp(-14), abs=1e-10)
    assert abs(one.value - 1) <= one.error
    assert singlet_yield_quadrature(_flat(0.0, k, 14 / k), k).value == 0.0
    with pytest.raises(ValueError):
        singlet_yield_quadrature(_flat(1.0, k, 10.0), k)


def test_csv_dump(tmp_path, regime2):
    res = propagate(regime2, FieldDirection(0.0), t_end=1.0, sample_dt=0.5)
    path = tmp_path / "trace.csv"
    res.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t_us,f_S"
    assert len(lines) == 4
    assert float(lines[-1].split(",")[1]) == res.singlet[-1]
