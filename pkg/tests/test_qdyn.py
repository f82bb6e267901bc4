import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from spinpairsim import qdyn
from spinpairsim.qdyn import TimeGrid

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.diag([1.0, -1.0]).astype(complex)


def random_lindbladian(rng, d, n_ops=2):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    H = 0.5 * (a + a.conj().T)
    ops = [0.5 * (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) for _ in range(n_ops)]
    return qdyn.liouvillian(H, ops)


def random_state(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def test_zero_generator():
    assert np.all(qdyn.liouvillian(np.zeros((3, 3))) == 0)


def test_decay_spectrum():
    L = qdyn.liouvillian(np.zeros((2, 2)), [qdyn.ket_bra(2, 0, 1)])
    ev = np.sort_complex(np.linalg.eigvals(L))
    np.testing.assert_allclose(ev, [-1, -0.5, -0.5, 0], atol=1e-12)
    # rho_11 decays at rate 1, coherences at rate 1/2
    rho = np.array([[0, 1], [1, 1]], dtype=complex) / 1
    d = qdyn.unvec(L @ qdyn.vec(rho))
    assert d[1, 1] == pytest.approx(-1.0)
    assert d[0, 1] == pytest.approx(-0.5)


def test_rabi_generator_spectrum():
    L = qdyn.liouvillian(0.5 * 10.0 * SX)
    assert np.allclose(L, -L.conj().T)
    ev = np.linalg.eigvals(L)
    assert np.max(np.abs(ev.real)) < 1e-10
    np.testing.assert_allclose(np.sort(ev.imag), [-2 * np.pi * 10, 0, 0, 2 * np.pi * 10], atol=1e-9)


def test_vectorization_is_column_stacking():
    rng = np.random.default_rng(1)
    A, B, R = (rng.normal(size=(3, 3)) for _ in range(3))
    assert np.allclose(qdyn.vec(A @ R @ B), np.kron(B.T, A) @ qdyn.vec(R))
    assert np.array_equal(qdyn.vec(np.array([[1, 2], [3, 4]])), [1, 3, 2, 4])


def test_liouvillian_errors():
    with pytest.raises(qdyn.NotHermitianError):
        qdyn.liouvillian(np.array([[0, 1], [0, 0]]))
    with pytest.raises(qdyn.DimensionError):
        qdyn.liouvillian(np.eye(2), [np.eye(3)])
    with pytest.raises(qdyn.DimensionError):
        qdyn.liouvillian(np.eye(9))
    with pytest.raises(qdyn.DimensionError):
        qdyn.liouvillian(np.ones((2, 3)))
    with pytest.raises(ValueError):
        qdyn.liouvillian(np.array([[np.nan, 0], [0, 0]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(0, 3), st.integers(0, 2 ** 32 - 1))
def test_trace_preservation(d, n_ops, seed):
    L = random_lindbladian(np.random.default_rng(seed), d, n_ops)
    assert qdyn.trace_defect(L) < 1e-10


def test_evolve_constant_for_zero_generator():
    rho = random_state(np.random.default_rng(3), 3)
    traj = qdyn.evolve(rho, np.zeros((9, 9)), TimeGrid(0, 5, 7))
    assert len(traj) == 7
    for r in traj:
        assert np.array_equal(r, rho)


def test_evolve_rabi_closed_form():
    L = qdyn.liouvillian(0.5 * 10.0 * SX)
    grid = TimeGrid(0, 0.3, 61)
    traj = qdyn.evolve(np.diag([1.0, 0.0]), L, grid)
    p1 = np.array([r[1, 1].real for r in traj])
    np.testing.assert_allclose(p1, np.sin(np.pi * 10 * grid.times) ** 2, atol=1e-7)
    assert traj[10][1, 1].real == pytest.approx(1.0, abs=1e-8)  # t = 0.05 us


def test_evolve_decay_closed_form():
    L = qdyn.liouvillian(np.zeros((2, 2)), [qdyn.ket_bra(2, 0, 1)])
    traj = qdyn.evolve(np.diag([0.0, 1.0]), L, TimeGrid(0, 1, 11))
    assert traj[-1][1, 1].real == pytest.approx(np.exp(-1), abs=1e-8)
    assert traj[-1][1, 1].real == pytest.approx(0.3679, abs=5e-5)


@pytest.mark.parametrize("method", ["rk45", "expm"])
def test_evolve_matches_exponential(method):
    rng = np.random.default_rng(11)
    for d in (2, 3, 4):
        L = random_lindbladian(rng, d)
        rho = random_state(rng, d)
        traj = qdyn.evolve(rho, L, TimeGrid(0, 1.3, 5), method=method)
        ref = qdyn.unvec(expm(L * 1.3) @ qdyn.vec(rho))
        assert np.max(np.abs(traj[-1] - ref)) < 1e-7


def test_evolve_short_span_uses_exponential():
    L = random_lindbladian(np.random.default_rng(5), 3)
    rho = random_state(np.random.default_rng(6), 3)
    traj = qdyn.evolve(rho, L, TimeGrid(0, 5e-4, 3))
    ref = qdyn.unvec(expm(L * 5e-4) @ qdyn.vec(rho))
    assert np.max(np.abs(traj[-1] - ref)) < 1e-12


def test_positivity_along_trajectory():
    rng = np.random.default_rng(8)
    for d in (2, 3, 4):
        L = random_lindbladian(rng, d, 3)
        for r in qdyn.evolve(random_state(rng, d), L, TimeGrid(0, 3, 31)):
            assert np.linalg.eigvalsh(r).min() >= -1e-8
            assert abs(np.trace(r) - 1) < 1e-10


def test_evolve_rejects_bad_state():
    L = np.zeros((4, 4))
    with pytest.raises(qdyn.InvalidStateError):
        qdyn.evolve(np.diag([0.5, 0.4]), L, TimeGrid(0, 1, 2))
    with pytest.raises(qdyn.InvalidStateError):
        qdyn.evolve(np.array([[0.5, 0.1], [0.0, 0.5]]), L, TimeGrid(0, 1, 2))
    with pytest.raises(qdyn.InvalidStateError):
        qdyn.evolve(np.diag([1.5, -0.5]), L, TimeGrid(0, 1, 2))
    with pytest.raises(qdyn.DimensionError):
        qdyn.evolve(np.diag([1.0, 0, 0]), L, TimeGrid(0, 1, 2))


def test_guard_aborts_on_non_trace_preserving_generator():
    L = -np.eye(4, dtype=complex)
    with pytest.raises(qdyn.InvariantViolationError):
        qdyn.evolve(np.diag([1.0, 0.0]), L, TimeGrid(0, 1, 3))


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(1, 1, 3)
    with pytest.raises(ValueError):
        TimeGrid(0, 1, 1)
    with pytest.raises(ValueError):
        TimeGrid(0, np.inf, 3)
    np.testing.assert_allclose(TimeGrid(0, 1, 5).times, [0, 0.25, 0.5, 0.75, 1])


def test_steady_state_decay():
    L = qdyn.liouvillian(np.zeros((2, 2)), [qdyn.ket_bra(2, 0, 1)])
    np.testing.assert_allclose(qdyn.steady_state(L), np.diag([1.0, 0.0]), atol=1e-12)


def test_steady_state_driven_two_level():
    gamma = 2 * np.pi * 1.0
    L = qdyn.liouvillian(0.5 * 1.0 * SX, [np.sqrt(gamma) * qdyn.ket_bra(2, 0, 1)])
    rho = qdyn.steady_state(L)
    w = 2 * np.pi * 1.0
    assert rho[1, 1].real == pytest.approx(w ** 2 / (2 * w ** 2 + gamma ** 2), abs=1e-12)
    assert rho[1, 1].real == pytest.approx(1 / 3, abs=1e-12)
    long = qdyn.evolve(np.diag([1.0, 0.0]), L, TimeGrid(0, 20, 3))[-1]
    assert np.max(np.abs(long - rho)) < 1e-8


def test_steady_state_degenerate():
    with pytest.raises(qdyn.MultipleSteadyStatesError):
        qdyn.steady_state(np.zeros((4, 4)))


def test_steady_state_requires_trace_preservation():
    with pytest.raises(qdyn.SteadyStateError):
        qdyn.steady_state(-np.eye(4))


def test_steady_state_consistency_with_evolution():
    rng = np.random.default_rng(21)
    L = random_lindbladian(rng, 3, 3)
    rho_ss = qdyn.steady_state(L)
    ev = np.linalg.eigvals(L)
    gap = np.min(np.abs(ev.real[np.abs(ev) > 1e-9]))
    t = 50 / gap
    for _ in range(5):
        r = qdyn.evolve(random_state(rng, 3), L, TimeGrid(0, t, 2), method="expm")[-1]
        dist = 0.5 * np.abs(np.linalg.eigvalsh(r - rho_ss)).sum()
        assert dist < 1e-6


def test_expect():
    rho = np.diag([0.0, 1.0]).astype(complex)
    assert qdyn.expect(np.eye(2), rho) == pytest.approx(1.0)
    assert qdyn.expect(np.diag([0, 1]), rho) == pytest.approx(1.0)
    assert qdyn.expect(SZ, np.eye(2) / 2) == pytest.approx(0.0)
    with pytest.raises(qdyn.DimensionError):
        qdyn.expect(np.eye(3), rho)
