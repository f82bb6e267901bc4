"""Dense Lindblad engine for small open quantum systems (d <= 8).

Conventions
-----------
* Hamiltonian entries are ordinary frequencies in MHz; generators carry the
  factor 2*pi so that time is in microseconds and rates in 1/us.
* Collapse operators carry their rate as amplitude, ``C = sqrt(rate) * op``.
* Density matrices are vectorized by column stacking,
  ``vec(rho) = rho.reshape(-1, order="F")``, so ``vec(A rho B) = (B.T kron A) vec(rho)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

MAX_DIM = 8
TWO_PI = 2.0 * np.pi

HERMITIAN_TOL = 1e-10
RHO_HERMITIAN_TOL = 1e-12
RHO_TRACE_TOL = 1e-10
RHO_EIG_TOL = 1e-10
GUARD_ABORT = 1e-6
# Segments shorter than this (us) are propagated by a dense exponential.
EXPM_FALLBACK = 1e-3


class QDynError(Exception):
    """Base class for engine errors."""


class DimensionError(QDynError, ValueError):
    pass


class NotHermitianError(QDynError, ValueError):
    pass


class InvalidStateError(QDynError, ValueError):
    pass


class StepSizeUnderflowError(QDynError, RuntimeError):
    pass


class InvariantViolationError(QDynError, RuntimeError):
    pass


class SteadyStateError(QDynError, RuntimeError):
    pass


class MultipleSteadyStatesError(SteadyStateError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``n_points`` times from ``t0`` to ``t1`` (us)."""

    t0: float
    t1: float
    n_points: int

    def __post_init__(self):
        if not (np.isfinite(self.t0) and np.isfinite(self.t1)):
            raise ValueError("time grid bounds must be finite")
        if self.t1 <= self.t0:
            raise ValueError(f"t1 ({self.t1}) must exceed t0 ({self.t0})")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValueError("n_points must be an integer >= 2")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, int(self.n_points))


def as_matrix(a, name="matrix") -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise DimensionError(f"{name} must be a non-empty square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    d = int(round(np.sqrt(v.size)))
    return np.asarray(v).reshape((d, d), order="F")


def basis_projector(d: int, k: int) -> np.ndarray:
    p = np.zeros((d, d), dtype=complex)
    p[k, k] = 1.0
    return p


def ket_bra(d: int, i: int, j: int) -> np.ndarray:
    """Matrix unit ``|i><j|`` in dimension ``d``."""
    m = np.zeros((d, d), dtype=complex)
    m[i, j] = 1.0
    return m


def check_density_matrix(rho, name="rho") -> np.ndarray:
    """Validate a density matrix and return it as a complex array."""
    r = as_matrix(rho, name)
    if np.max(np.abs(r - r.conj().T)) > RHO_HERMITIAN_TOL:
        raise InvalidStateError(f"{name} is not Hermitian")
    tr = np.trace(r)
    if abs(tr - 1.0) > RHO_TRACE_TOL:
        raise InvalidStateError(f"{name} has trace {tr.real:.3g}, expected 1")
    if np.linalg.eigvalsh(0.5 * (r + r.conj().T)).min() < -RHO_EIG_TOL:
        raise InvalidStateError(f"{name} has a negative eigenvalue")
    return r


def liouvillian(H, collapse_ops=()) -> np.ndarray:
    """Build the Lindblad generator acting on column-stacked density matrices.

    Parameters
    ----------
    H : (d, d) array
        Hermitian Hamiltonian, entries in MHz.
    collapse_ops : sequence of (d, d) arrays
        Jump operators with rates absorbed, amplitudes in sqrt(1/us).

    Returns
    -------
    L : (d*d, d*d) complex array
        ``vec(drho/dt) = L @ vec(rho)`` in 1/us.
    """
    H = as_matrix(H, "H")
    d = H.shape[0]
    if d > MAX_DIM:
        raise DimensionError(f"dimension {d} exceeds the supported maximum of {MAX_DIM}")
    if np.max(np.abs(H - H.conj().T)) > HERMITIAN_TOL:
        raise NotHermitianError("Hamiltonian is not Hermitian")
    eye = np.eye(d)
    L = -1j * TWO_PI * (np.kron(eye, H) - np.kron(H.T, eye))
    for k, c in enumerate(collapse_ops):
        c = as_matrix(c, f"collapse_ops[{k}]")
        if c.shape != H.shape:
            raise DimensionError(f"collapse_ops[{k}] has shape {c.shape}, expected {H.shape}")
        cdc = c.conj().T @ c
        L += np.kron(c.conj(), c) - 0.5 * np.kron(eye, cdc) - 0.5 * np.kron(cdc.T, eye)
    return L


def _dim_of(L: np.ndarray) -> int:
    n = L.shape[0]
    d = int(round(np.sqrt(n)))
    if L.ndim != 2 or L.shape[0] != L.shape[1] or d * d != n:
        raise DimensionError(f"superoperator shape {L.shape} is not (d^2, d^2)")
    return d


def trace_defect(L: np.ndarray) -> float:
    """Max-abs entry of ``vec(I)^dagger L``; zero for trace-preserving generators."""
    d = _dim_of(L)
    return float(np.max(np.abs(vec(np.eye(d)).conj() @ L)))


def propagator(L: np.ndarray, t: float) -> np.ndarray:
    """Exact propagator ``exp(L t)`` for a constant generator."""
    return expm(np.asarray(L) * t)


def propagate(rho: np.ndarray, L: np.ndarray, t: float) -> np.ndarray:
    if t == 0:
        return np.array(rho, dtype=complex)
    return unvec(propagator(L, t) @ vec(rho))


# Dormand-Prince 5(4) tableau
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def _dopri_segment(L, y, t0, t1, h, tol):
    """Advance ``y' = L y`` from t0 to t1; returns (y, last accepted step)."""
    t = t0
    span = t1 - t0
    k = np.empty((7, y.size), dtype=complex)
    k[0] = L @ y
    h_prop = h
    while t < t1:
        last = h_prop >= t1 - t
        h = t1 - t if last else h_prop
        if h <= 1e-14 * max(abs(t1), span):
            raise StepSizeUnderflowError(f"step size underflow at t={t:.6g} us")
        for s in range(1, 7):
            k[s] = L @ (y + h * (np.asarray(_A[s]) @ k[:s]))
        y_new = y + h * (_B5 @ k)
        err_vec = h * (_E @ k)
        scale = tol * (1.0 + np.maximum(np.abs(y), np.abs(y_new)))
        err = np.max(np.abs(err_vec) / scale)
        if err <= 1.0:
            t = t1 if last else t + h
            y = y_new
            k[0] = k[6]  # first-same-as-last
            factor = 5.0 if err == 0 else min(5.0, 0.9 * err ** -0.2)
            h_prop = max(h_prop, h * factor) if last else h * factor
        else:
            h_prop = h * max(0.1, 0.9 * err ** -0.25)
    return y, h_prop


def _guard(rho: np.ndarray, t: float) -> np.ndarray:
    herm = 0.5 * (rho + rho.conj().T)
    tr = np.trace(herm).real
    fixed = herm / tr
    correction = np.max(np.abs(fixed - rho))
    if correction > GUARD_ABORT:
        raise InvariantViolationError(
            f"state drifted by {correction:.3g} at t={t:.6g} us (Hermiticity/trace guard)"
        )
    return fixed


def evolve(rho0, L, grid: TimeGrid, tol: float = 1e-9, method: str = "rk45") -> list[np.ndarray]:
    """Integrate the master equation and return the state at every grid time.

    ``method="rk45"`` uses adaptive Dormand-Prince with per-step tolerance
    ``tol``; ``method="expm"`` propagates by exact exponentials. Grids whose
    whole span is shorter than 1 ns always use the exponential.
    """
    rho0 = check_density_matrix(rho0, "rho0")
    L = np.asarray(L, dtype=complex)
    d = _dim_of(L)
    if d != rho0.shape[0]:
        raise DimensionError(f"state dimension {rho0.shape[0]} does not match generator dimension {d}")
    times = grid.times
    if method not in ("rk45", "expm"):
        raise ValueError(f"unknown method {method!r}")
    if grid.t1 - grid.t0 < EXPM_FALLBACK:
        method = "expm"

    out = [rho0.copy()]
    y = vec(rho0).astype(complex)
    if not np.any(L):
        return [rho0.copy() for _ in times]
    if method == "expm":
        step = propagator(L, times[1] - times[0])
        for t in times[1:]:
            y = step @ y
            rho = _guard(unvec(y), t)
            out.append(rho)
            y = vec(rho)
        return out

    norm = np.max(np.abs(L))
    h = 0.1 / norm
    for a, b in zip(times[:-1], times[1:]):
        y, h = _dopri_segment(L, y, a, b, h, tol)
        rho = _guard(unvec(y), b)
        out.append(rho)
        y = vec(rho)
    return out


def steady_state(L) -> np.ndarray:
    """Unique trace-one fixed point of a trace-preserving generator."""
    L = np.asarray(L, dtype=complex)
    d = _dim_of(L)
    if trace_defect(L) > 1e-10:
        raise SteadyStateError("generator is not trace preserving")
    _, s, vh = np.linalg.svd(L)
    scale = max(s[0], 1.0)
    kernel = np.sum(s <= 1e-12 * scale * L.shape[0])
    if kernel > 1:
        raise MultipleSteadyStatesError(f"generator kernel has dimension {kernel}; steady state is not unique")
    v = vh[-1].conj()
    rho = unvec(v)
    tr = np.trace(rho)
    if abs(tr) < 1e-12:
        raise SteadyStateError("no trace-one element in the generator kernel")
    rho = rho / tr
    rho = 0.5 * (rho + rho.conj().T)
    residual = np.linalg.norm(L @ vec(rho))
    if residual > 1e-10 * scale:
        raise SteadyStateError(f"steady-state residual {residual:.3g} too large")
    if np.linalg.eigvalsh(rho).min() < -RHO_EIG_TOL:
        raise SteadyStateError("steady state is not positive semidefinite")
    return rho


def expect(obs, rho) -> float:
    """``Tr(obs rho)`` as a real number."""
    obs = as_matrix(obs, "obs")
    rho = as_matrix(rho, "rho")
    if obs.shape != rho.shape:
        raise DimensionError(f"observable shape {obs.shape} does not match state shape {rho.shape}")
    value = np.trace(obs @ rho)
    if abs(value.imag) > 1e-10:
        raise ValueError(f"expectation value has imaginary part {value.imag:.3g}; observable not Hermitian?")
    return float(value.real)


def populations(rho) -> np.ndarray:
    return np.real(np.diag(rho)).copy()
