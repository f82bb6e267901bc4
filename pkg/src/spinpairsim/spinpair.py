"""Three-level spin-pair model and protocol-level experiment simulators.

Basis ordering: ``|0> = |S0>`` (both electrons on one defect),
``|1> = |S,T0>`` and ``|2> = |T+->`` (electrons on different defects).

All pulsed protocols are evaluated in the frame rotating with the microwave
drive. Because every dissipator of the model is a single matrix unit, the
detuning term ``detuning |2><2|`` commutes with the dissipative part; free
evolution is therefore propagated with the drive-free generator followed by
an exact frame rotation of the |2> coherences.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from . import qdyn
from .fitting import FitResult, lm_fit
from .pulses import (
    LASER_DURATION,
    CPMG_PI_PHASE,
    Kind,
    PulseSegment,
    PulseSequence,
    compile_sequence,
    cpmg_seq,
    hahn_seq,
    pi_time,
    rabi_seq,
    ramsey_seq,
    t1_seq,
)

S0, ST0, TPM = 0, 1, 2
DIM = 3
# Bohr magneton over Planck constant, MHz per Gauss (CODATA).
MU_B_OVER_H = 1.3996245


@dataclass(frozen=True)
class ReadoutWeights:
    """Relative PL emission of |S0>, |S,T0>, |T+->."""

    w0: float = 0.8
    w1: float = 1.0
    w2: float = 1.2

    def __post_init__(self):
        w = self.as_array()
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("readout weights must be finite and >= 0")
        if self.w0 == self.w1 == self.w2:
            raise ValueError("readout weights must not all be equal")

    def as_array(self) -> np.ndarray:
        return np.array([self.w0, self.w1, self.w2], dtype=float)

    def intensity(self, rho) -> float:
        return float(self.as_array() @ qdyn.populations(rho))

    @property
    def contrast_bound(self) -> float:
        w = self.as_array()
        return (w.max() - w.min()) / w.min()


@dataclass(frozen=True)
class SpinPairParams:
    """Model constants: frequencies in MHz, rates in 1/us."""

    omega: float = 10.0
    detuning: float = 0.0
    gamma_10: float = 10.0
    gamma_20: float = 1.0
    gamma_phi: float = 1.0
    pump_rate: float = 1.0
    dark_recovery_rate: float = 5e-4
    weights: ReadoutWeights = field(default_factory=ReadoutWeights)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            object.__setattr__(self, "weights", ReadoutWeights(**self.weights))
        for name in ("omega", "gamma_10", "gamma_20", "gamma_phi", "pump_rate", "dark_recovery_rate"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if not math.isfinite(self.detuning):
            raise ValueError("detuning must be finite")
        if self.dark_recovery_rate > self.pump_rate:
            raise ValueError("dark_recovery_rate must not exceed pump_rate")

    def replace(self, **changes) -> "SpinPairParams":
        return replace(self, **changes)


@dataclass
class ContrastTrace:
    """Contrast C(x); ``unit`` is one of us, ns, MHz, N."""

    x: np.ndarray
    contrast: np.ndarray
    unit: str = "us"
    sigma: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.contrast = np.asarray(self.contrast, dtype=float)
        if self.x.shape != self.contrast.shape or self.x.ndim != 1:
            raise ValueError("x and contrast must be 1-D arrays of equal length")
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float)
            if self.sigma.shape != self.x.shape:
                raise ValueError("sigma must match x in length")
        if self.x.size > 1 and np.any(np.diff(self.x) <= 0):
            raise ValueError("x must be strictly increasing")


@dataclass(frozen=True)
class GFactorData:
    field_points: np.ndarray
    frequencies: np.ndarray
    sigma: np.ndarray | None = None

    def __post_init__(self):
        b = np.asarray(self.field_points, dtype=float)
        f = np.asarray(self.frequencies, dtype=float)
        if b.shape != f.shape or b.ndim != 1 or b.size < 2:
            raise ValueError("need at least two (field, frequency) pairs of equal length")
        if np.unique(b).size != b.size:
            raise ValueError("field points must be distinct")
        object.__setattr__(self, "field_points", b)
        object.__setattr__(self, "frequencies", f)


def polarized_state() -> np.ndarray:
    """|S,T0><S,T0|, the optically polarized starting state."""
    return qdyn.basis_projector(DIM, ST0)


def hamiltonian(params: SpinPairParams, mw_on: bool, amplitude=1.0, phase=0.0) -> np.ndarray:
    H = np.zeros((DIM, DIM), dtype=complex)
    if mw_on:
        half = 0.5 * params.omega * amplitude
        H[ST0, TPM] = half * np.exp(-1j * phase)
        H[TPM, ST0] = half * np.exp(1j * phase)
        H[TPM, TPM] = params.detuning
    return H


def collapse_ops(params: SpinPairParams, laser_on: bool) -> list[np.ndarray]:
    kb = qdyn.ket_bra
    ops = [
        math.sqrt(params.gamma_10) * kb(DIM, S0, ST0),
        math.sqrt(params.gamma_20) * kb(DIM, S0, TPM),
        math.sqrt(params.gamma_phi) * kb(DIM, TPM, ST0),
        math.sqrt(params.gamma_phi) * kb(DIM, ST0, TPM),
    ]
    refill = params.pump_rate if laser_on else params.dark_recovery_rate
    ops.append(math.sqrt(refill) * kb(DIM, ST0, S0))
    return ops


def build_liouvillian(params: SpinPairParams, mw_on: bool, laser_on: bool,
                      amplitude=1.0, phase=0.0) -> np.ndarray:
    """Generator of the spin-pair model for one set of drive conditions.

    With the microwave on, the drive couples |1> and |2> with Rabi frequency
    ``omega * amplitude`` and phase ``phase`` (``cos(phase) sx + sin(phase) sy``
    in the {1, 2} subspace) and |2> carries the detuning.
    """
    return qdyn.liouvillian(hamiltonian(params, mw_on, amplitude, phase), collapse_ops(params, laser_on))


def contrast_from_state(rho, rho_ref, weights: ReadoutWeights) -> float:
    """``(I - I_ref) / I_ref`` with ``I`` the weighted population sum."""
    i_ref = weights.intensity(rho_ref)
    if not i_ref > 0:
        raise ZeroDivisionError("reference PL intensity is zero")
    return (weights.intensity(rho) - i_ref) / i_ref


@lru_cache(maxsize=8192)
def _segment_propagator(params, mw_on, laser_on, amplitude, phase, duration):
    L = build_liouvillian(params, mw_on, laser_on, amplitude, phase)
    return qdyn.propagator(L, duration)


@lru_cache(maxsize=1024)
def _window_integral(params, duration):
    """Integral of exp(L_laser s) ds over the readout window (Van Loan block trick)."""
    L = build_liouvillian(params, False, True)
    n = L.shape[0]
    block = np.zeros((2 * n, 2 * n), dtype=complex)
    block[:n, :n] = L
    block[:n, n:] = np.eye(n)
    return expm(block * duration)[:n, n:]


def _frame_rotate(rho, params, duration):
    if params.detuning == 0 or duration == 0:
        return rho
    u = np.exp(-1j * qdyn.TWO_PI * params.detuning * duration)
    out = rho.copy()
    out[TPM, :] *= u
    out[:, TPM] *= np.conj(u)
    return out


def _run(params, seq, rho0):
    """Propagate through ``seq``; returns (final state, readout intensity or None)."""
    rho = np.array(rho0, dtype=complex)
    intensity = None
    w = params.weights
    for seg in compile_sequence(seq):
        if seg.readout and seg.duration == 0:
            intensity = w.intensity(rho)
            continue
        if seg.readout:
            avg = qdyn.unvec(_window_integral(params, seg.duration) @ qdyn.vec(rho)) / seg.duration
            intensity = w.intensity(avg)
        if seg.duration == 0:
            continue
        P = _segment_propagator(params, seg.mw_on, seg.laser_on, float(seg.amplitude),
                                float(seg.phase), float(seg.duration))
        rho = qdyn.unvec(P @ qdyn.vec(rho))
        if not seg.mw_on:
            rho = _frame_rotate(rho, params, seg.duration)
        rho = 0.5 * (rho + rho.conj().T)
        rho /= np.trace(rho).real
    return rho, intensity


def run_sequence(params: SpinPairParams, seq: PulseSequence, rho0=None) -> np.ndarray:
    """Final state after piecewise-constant evolution through ``seq``."""
    rho0 = polarized_state() if rho0 is None else qdyn.check_density_matrix(rho0, "rho0")
    return _run(params, seq, rho0)[0]


def readout_intensity(params: SpinPairParams, seq: PulseSequence, rho0=None) -> float:
    """PL at the sequence's readout: the state at readout start, or its
    average over the integration window when the readout has a duration."""
    rho0 = polarized_state() if rho0 is None else qdyn.check_density_matrix(rho0, "rho0")
    rho, intensity = _run(params, seq, rho0)
    return params.weights.intensity(rho) if intensity is None else intensity


def _contrast(i_sig, i_ref):
    if not i_ref > 0:
        raise ZeroDivisionError("reference PL intensity is zero")
    return (i_sig - i_ref) / i_ref


def _times(tau_grid):
    if isinstance(tau_grid, qdyn.TimeGrid):
        return tau_grid.times
    t = np.asarray(tau_grid, dtype=float)
    if t.ndim != 1 or np.any(t < 0):
        raise ValueError("tau grid must be a 1-D array of non-negative times")
    return t


def _echo(params: SpinPairParams) -> dict:
    return asdict(params)


def rabi_experiment(params: SpinPairParams, tau_grid, drive_amplitudes, rho0=None,
                    laser=LASER_DURATION, readout_window=0.0) -> list[ContrastTrace]:
    """Laser polarization, microwave pulse of length tau, readout.

    Each trace is referenced against the same sequence with the microwave
    amplitude set to zero.
    """
    taus = _times(tau_grid)
    traces = []
    for a in drive_amplitudes:
        if a < 0:
            raise ValueError("drive amplitudes must be >= 0")
        c = [
            _contrast(
                readout_intensity(params, rabi_seq(t, a, laser, readout_window), rho0),
                readout_intensity(params, rabi_seq(t, 0.0, laser, readout_window), rho0),
            )
            for t in taus
        ]
        traces.append(ContrastTrace(taus, np.array(c), "us",
                                    meta={"protocol": "rabi", "amplitude": float(a), "params": _echo(params)}))
    return traces


def fit_rabi_frequency(trace: ContrastTrace) -> FitResult:
    """Damped-sine fit of a Rabi trace; ``omega/2pi`` is the Rabi frequency in MHz."""
    return lm_fit("damped_sin", trace.x, trace.contrast)


def cw_odmr_spectrum(params: SpinPairParams, detuning_grid) -> ContrastTrace:
    """Steady-state contrast with laser and microwave on versus laser only."""
    if not params.pump_rate > 0:
        raise ValueError("CW-ODMR needs a positive pump rate")
    det = np.asarray(detuning_grid, dtype=float)
    ref = qdyn.steady_state(build_liouvillian(params, False, True))
    c = []
    for d in det:
        on = qdyn.steady_state(build_liouvillian(params.replace(detuning=float(d)), True, True))
        c.append(contrast_from_state(on, ref, params.weights))
    return ContrastTrace(det, np.array(c), "MHz", meta={"protocol": "odmr", "params": _echo(params)})


def t1_experiment(params: SpinPairParams, tau_grid, rho0=None, laser=LASER_DURATION) -> ContrastTrace:
    """Polarize, wait tau in the dark, pi pulse, read out.

    The reference keeps the pi-pulse slot with the microwave muted, so both
    arms spend the same time in the dark.
    """
    if not params.omega > 0:
        return _flat(tau_grid, "t1", params)
    taus = _times(tau_grid)
    c = []
    for t in taus:
        seq = t1_seq(t, True, params.omega, laser)
        c.append(_contrast(readout_intensity(params, seq, rho0), readout_intensity(params, _muted(seq), rho0)))
    return ContrastTrace(taus, np.array(c), "us", meta={"protocol": "t1", "params": _echo(params)})


def _flat(tau_grid, protocol, params):
    taus = _times(tau_grid)
    return ContrastTrace(taus, np.zeros_like(taus), "us", meta={"protocol": protocol, "params": _echo(params)})


def _muted(seq: PulseSequence) -> PulseSequence:
    """Same timing with every microwave amplitude set to zero."""
    segs = tuple(PulseSegment(Kind.MICROWAVE, s.duration, 0.0, s.phase) if s.kind is Kind.MICROWAVE else s
                 for s in seq.segments)
    return PulseSequence(segs, seq.label + " [muted]")


def _phase_cycled(seq: PulseSequence) -> PulseSequence:
    """Same sequence with the closing pi/2 pulse phase-inverted."""
    segs = list(seq.segments)
    last = max(i for i, s in enumerate(segs) if s.kind is Kind.MICROWAVE)
    s = segs[last]
    segs[last] = PulseSegment(Kind.MICROWAVE, s.duration, s.amplitude, s.phase + math.pi)
    return PulseSequence(tuple(segs), seq.label + " [phase-cycled]")


def _referenced(params, seq, rho0):
    return _contrast(readout_intensity(params, seq, rho0), readout_intensity(params, _phase_cycled(seq), rho0))


def ramsey_experiment(params: SpinPairParams, tau_grid, detuning=None, rho0=None,
                      laser=LASER_DURATION) -> ContrastTrace:
    """pi/2 - tau - pi/2 with the drive detuned by ``detuning`` MHz.

    Echo-type protocols (Ramsey, Hahn, CPMG) are referenced against the same
    sequence with its closing pi/2 pulse phase-inverted, which removes the
    population-relaxation background from the fringe.
    """
    if detuning is not None:
        params = params.replace(detuning=float(detuning))
    if not params.omega > 0:
        return _flat(tau_grid, "ramsey", params)
    taus = _times(tau_grid)
    c = [_referenced(params, ramsey_seq(t, params.omega, laser), rho0) for t in taus]
    return ContrastTrace(taus, np.array(c), "us", meta={"protocol": "ramsey", "params": _echo(params)})


def cpmg_experiment(params: SpinPairParams, n: int, total_times, pi_phase=CPMG_PI_PHASE,
                    rho0=None, pi_duration=None, laser=LASER_DURATION) -> ContrastTrace:
    """CPMG-n against total free evolution ``2 n tau``; ``n = 0`` is Ramsey."""
    if not params.omega > 0:
        return _flat(total_times, "cpmg", params)
    T = _times(total_times)
    if n == 0:
        seqs = [ramsey_seq(t, params.omega, laser) for t in T]
    else:
        seqs = [cpmg_seq(n, t / (2 * n), params.omega, pi_phase, laser, pi_duration=pi_duration) for t in T]
    c = [_referenced(params, s, rho0) for s in seqs]
    return ContrastTrace(T, np.array(c), "us", meta={"protocol": "cpmg", "n": int(n), "params": _echo(params)})


def hahn_experiment(params: SpinPairParams, total_times, rho0=None, pi_duration=None,
                    laser=LASER_DURATION) -> ContrastTrace:
    """Hahn echo against total free evolution ``2 tau``."""
    if not params.omega > 0:
        return _flat(total_times, "hahn", params)
    T = _times(total_times)
    c = [_referenced(params, hahn_seq(t / 2, params.omega, laser=laser, pi_duration=pi_duration), rho0)
         for t in T]
    return ContrastTrace(T, np.array(c), "us", meta={"protocol": "hahn", "params": _echo(params)})


def charge_recovery_experiment(params: SpinPairParams, tau_grid, rho0=None,
                               laser=LASER_DURATION) -> ContrastTrace:
    """Polarize, wait tau without microwaves, read out.

    Contrast compares the PL at the start of the readout with the PL at the
    end of the polarization pulse.
    """
    taus = _times(tau_grid)
    start = polarized_state() if rho0 is None else qdyn.check_density_matrix(rho0, "rho0")
    after_laser = run_sequence(params, rabi_seq(0.0, 0.0, laser), start)
    i0 = params.weights.intensity(after_laser)
    L_dark = build_liouvillian(params, False, False)
    c = []
    for t in taus:
        rho = qdyn.propagate(after_laser, L_dark, t)
        c.append(_contrast(params.weights.intensity(rho), i0))
    return ContrastTrace(taus, np.array(c), "us", meta={"protocol": "charge", "params": _echo(params)})


def resonance_frequency(field: float, g: float) -> float:
    """Resonance frequency (MHz) of a spin-1/2 with g-factor ``g`` at ``field`` Gauss."""
    if field < 0 or not g > 0:
        raise ValueError("need field >= 0 and g > 0")
    return g * MU_B_OVER_H * field


def fit_g_factor(data: GFactorData) -> tuple[float, float]:
    """Slope of frequency versus field through the origin, converted to g.

    Returns ``(g, one_sigma)``.
    """
    b = data.field_points
    if np.ptp(b) == 0:
        raise ValueError("all field points are equal; the slope is undetermined")
    res = lm_fit("line_through_origin", b, data.frequencies, data.sigma)
    return res["slope"] / MU_B_OVER_H, res.error("slope") / MU_B_OVER_H
