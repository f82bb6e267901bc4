"""Classical Lorentzian-bath dephasing under pulse trains.

The bath is an Ornstein-Uhlenbeck frequency offset ``dnu(t)`` (MHz) with
autocorrelation ``sigma^2 exp(-|t|/tau_c)``. A decoupling sequence enters
through its toggling function ``f(t) = +-1`` and the coherence is
``W = |< exp(i 2 pi int f(t) dnu(t) dt) >|``. Pulses are instantaneous here.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.signal import lfilter
from scipy.stats import linregress

from .fitting import FitResult, lm_fit
from .pulses import Kind, PulseSequence, SequenceError, cpmg_seq, pi_time

TWO_PI = 2.0 * np.pi
MAX_SEED = 2 ** 64


class InsufficientTrajectoriesWarning(UserWarning):
    pass


@dataclass(frozen=True)
class OUParams:
    """sigma in MHz, tau_c and dt in us, seed a 64-bit integer."""

    sigma: float
    tau_c: float
    dt: float
    seed: int = 0

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (self.tau_c > 0 and math.isfinite(self.tau_c)):
            raise ValueError(f"tau_c must be positive, got {self.tau_c}")
        if not self.dt > 0 or self.dt > self.tau_c / 10 * (1 + 1e-12):
            raise ValueError(f"dt must be in (0, tau_c/10], got dt={self.dt}, tau_c={self.tau_c}")
        if int(self.seed) != self.seed or not 0 <= self.seed < MAX_SEED:
            raise ValueError("seed must be an integer in [0, 2**64)")


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator for trajectory ``index``, independent of all others."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def _ou_from_normals(xi: np.ndarray, bath: OUParams) -> np.ndarray:
    """Exact OU recursion applied along the last axis of standard normals."""
    decay = math.exp(-bath.dt / bath.tau_c)
    kick = bath.sigma * math.sqrt(-math.expm1(-2 * bath.dt / bath.tau_c))
    u = xi * kick
    u[..., 0] = bath.sigma * xi[..., 0]
    return lfilter([1.0], [1.0, -decay], u, axis=-1)


def ou_trace(params: OUParams, n_steps: int, index: int = 0) -> np.ndarray:
    """Stationary OU samples ``x_0 .. x_{n_steps-1}`` spaced by ``dt``."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    xi = trajectory_rng(params.seed, index).standard_normal(int(n_steps))
    return _ou_from_normals(xi, params)


@dataclass(frozen=True)
class TogglingFunction:
    switch_times: tuple[float, ...]
    total_time: float
    initial_sign: int = 1

    def __post_init__(self):
        s = tuple(float(t) for t in self.switch_times)
        object.__setattr__(self, "switch_times", s)
        if self.total_time < 0:
            raise ValueError("total_time must be >= 0")
        if self.initial_sign not in (1, -1):
            raise ValueError("initial_sign must be +1 or -1")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("switch times must be strictly increasing")
        if s and (s[0] < 0 or s[-1] > self.total_time):
            raise ValueError("switch times must lie within [0, total_time]")

    def intervals(self):
        """(start, stop, sign) for every constant-sign stretch."""
        edges = (0.0, *self.switch_times, self.total_time)
        sign = self.initial_sign
        out = []
        for a, b in zip(edges[:-1], edges[1:]):
            if b > a:
                out.append((a, b, sign))
            sign = -sign
        return out

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        flips = np.searchsorted(np.asarray(self.switch_times), t, side="right")
        return self.initial_sign * np.where(flips % 2 == 0, 1, -1)


def toggling_from_sequence(seq: PulseSequence) -> TogglingFunction:
    """Toggling function of a pi/2 - (waits, pi pulses) - pi/2 sequence.

    Time counts free evolution only; each pi pulse flips the sign at its
    centre.
    """
    segs = seq.segments
    mw = [i for i, s in enumerate(segs) if s.kind is Kind.MICROWAVE]
    if len(mw) < 2:
        raise SequenceError("sequence needs opening and closing pi/2 pulses")
    t = 0.0
    switches = []
    for s in segs[mw[0] + 1:mw[-1]]:
        if s.kind is Kind.WAIT:
            t += s.duration
        elif s.kind is Kind.MICROWAVE:
            switches.append(t)
        else:
            raise SequenceError(f"unexpected {s.kind.value} segment inside the decoupling block")
    return TogglingFunction(tuple(switches), t)


def cpmg_toggling(n: int, total_time: float) -> TogglingFunction:
    """Switches at (2k-1) T / (2n); ``n = 0`` gives free induction decay."""
    if n == 0:
        return TogglingFunction((), total_time)
    tau = total_time / (2 * n)
    return TogglingFunction(tuple((2 * k - 1) * tau for k in range(1, n + 1)), total_time)


def decay_exponent(f: TogglingFunction, bath: OUParams) -> float:
    """Gaussian attenuation ``chi`` with ``W = exp(-chi)``, exact for OU noise.

    Sums closed-form double integrals of the exponential kernel over every
    pair of constant-sign intervals.
    """
    tc = bath.tau_c
    iv = f.intervals()
    total = 0.0
    for j, (a1, b1, s1) in enumerate(iv):
        L = b1 - a1
        total += 2 * tc * (L + tc * math.expm1(-L / tc))
        for a2, b2, s2 in iv[j + 1:]:
            # factored form avoids cancellation when the intervals are short
            k = tc * tc * math.exp(-(a2 - b1) / tc) * math.expm1(-L / tc) * math.expm1(-(b2 - a2) / tc)
            total += 2 * s1 * s2 * k
    return 0.5 * (TWO_PI * bath.sigma) ** 2 * total


def ramsey_chi_static(sigma: float, total_time: float) -> float:
    """Quasi-static limit of free induction decay."""
    return 0.5 * (TWO_PI * sigma * total_time) ** 2


def cpmg_chi_slow(sigma: float, tau_c: float, total_time: float, n: int = 1) -> float:
    """Slow-bath limit ``(2 pi sigma)^2 T^3 / (12 tau_c n^2)``; n = 1 is Hahn echo."""
    return (TWO_PI * sigma) ** 2 * total_time ** 3 / (12 * tau_c * n * n)


class CoherenceEstimate(NamedTuple):
    value: float
    stderr: float
    n_traj: int
    sufficient: bool


def _integrals_at(cum, x, dt, times):
    """Integral of the linearly interpolated samples from 0 to each time."""
    k = np.minimum((np.asarray(times) / dt).astype(int), cum.shape[1] - 2)
    u = np.asarray(times) - k * dt
    x0 = x[:, k]
    x1 = x[:, k + 1]
    return cum[:, k] + x0 * u + (x1 - x0) * u * u / (2 * dt)


def _batch_phases(toggles, bath, indices, n_samples):
    xi = np.stack([trajectory_rng(bath.seed, i).standard_normal(n_samples) for i in indices])
    x = _ou_from_normals(xi, bath)
    cum = np.zeros_like(x)
    cum[:, 1:] = np.cumsum(0.5 * (x[:, 1:] + x[:, :-1]) * bath.dt, axis=1)
    phases = np.empty((len(indices), len(toggles)))
    for m, f in enumerate(toggles):
        acc = np.zeros(len(indices))
        for a, b, s in f.intervals():
            ia, ib = _integrals_at(cum, x, bath.dt, [a, b]).T
            acc += s * (ib - ia)
        phases[:, m] = TWO_PI * acc
    return phases


def coherence_curve(toggles: Sequence[TogglingFunction], bath: OUParams, n_traj: int,
                    workers: int = 1, batch: int = 1000) -> list[CoherenceEstimate]:
    """Monte-Carlo coherence for several toggling functions on shared trajectories.

    Trajectory ``i`` always uses the substream ``(seed, i)``, and averages are
    taken over the full index-ordered array, so the result does not depend on
    ``workers`` or ``batch``.
    """
    if n_traj < 100:
        raise ValueError("n_traj must be >= 100")
    t_max = max(f.total_time for f in toggles)
    n_samples = int(math.ceil(t_max / bath.dt)) + 2
    chunks = [range(s, min(s + batch, n_traj)) for s in range(0, n_traj, batch)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda c: _batch_phases(toggles, bath, c, n_samples), chunks))
    else:
        parts = [_batch_phases(toggles, bath, c, n_samples) for c in chunks]
    phases = np.concatenate(parts, axis=0)
    out = []
    for m in range(len(toggles)):
        z = np.exp(1j * phases[:, m])
        mean = z.mean()
        w = abs(mean)
        proj = np.real(z * np.conj(mean) / w) if w > 0 else np.real(z)
        se = float(proj.std(ddof=1) / math.sqrt(n_traj))
        out.append(CoherenceEstimate(float(min(w, 1.0)), se, n_traj, se <= 0.01))
    return out


def mc_coherence(f: TogglingFunction, bath: OUParams, n_traj: int, workers: int = 1) -> CoherenceEstimate:
    """Monte-Carlo coherence ``W`` of one toggling function, with its standard error."""
    if f.total_time == 0:
        return CoherenceEstimate(1.0, 0.0, n_traj, True)
    est = coherence_curve([f], bath, n_traj, workers)[0]
    if not est.sufficient:
        warnings.warn(f"standard error {est.stderr:.3g} exceeds 0.01; use more trajectories",
                      InsufficientTrajectoriesWarning, stacklevel=2)
    return est


class T2Point(NamedTuple):
    n: int
    t2: float
    t2_err: float
    beta: float
    fit: FitResult


def _t2_estimate(n, bath):
    chi = lambda T: decay_exponent(cpmg_toggling(n, T), bath) - 1.0  # noqa: E731
    hi = bath.tau_c
    while chi(hi) < 0:
        hi *= 2
    return brentq(chi, 1e-9 * hi, hi, xtol=1e-12 * hi)


def t2_vs_n(bath: OUParams, n_list, omega: float = 10.0, n_traj: int = 10_000,
            n_times: int = 16, workers: int = 1) -> list[T2Point]:
    """Coherence time versus number of CPMG pi pulses.

    For each ``n`` the total evolution time is swept around the analytic
    1/e time, the Monte-Carlo decay is fitted with ``exp(-(t/T)^beta)`` and
    ``T`` is reported with its one-sigma fit error.
    """
    n_list = [int(n) for n in n_list]
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])) or n_list[0] < 1:
        raise ValueError("n_list must be a non-empty ascending list of positive integers")
    pi_time(omega)
    out = []
    for n in n_list:
        t_est = _t2_estimate(n, bath)
        times = np.linspace(0.3, 1.6, n_times) * t_est
        toggles = [toggling_from_sequence(cpmg_seq(n, T / (2 * n), omega)) for T in times]
        est = coherence_curve(toggles, bath, n_traj, workers)
        w = np.array([e.value for e in est])
        se = np.maximum([e.stderr for e in est], 1e-4)
        res = lm_fit("stretched_exp", times, w, se, init_params=[1.0, t_est, 2.0, 0.0], fixed=("a", "c"))
        if not res.converged:
            raise RuntimeError(f"stretched-exponential fit failed for n={n}: {res.message}")
        out.append(T2Point(n, res["T"], res.error("T"), res["beta"], res))
    return out


def fit_scaling_exponent(points) -> tuple[float, float, float]:
    """Log-log least squares of ``T2 = a N^gamma``; returns (gamma, a, stderr of gamma)."""
    pts = [(p[0], p[1]) for p in points]
    if len(pts) < 3:
        raise ValueError("need at least three (N, T2) points")
    n = np.array([p[0] for p in pts], dtype=float)
    t = np.array([p[1] for p in pts], dtype=float)
    if np.any(n <= 0) or np.any(t <= 0):
        raise ValueError("N and T2 must be positive")
    if np.ptp(t) == 0:
        return 0.0, float(t[0]), 0.0
    reg = linregress(np.log(n), np.log(t))
    return float(reg.slope), float(np.exp(reg.intercept)), float(reg.stderr)


def calibrate_sigma(t2_hahn: float, tau_c: float) -> float:
    """Noise amplitude (MHz) whose exact Hahn-echo decay reaches 1/e at ``t2_hahn``."""
    unit = OUParams(1.0, tau_c, tau_c / 10)
    return 1.0 / math.sqrt(decay_exponent(cpmg_toggling(1, t2_hahn), unit))
