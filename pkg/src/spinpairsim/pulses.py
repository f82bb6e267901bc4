"""Pulse sequences for the optical/microwave protocols and their flattening
into piecewise-constant segments.

Durations are in microseconds, microwave amplitudes are relative to the
model's Rabi frequency and phases are in radians.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import NamedTuple

LASER_DURATION = 7.0
CPMG_PI_PHASE = math.pi / 2


class Kind(str, Enum):
    LASER = "laser"
    MICROWAVE = "microwave"
    WAIT = "wait"
    READOUT = "readout"


class SequenceError(ValueError):
    pass


@dataclass(frozen=True)
class PulseSegment:
    kind: Kind
    duration: float
    amplitude: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not math.isfinite(self.duration) or self.duration < 0:
            raise SequenceError(f"segment duration must be finite and >= 0, got {self.duration}")
        if self.kind is Kind.MICROWAVE:
            if not math.isfinite(self.amplitude) or self.amplitude < 0:
                raise SequenceError(f"microwave amplitude must be >= 0, got {self.amplitude}")
            object.__setattr__(self, "phase", float(self.phase) % (2 * math.pi))
        elif self.amplitude != 0.0 or self.phase != 0.0:
            raise SequenceError(f"{self.kind.value} segments carry no amplitude or phase")


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple[PulseSegment, ...] = ()
    label: str = ""

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        readouts = [i for i, s in enumerate(segs) if s.kind is Kind.READOUT]
        if len(readouts) > 1:
            raise SequenceError("a sequence holds at most one readout segment")
        if readouts and readouts[0] != len(segs) - 1:
            raise SequenceError("the readout segment must be last")

    def __len__(self):
        return len(self.segments)

    @property
    def total_duration(self) -> float:
        return sum(s.duration for s in self.segments)

    @property
    def free_evolution(self) -> float:
        """Total dark time between the first and last microwave pulses."""
        mw = [i for i, s in enumerate(self.segments) if s.kind is Kind.MICROWAVE]
        if len(mw) < 2:
            return 0.0
        return sum(s.duration for s in self.segments[mw[0]:mw[-1]] if s.kind is Kind.WAIT)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "segments": [
                {**asdict(s), "kind": s.kind.value} for s in self.segments
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "PulseSequence":
        return cls(tuple(PulseSegment(**s) for s in data["segments"]), data.get("label", ""))


class CompiledSegment(NamedTuple):
    mw_on: bool
    laser_on: bool
    amplitude: float
    phase: float
    duration: float
    readout: bool = False


def pi_time(omega: float) -> float:
    """Duration (us) of a pi pulse at Rabi frequency ``omega`` (MHz)."""
    if not omega > 0:
        raise ValueError(f"Rabi frequency must be positive, got {omega}")
    return 1.0 / (2.0 * omega)


def _laser(laser_duration):
    return PulseSegment(Kind.LASER, laser_duration)


def _readout(window):
    return PulseSegment(Kind.READOUT, window)


def _mw(duration, amplitude=1.0, phase=0.0):
    return PulseSegment(Kind.MICROWAVE, duration, amplitude, phase)


def _wait(segs, duration):
    if duration > 0:
        segs.append(PulseSegment(Kind.WAIT, duration))


def rabi_seq(tau, amplitude=1.0, laser=LASER_DURATION, readout_window=0.0) -> PulseSequence:
    if tau < 0:
        raise SequenceError("tau must be >= 0")
    segs = [_laser(laser)]
    if tau > 0:
        segs.append(_mw(tau, amplitude))
    segs.append(_readout(readout_window))
    return PulseSequence(tuple(segs), f"rabi(tau={tau:g}, a={amplitude:g})")


def t1_seq(tau, with_pi: bool, omega, laser=LASER_DURATION, readout_window=0.0) -> PulseSequence:
    if tau < 0:
        raise SequenceError("tau must be >= 0")
    segs = [_laser(laser)]
    _wait(segs, tau)
    if with_pi:
        segs.append(_mw(pi_time(omega)))
    segs.append(_readout(readout_window))
    return PulseSequence(tuple(segs), f"t1(tau={tau:g}, pi={with_pi})")


def ramsey_seq(tau, omega, laser=LASER_DURATION, readout_window=0.0) -> PulseSequence:
    if tau < 0:
        raise SequenceError("tau must be >= 0")
    half = pi_time(omega) / 2
    segs = [_laser(laser), _mw(half)]
    _wait(segs, tau)
    segs += [_mw(half), _readout(readout_window)]
    return PulseSequence(tuple(segs), f"ramsey(tau={tau:g})")


def cpmg_seq(n: int, tau, omega, pi_phase=CPMG_PI_PHASE, laser=LASER_DURATION,
             readout_window=0.0, pi_duration=None) -> PulseSequence:
    """pi/2 - [tau - pi - tau] x n - pi/2, with consecutive waits merged to 2*tau.

    ``pi_duration`` overrides the pi-pulse length (0 removes the pulses while
    keeping the free-evolution bookkeeping).
    """
    if int(n) != n or n < 1:
        raise SequenceError(f"CPMG needs n >= 1 pi pulses, got {n}")
    if tau < 0:
        raise SequenceError("tau must be >= 0")
    half = pi_time(omega) / 2
    t_pi = pi_time(omega) if pi_duration is None else float(pi_duration)
    segs = [_laser(laser), _mw(half)]
    _wait(segs, tau)
    for k in range(int(n)):
        if t_pi > 0:
            segs.append(_mw(t_pi, 1.0, pi_phase))
        _wait(segs, tau if k == n - 1 else 2 * tau)
    segs += [_mw(half), _readout(readout_window)]
    return PulseSequence(tuple(segs), f"cpmg(n={int(n)}, tau={tau:g})")


def hahn_seq(tau, omega, pi_phase=CPMG_PI_PHASE, laser=LASER_DURATION,
             readout_window=0.0, pi_duration=None) -> PulseSequence:
    seq = cpmg_seq(1, tau, omega, pi_phase, laser, readout_window, pi_duration)
    return PulseSequence(seq.segments, f"hahn(tau={tau:g})")


def compile_sequence(seq: PulseSequence) -> list[CompiledSegment]:
    """Flatten a sequence into (mw_on, laser_on, amplitude, phase, duration) steps.

    A readout becomes a zero-length marker followed, when its duration is
    positive, by a laser-on integration window flagged as readout.
    """
    out = []
    for s in seq.segments:
        if s.kind is Kind.LASER:
            out.append(CompiledSegment(False, True, 0.0, 0.0, s.duration))
        elif s.kind is Kind.MICROWAVE:
            out.append(CompiledSegment(True, False, s.amplitude, s.phase, s.duration))
        elif s.kind is Kind.WAIT:
            out.append(CompiledSegment(False, False, 0.0, 0.0, s.duration))
        else:
            out.append(CompiledSegment(False, True, 0.0, 0.0, 0.0, True))
            if s.duration > 0:
                out.append(CompiledSegment(False, True, 0.0, 0.0, s.duration, True))
    return out


# ``compile`` shadows the builtin only inside this namespace.
compile = compile_sequence  # noqa: A001
