"""JSON run configuration.

Every section is optional and unknown keys are rejected. Units follow the
library: us, MHz, 1/us, Gauss.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .bath import OUParams, calibrate_sigma
from .pulses import CPMG_PI_PHASE, LASER_DURATION
from .spinpair import ReadoutWeights, SpinPairParams

PROTOCOLS = ("rabi", "odmr", "t1", "ramsey", "hahn", "cpmg", "charge")
DEFAULT_FIT = {
    "rabi": "damped_sin", "odmr": "lorentzian", "t1": "exp_decay", "ramsey": "damped_sin",
    "hahn": "stretched_exp", "cpmg": "stretched_exp", "charge": "exp_decay",
}
DEFAULT_GRID = {
    "rabi": (0.0, 0.5, 201), "odmr": (-50.0, 50.0, 201), "t1": (0.0, 80.0, 81),
    "ramsey": (0.0, 0.25, 126), "charge": (0.0, 12000.0, 61),
}


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Grid(_Strict):
    """Uniform grid ``linspace(start, stop, n_points)``."""

    start: float
    stop: float
    n_points: int = Field(ge=2)

    def values(self) -> np.ndarray:
        if not self.stop > self.start:
            raise ConfigError("grid stop must exceed start")
        return np.linspace(self.start, self.stop, self.n_points)


GridSpec = Union[list[float], Grid]


def grid_values(spec: GridSpec | None, default) -> np.ndarray:
    if spec is None:
        return np.linspace(*default)
    if isinstance(spec, Grid):
        return spec.values()
    vals = np.asarray(spec, dtype=float)
    if vals.size < 2 or np.any(np.diff(vals) <= 0):
        raise ConfigError("explicit grids need at least two strictly increasing values")
    return vals


class WeightsConfig(_Strict):
    w0: float = 0.8
    w1: float = 1.0
    w2: float = 1.2


class ModelConfig(_Strict):
    omega: float = 10.0
    detuning: float = 0.0
    gamma_10: float = 10.0
    gamma_20: float = 1.0
    gamma_phi: float = 1.0
    pump_rate: float = 1.0
    dark_recovery_rate: float = 5e-4
    weights: WeightsConfig = WeightsConfig()

    def to_params(self) -> SpinPairParams:
        data = self.model_dump()
        data["weights"] = ReadoutWeights(**data["weights"])
        return SpinPairParams(**data)


class ProtocolConfig(_Strict):
    name: Optional[Literal["rabi", "odmr", "t1", "ramsey", "hahn", "cpmg", "charge"]] = None
    tau_grid: Optional[GridSpec] = None
    amplitudes: list[float] = [1.0]
    detuning: Optional[float] = None
    n: int = Field(1, ge=1)
    n_list: list[int] = [1, 2, 4, 8, 16, 32]
    pi_phase: float = CPMG_PI_PHASE
    laser: float = Field(LASER_DURATION, ge=0)
    readout_window: float = Field(0.0, ge=0)
    engine: Literal["bath", "lindblad"] = "bath"
    n_steps: int = Field(100_000, ge=2)
    field_points: list[float] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0, 900.0, 1000.0]
    frequencies: Optional[list[float]] = None
    g_true: float = Field(2.0, gt=0)
    noise: float = Field(0.01, ge=0)

    @field_validator("amplitudes")
    @classmethod
    def _amps(cls, v):
        if not v or any(a <= 0 or not math.isfinite(a) for a in v):
            raise ValueError("amplitudes must be a non-empty list of positive numbers")
        return v

    @field_validator("n_list")
    @classmethod
    def _nlist(cls, v):
        if not v or v[0] < 1 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("n_list must be ascending positive integers")
        return v


class BathConfig(_Strict):
    """``sigma`` null means: calibrate so the Hahn-echo 1/e time equals ``t2_hahn``."""

    sigma: Optional[float] = None
    t2_hahn: float = Field(0.0645, gt=0)
    tau_c: float = Field(6.45, gt=0)
    dt: float = Field(0.001, gt=0)
    n_traj: int = Field(10_000, ge=100)
    n_times: int = Field(16, ge=5)
    workers: int = Field(1, ge=1)

    def to_params(self, seed: int) -> OUParams:
        sigma = self.sigma if self.sigma is not None else calibrate_sigma(self.t2_hahn, self.tau_c)
        return OUParams(sigma, self.tau_c, self.dt, seed)


class FitConfig(_Strict):
    """``model`` null picks the protocol default; ``"none"`` disables fitting."""

    model: Optional[str] = None
    init: dict[str, float] = {}
    fixed: list[str] = []


class OutputConfig(_Strict):
    dir: str = "out"
    plot: bool = False


class RunConfig(_Strict):
    model: ModelConfig = ModelConfig()
    protocol: ProtocolConfig = ProtocolConfig()
    bath: BathConfig = BathConfig()
    fit: FitConfig = FitConfig()
    output: OutputConfig = OutputConfig()
    seed: int = Field(0, ge=0, lt=2 ** 64)


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    """Read a JSON config; ``OSError`` propagates, bad content raises ``ConfigError``."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(data)


def config_schema() -> dict:
    return RunConfig.model_json_schema()
