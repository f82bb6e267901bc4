"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 fit did not converge,
4 file I/O or trace-format error. Diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy.stats import linregress

from . import __version__
from . import bath as bathmod
from . import spinpair as sp
from .config import DEFAULT_FIT, DEFAULT_GRID, PROTOCOLS, ConfigError, RunConfig, grid_values, load_config
from .fitting import MODELS, FitError, FitResult, eval_model, get_model, initial_guess, lm_fit
from .plotting import Overlay, render_plot
from .pulses import SequenceError, cpmg_seq, hahn_seq, rabi_seq, ramsey_seq, t1_seq
from .traceio import TraceFormatError, atomic_write_text, format_trace, load_trace

EXIT_OK, EXIT_CONFIG, EXIT_FIT, EXIT_IO = 0, 2, 3, 4


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


class Run:
    """Collects outputs of one command and writes them to the output directory."""

    def __init__(self, cfg: RunConfig, out: Path, command: str, plot: bool, dump_seq: bool):
        self.cfg = cfg
        self.out = out
        self.command = command
        self.plot = plot
        self.dump_seq = dump_seq
        self.files: list[str] = []
        self.fits: list[dict] = []
        self.results: dict = {}
        self.failed: list[str] = []

    def write_trace(self, name, trace):
        atomic_write_text(self.out / name, format_trace(trace))
        self.files.append(name)

    def write_text(self, name, text):
        atomic_write_text(self.out / name, text)
        self.files.append(name)

    def write_plot(self, name, traces, overlays=(), **kw):
        if self.plot:
            render_plot(traces, self.out / name, overlays, **kw)
            self.files.append(name)

    def write_sequences(self, seqs):
        if self.dump_seq:
            body = {"command": self.command, "sequences": [s.to_dict() for s in seqs]}
            self.write_text("sequences.json", json.dumps(body, indent=2, sort_keys=True) + "\n")

    def fit(self, name, trace, model, fixed=(), init=None, sigma_floor=None) -> FitResult | None:
        """Fit ``trace`` and record the outcome; failures are logged, not raised."""
        spec = get_model(model)
        sigma = trace.sigma
        if sigma is not None and sigma_floor is not None:
            sigma = np.maximum(sigma, sigma_floor)
        elif sigma is not None and np.any(sigma <= 0):
            print(f"warning: {name}: non-positive sigma entries, fitting with unit weights", file=sys.stderr)
            sigma = None
        entry = {"trace": name, "model": spec.name}
        try:
            p0 = initial_guess(spec, trace.x, trace.contrast) if init is None else np.array(init, dtype=float)
            for key, value in self.cfg.fit.init.items():
                p0[spec.index(key)] = value
            res = lm_fit(spec, trace.x, trace.contrast, sigma, p0, fixed=tuple(fixed) + tuple(self.cfg.fit.fixed))
        except KeyError as exc:
            raise ConfigError(f"fit: {exc.args[0]}") from None
        except FitError as exc:
            entry.update(converged=False, message=str(exc))
            self.fits.append(entry)
            self.failed.append(name)
            print(f"error: fit of {name} failed: {exc}", file=sys.stderr)
            return None
        entry.update(_jsonable(res.to_dict()))
        self.fits.append(entry)
        if not res.converged:
            self.failed.append(name)
            print(f"error: fit of {name} did not converge: {res.message}", file=sys.stderr)
        return res

    def finish(self) -> int:
        cfg_echo = self.cfg.model_dump(mode="json")
        body = {
            "tool": "spinpairsim",
            "version": __version__,
            "command": self.command,
            "config": cfg_echo,
            "files": sorted(self.files),
            "fits": self.fits,
            "results": self.results,
            "timestamp": _timestamp(),
        }
        atomic_write_text(self.out / "result.json", json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n")
        return EXIT_FIT if self.failed else EXIT_OK


def _overlay(res: FitResult | None):
    if res is None:
        return None
    return Overlay(lambda x: eval_model(res.model, res.params, x), f"{res.model} fit")


def _fit_model(run: Run, protocol: str):
    model = run.cfg.fit.model or DEFAULT_FIT[protocol]
    if model == "none":
        return None
    try:
        return get_model(model).name
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None


def _simulate(run: Run, protocol: str):
    cfg = run.cfg
    pc = cfg.protocol
    params = cfg.model.to_params()
    model = _fit_model(run, protocol)
    if protocol == "rabi":
        taus = grid_values(pc.tau_grid, DEFAULT_GRID["rabi"])
        traces = sp.rabi_experiment(params, taus, pc.amplitudes, laser=pc.laser, readout_window=pc.readout_window)
        run.write_sequences([rabi_seq(t, a, pc.laser, pc.readout_window) for a in pc.amplitudes for t in taus])
        table = []
        overlays = []
        for a, tr in zip(pc.amplitudes, traces):
            name = f"rabi_a{a:g}.csv"
            run.write_trace(name, tr)
            res = run.fit(name, tr, model) if model else None
            overlays.append(_overlay(res))
            if res is not None and model == "damped_sin":
                table.append({"amplitude": a, "frequency": res["omega"] / (2 * np.pi),
                              "error": res.error("omega") / (2 * np.pi)})
        if table:
            run.results["rabi_frequencies"] = table
            rows = ["amplitude,frequency,sigma"] + [f"{r['amplitude']!r},{r['frequency']!r},{r['error']!r}" for r in table]
            run.write_text("rabi_frequencies.csv", "\n".join(rows) + "\n")
        if len(table) >= 2:
            amps = np.array([r["amplitude"] for r in table])
            freqs = np.array([r["frequency"] for r in table])
            reg = linregress(amps, freqs)
            run.results["rabi_linearity"] = {"slope": reg.slope, "intercept": reg.intercept,
                                             "r_squared": reg.rvalue ** 2}
        run.write_plot("rabi.svg", traces, overlays, labels=[f"a={a:g}" for a in pc.amplitudes])
        return
    if protocol in ("hahn", "cpmg") and pc.engine == "bath":
        _simulate_bath(run, protocol, params)
        return
    if protocol == "odmr":
        det = grid_values(pc.tau_grid, DEFAULT_GRID["odmr"])
        tr = sp.cw_odmr_spectrum(params, det)
        run.write_sequences([])
    elif protocol == "t1":
        taus = grid_values(pc.tau_grid, DEFAULT_GRID["t1"])
        tr = sp.t1_experiment(params, taus, laser=pc.laser)
        run.write_sequences([t1_seq(t, True, params.omega, pc.laser) for t in taus])
    elif protocol == "ramsey":
        taus = grid_values(pc.tau_grid, DEFAULT_GRID["ramsey"])
        tr = sp.ramsey_experiment(params, taus, pc.detuning, laser=pc.laser)
        run.write_sequences([ramsey_seq(t, params.omega, pc.laser) for t in taus])
    elif protocol == "charge":
        taus = grid_values(pc.tau_grid, DEFAULT_GRID["charge"])
        tr = sp.charge_recovery_experiment(params, taus, laser=pc.laser)
        run.write_sequences([rabi_seq(0.0, 0.0, pc.laser)])
    else:
        times = grid_values(pc.tau_grid, (0.0, 1.0, 101))
        n = 1 if protocol == "hahn" else pc.n
        tr = sp.cpmg_experiment(params, n, times, pc.pi_phase, laser=pc.laser)
        run.write_sequences([cpmg_seq(n, t / (2 * n), params.omega, pc.pi_phase, pc.laser) for t in times])
    name = f"{protocol}.csv"
    run.write_trace(name, tr)
    res = run.fit(name, tr, model) if model else None
    run.write_plot(f"{protocol}.svg", [tr], [_overlay(res)], labels=[protocol])


def _simulate_bath(run: Run, protocol: str, params):
    cfg = run.cfg
    n = 1 if protocol == "hahn" else cfg.protocol.n
    bath = cfg.bath.to_params(cfg.seed)
    run.results["bath"] = {"sigma": bath.sigma, "tau_c": bath.tau_c, "dt": bath.dt}
    t_est = bathmod._t2_estimate(n, bath)
    if cfg.protocol.tau_grid is None:
        times = np.linspace(0.05, 2.0, 40) * t_est
    else:
        times = grid_values(cfg.protocol.tau_grid, None)
    if times[0] < 0:
        raise ConfigError("total evolution times must be >= 0")
    seqs = [hahn_seq(t / 2, params.omega) if n == 1 and protocol == "hahn"
            else cpmg_seq(n, t / (2 * n), params.omega, cfg.protocol.pi_phase) for t in times]
    run.write_sequences(seqs)
    toggles = [bathmod.toggling_from_sequence(s) for s in seqs]
    est = bathmod.coherence_curve(toggles, bath, cfg.bath.n_traj, cfg.bath.workers)
    tr = sp.ContrastTrace(times, np.array([e.value for e in est]), "us", np.array([e.stderr for e in est]),
                          meta={"protocol": protocol, "n": n, "quantity": "coherence"})
    name = f"{protocol}.csv"
    run.write_trace(name, tr)
    run.results["analytic_t2"] = t_est
    model = _fit_model(run, protocol)
    res = None
    if model == "stretched_exp":
        res = run.fit(name, tr, model, fixed=("a", "c"), init=[1.0, t_est, 2.0, 0.0], sigma_floor=1e-4)
        if res is not None:
            run.results["t2"] = {"value": res["T"], "error": res.error("T"), "beta": res["beta"]}
    elif model:
        res = run.fit(name, tr, model)
    run.write_plot(f"{protocol}.svg", [tr], [_overlay(res)], labels=[f"N={n}"], ylabel="coherence W")


def _cmd_fit(run: Run, model: str, path: str):
    try:
        name = get_model(model).name
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    tr = load_trace(path)
    out_name = Path(path).name
    run.results["input"] = out_name
    res = run.fit(out_name, tr, name)
    run.write_plot("fit.svg", [tr], [_overlay(res)], labels=[Path(path).stem])


def _cmd_noise(run: Run):
    cfg = run.cfg
    bath = cfg.bath.to_params(cfg.seed)
    n_steps = cfg.protocol.n_steps
    x = bathmod.ou_trace(bath, n_steps)
    t = np.arange(n_steps) * bath.dt
    tr = sp.ContrastTrace(t, x, "us", meta={"quantity": "frequency offset (MHz)"})
    run.write_trace("ou.csv", tr)
    lags = sorted({1, *(int(round(f * bath.tau_c / bath.dt)) for f in (0.5, 1.0, 2.0, 3.0))})
    lags = [k for k in lags if k < n_steps // 2]
    var = float(np.mean(x * x))
    run.results["ou"] = {
        "sigma": bath.sigma, "tau_c": bath.tau_c, "dt": bath.dt, "n_steps": n_steps,
        "mean": float(x.mean()), "variance": var, "variance_ratio": var / bath.sigma ** 2,
        "autocovariance": [
            {"lag": k, "time": k * bath.dt, "sample": float(np.mean(x[:-k] * x[k:])),
             "expected": bath.sigma ** 2 * math.exp(-k * bath.dt / bath.tau_c)}
            for k in lags
        ],
    }
    run.write_plot("ou.svg", [tr], labels=["OU trace"], ylabel="frequency offset (MHz)")


def _cmd_scaling(run: Run):
    cfg = run.cfg
    bath = cfg.bath.to_params(cfg.seed)
    points = bathmod.t2_vs_n(bath, cfg.protocol.n_list, cfg.model.omega, cfg.bath.n_traj,
                             cfg.bath.n_times, cfg.bath.workers)
    gamma, a, se = bathmod.fit_scaling_exponent(points)
    ns = np.array([p.n for p in points], dtype=float)
    tr = sp.ContrastTrace(ns, np.array([p.t2 for p in points]), "N", np.array([p.t2_err for p in points]),
                          meta={"quantity": "T2 (us)"})
    run.write_trace("scaling.csv", tr)
    run.results["bath"] = {"sigma": bath.sigma, "tau_c": bath.tau_c, "dt": bath.dt}
    run.results["points"] = [{"n": p.n, "t2": p.t2, "t2_error": p.t2_err, "beta": p.beta} for p in points]
    run.results["scaling"] = {"gamma": gamma, "a": a, "gamma_error": se}
    run.fits.extend({"trace": f"N={p.n}", **_jsonable(p.fit.to_dict())} for p in points)
    run.failed.extend(f"N={p.n}" for p in points if not p.fit.converged)
    run.write_plot("scaling.svg", [tr], [Overlay(lambda x: a * x ** gamma, f"a N^{gamma:.3f}")],
                   labels=["T2"], ylabel="T2 (µs)", logx=True, logy=True)


def _cmd_gfactor(run: Run):
    cfg = run.cfg
    pc = cfg.protocol
    fields = np.asarray(pc.field_points, dtype=float)
    if pc.frequencies is not None:
        freqs = np.asarray(pc.frequencies, dtype=float)
        if freqs.shape != fields.shape:
            raise ConfigError("frequencies must match field_points in length")
        sigma = pc.noise * np.abs(freqs) if pc.noise > 0 else None
    else:
        true = pc.g_true * sp.MU_B_OVER_H * fields
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
        freqs = true * (1 + pc.noise * rng.standard_normal(fields.size))
        sigma = pc.noise * true if pc.noise > 0 else None
    try:
        data = sp.GFactorData(fields, freqs, sigma)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    tr = sp.ContrastTrace(fields, freqs, "G", sigma, meta={"quantity": "resonance frequency (MHz)"})
    run.write_trace("gfactor.csv", tr)
    try:
        g, g_err = sp.fit_g_factor(data)
    except FitError as exc:
        run.failed.append("gfactor.csv")
        run.fits.append({"trace": "gfactor.csv", "model": "line_through_origin", "converged": False,
                         "message": str(exc)})
        print(f"error: g-factor fit failed: {exc}", file=sys.stderr)
        return
    run.results["g"] = {"value": g, "error": g_err}
    slope = g * sp.MU_B_OVER_H
    run.write_plot("gfactor.svg", [tr], [Overlay(lambda x: slope * x, f"g = {g:.4f}")],
                   labels=["resonance"], ylabel="frequency (MHz)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, help="64-bit seed (overrides config seed)")
    common.add_argument("--dump-seq", action="store_true", help="write the pulse sequences to sequences.json")
    common.add_argument("--plot", action="store_true", help="write SVG figures")

    parser = argparse.ArgumentParser(prog="spinpair", description="Spin-pair ODMR simulation and fitting.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="simulate a measurement protocol")
    p.add_argument("protocol", choices=PROTOCOLS)
    p = sub.add_parser("fit", parents=[common], help="fit a model to a trace file")
    p.add_argument("model", help=f"one of {', '.join(sorted(MODELS))}")
    p.add_argument("trace", help="CSV trace file")
    p = sub.add_parser("noise", parents=[common], help="generate bath noise")
    p.add_argument("kind", choices=["ou"])
    sub.add_parser("scaling", parents=[common], help="CPMG coherence time versus number of pulses")
    sub.add_parser("gfactor", parents=[common], help="g-factor from resonance frequency versus field")
    return parser


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    updates = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be in [0, 2**64)")
        updates["seed"] = args.seed
    if args.plot:
        updates["output"] = cfg.output.model_copy(update={"plot": True})
    if args.command == "simulate":
        if cfg.protocol.name not in (None, args.protocol):
            raise ConfigError(f"config protocol {cfg.protocol.name!r} does not match command {args.protocol!r}")
        updates["protocol"] = cfg.protocol.model_copy(update={"name": args.protocol})
    return cfg.model_copy(update=updates)


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    command = args.command + (f" {args.protocol}" if args.command == "simulate" else "")
    try:
        cfg = _resolve(args)
        out = Path(args.out) if args.out else Path(cfg.output.dir)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(cfg, out, command, cfg.output.plot, args.dump_seq)
        if args.command == "simulate":
            _simulate(run, args.protocol)
        elif args.command == "fit":
            _cmd_fit(run, args.model, args.trace)
        elif args.command == "noise":
            _cmd_noise(run)
        elif args.command == "scaling":
            _cmd_scaling(run)
        else:
            _cmd_gfactor(run)
        return run.finish()
    except (ConfigError, SequenceError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (OSError, TraceFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv=None) -> int:
    return run_cli(argv)


if __name__ == "__main__":
    sys.exit(main())
