"""Curve models for ODMR/decay traces and a damped least-squares fitter.

Models and parameter order
--------------------------
lorentzian          A, f0, fwhm, c        A (fwhm/2)^2 / ((x-f0)^2 + (fwhm/2)^2) + c
exp_decay           a, T, c               a exp(-x/T) + c
damped_sin          a, T, omega, phi, c   a exp(-x/T) sin(omega x + phi) + c
stretched_exp       a, T, beta, c         a exp(-(x/T)^beta) + c
power_law           a, gamma              a x^gamma
line_through_origin slope                 slope x
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

TWO_PI = 2.0 * np.pi


class FitError(Exception):
    pass


class DomainError(FitError, ValueError):
    pass


class DegenerateDataError(FitError, ValueError):
    pass


class ParameterDegeneracyError(FitError, np.linalg.LinAlgError):
    pass


def _lorentzian(p, x):
    A, f0, fwhm, c = p
    h2 = (fwhm / 2) ** 2
    return A * h2 / ((x - f0) ** 2 + h2) + c


def _lorentzian_jac(p, x):
    A, f0, fwhm, _ = p
    h = fwhm / 2
    u = x - f0
    D = u * u + h * h
    return np.column_stack([
        h * h / D,
        2 * A * h * h * u / D ** 2,
        A * h * u * u / D ** 2,
        np.ones_like(x),
    ])


def _exp_decay(p, x):
    a, T, c = p
    return a * np.exp(-x / T) + c


def _exp_decay_jac(p, x):
    a, T, _ = p
    e = np.exp(-x / T)
    return np.column_stack([e, a * e * x / T ** 2, np.ones_like(x)])


def _damped_sin(p, x):
    a, T, w, phi, c = p
    return a * np.exp(-x / T) * np.sin(w * x + phi) + c


def _damped_sin_jac(p, x):
    a, T, w, phi, _ = p
    e = np.exp(-x / T)
    s = np.sin(w * x + phi)
    co = np.cos(w * x + phi)
    return np.column_stack([
        e * s,
        a * e * s * x / T ** 2,
        a * e * co * x,
        a * e * co,
        np.ones_like(x),
    ])


def _check_nonneg(x, name):
    if np.any(x < 0):
        raise DomainError(f"{name} is defined for x >= 0 only")


def _stretched(p, x):
    a, T, beta, c = p
    _check_nonneg(x, "stretched_exp")
    return a * np.exp(-((x / T) ** beta)) + c


def _stretched_jac(p, x):
    a, T, beta, _ = p
    _check_nonneg(x, "stretched_exp")
    r = x / T
    z = r ** beta
    e = np.exp(-z)
    with np.errstate(divide="ignore", invalid="ignore"):
        zlog = np.where(x > 0, z * np.log(np.where(x > 0, r, 1.0)), 0.0)
    return np.column_stack([e, a * e * beta * z / T, -a * e * zlog, np.ones_like(x)])


def _power_law(p, x):
    if np.any(x <= 0):
        raise DomainError("power_law is defined for x > 0 only")
    a, g = p
    return a * x ** g


def _power_law_jac(p, x):
    if np.any(x <= 0):
        raise DomainError("power_law is defined for x > 0 only")
    a, g = p
    xg = x ** g
    return np.column_stack([xg, a * xg * np.log(x)])


def _line(p, x):
    return p[0] * x


def _line_jac(p, x):
    return np.asarray(x, dtype=float)[:, None].copy()


@dataclass(frozen=True)
class ModelSpec:
    name: str
    param_names: tuple[str, ...]
    bounds: tuple[tuple[float, float], ...]
    func: Callable = field(repr=False)
    jac: Callable = field(repr=False)
    # parameters that scale linearly with the data
    linear: tuple[str, ...] = ()

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def index(self, name: str) -> int:
        try:
            return self.param_names.index(name)
        except ValueError:
            raise KeyError(f"{self.name} has no parameter {name!r}; expected one of {self.param_names}") from None


_INF = np.inf
_FREE = (-_INF, _INF)
# A lower bound of exactly 0 is treated as exclusive (strictly positive).
_POS = (0.0, _INF)

MODELS: dict[str, ModelSpec] = {
    m.name: m
    for m in (
        ModelSpec("lorentzian", ("A", "f0", "fwhm", "c"), (_FREE, _FREE, _POS, _FREE),
                  _lorentzian, _lorentzian_jac, ("A", "c")),
        ModelSpec("exp_decay", ("a", "T", "c"), (_FREE, _POS, _FREE),
                  _exp_decay, _exp_decay_jac, ("a", "c")),
        ModelSpec("damped_sin", ("a", "T", "omega", "phi", "c"), (_FREE, _POS, _POS, _FREE, _FREE),
                  _damped_sin, _damped_sin_jac, ("a", "c")),
        ModelSpec("stretched_exp", ("a", "T", "beta", "c"), (_FREE, _POS, (0.3, 3.0), _FREE),
                  _stretched, _stretched_jac, ("a", "c")),
        ModelSpec("power_law", ("a", "gamma"), (_FREE, _FREE),
                  _power_law, _power_law_jac, ("a",)),
        ModelSpec("line_through_origin", ("slope",), (_FREE,),
                  _line, _line_jac, ("slope",)),
    )
}

ALIASES = {
    "Lorentzian": "lorentzian", "ExpDecay": "exp_decay", "DampedSin": "damped_sin",
    "StretchedExp": "stretched_exp", "PowerLaw": "power_law", "LineThroughOrigin": "line_through_origin",
}


def get_model(spec) -> ModelSpec:
    if isinstance(spec, ModelSpec):
        return spec
    name = ALIASES.get(spec, spec)
    try:
        return MODELS[name]
    except KeyError:
        raise KeyError(f"unknown model {spec!r}; choose from {sorted(MODELS)}") from None


def _check_params(spec: ModelSpec, params) -> np.ndarray:
    p = np.asarray(params, dtype=float)
    if p.shape != (spec.n_params,):
        raise ValueError(f"{spec.name} takes {spec.n_params} parameters, got {p.size}")
    return p


def eval_model(spec, params, x) -> np.ndarray:
    spec = get_model(spec)
    return spec.func(_check_params(spec, params), np.asarray(x, dtype=float))


def jacobian(spec, params, x) -> np.ndarray:
    """Analytic d(model)/d(params), shape (len(x), n_params)."""
    spec = get_model(spec)
    return spec.jac(_check_params(spec, params), np.asarray(x, dtype=float))


@dataclass
class FitResult:
    model: str
    param_names: tuple[str, ...]
    params: np.ndarray
    covariance: np.ndarray
    chi2_reduced: float
    n_iter: int
    converged: bool
    message: str = ""
    sse: float = np.nan

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def __getitem__(self, name: str) -> float:
        return float(self.params[self.param_names.index(name)])

    def error(self, name: str) -> float:
        return float(self.errors[self.param_names.index(name)])

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": {n: float(v) for n, v in zip(self.param_names, self.params)},
            "errors": {n: float(e) for n, e in zip(self.param_names, self.errors)},
            "covariance": self.covariance.tolist(),
            "chi2_reduced": float(self.chi2_reduced),
            "n_iter": int(self.n_iter),
            "converged": bool(self.converged),
            "message": self.message,
        }


def _project(spec: ModelSpec, p_new, p_old):
    out = p_new.copy()
    for i, (lo, hi) in enumerate(spec.bounds):
        if lo == 0.0 and out[i] <= 0.0:
            out[i] = 0.1 * p_old[i]
        elif out[i] < lo:
            out[i] = lo
        if out[i] > hi:
            out[i] = hi
    return out


def _in_bounds(spec, p):
    for v, (lo, hi) in zip(p, spec.bounds):
        if (lo == 0.0 and v <= 0.0) or v < lo or v > hi:
            return False
    return True


def _tidy(spec: ModelSpec, p, cov):
    if spec.name == "damped_sin":
        ia, iphi = spec.index("a"), spec.index("phi")
        if p[ia] < 0:
            p[ia] = -p[ia]
            p[iphi] += np.pi
            cov[ia, :] *= -1
            cov[:, ia] *= -1
        p[iphi] %= TWO_PI
    return p, cov


def lm_fit(spec, x, y, sigma_y=None, init_params=None, fixed=None, max_iter=500,
           ftol=1e-10, gtol=1e-10) -> FitResult:
    """Weighted Levenberg-Marquardt least squares.

    Damping is multiplied by 10 after a rejected step and divided by 10
    after an accepted one. Iteration stops when the relative SSE change of an
    accepted step drops below ``ftol`` or when the gradient, expressed per
    unit relative change of each parameter, falls below ``gtol``.

    Parameters
    ----------
    spec : str or ModelSpec
    x, y : array_like
    sigma_y : array_like or float, optional
        One-sigma data errors; unit weights when omitted.
    init_params : array_like, optional
        Starting point; :func:`initial_guess` when omitted.
    fixed : sequence of str or int, optional
        Parameters held at their initial value.

    Returns
    -------
    FitResult
        ``covariance`` is ``inv(J^T W J) * chi2_reduced`` over free
        parameters (zero rows/columns for fixed ones).
    """
    spec = get_model(spec)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    if sigma_y is None:
        sig = np.ones_like(y)
    else:
        sig = np.broadcast_to(np.asarray(sigma_y, dtype=float), y.shape).copy()
        if np.any(sig <= 0) or not np.all(np.isfinite(sig)):
            raise ValueError("sigma_y must be positive and finite")
    p = initial_guess(spec, x, y) if init_params is None else _check_params(spec, init_params).copy()
    if not _in_bounds(spec, p):
        raise ValueError(f"initial parameters {p} violate the bounds of {spec.name}")
    free = np.ones(spec.n_params, dtype=bool)
    for f in fixed or ():
        free[spec.index(f) if isinstance(f, str) else int(f)] = False
    n_free = int(free.sum())
    if y.size < n_free:
        raise ValueError(f"need at least {n_free} points, got {y.size}")

    def residuals(q):
        return (y - spec.func(q, x)) / sig

    r = residuals(p)
    sse = float(r @ r)
    lam = 1e-3
    converged = False
    message = "maximum iterations reached"
    it = 0
    for it in range(1, max_iter + 1):
        J = spec.jac(p, x)[:, free] / sig[:, None]
        A = J.T @ J
        g = J.T @ r
        scale = np.where(p[free] != 0, np.abs(p[free]), 1.0)
        if sse == 0.0 or np.max(np.abs(g * scale)) < gtol:
            converged, message = True, "gradient below tolerance"
            break
        diag = np.maximum(np.diag(A), 1e-12 * max(np.max(np.diag(A)), 1e-300))
        accepted = False
        while lam <= 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = p.copy()
            trial[free] += step
            trial = _project(spec, trial, p)
            with np.errstate(all="ignore"):
                r_try = residuals(trial)
            sse_try = float(r_try @ r_try) if np.all(np.isfinite(r_try)) else np.inf
            if sse_try < sse:
                accepted = True
                rel = (sse - sse_try) / sse
                p, r, sse = trial, r_try, sse_try
                lam = max(lam / 10, 1e-15)
                break
            lam *= 10
        if not accepted:
            converged, message = True, "no further decrease possible"
            break
        if rel < ftol:
            converged, message = True, "relative SSE change below tolerance"
            break

    J = spec.jac(p, x)[:, free] / sig[:, None]
    A = J.T @ J
    d = np.sqrt(np.diag(A))
    if np.any(d == 0) or not np.all(np.isfinite(A)):
        raise ParameterDegeneracyError(f"{spec.name}: a parameter does not influence the model")
    As = A / np.outer(d, d)
    if np.linalg.cond(As) > 1e14:
        raise ParameterDegeneracyError(f"{spec.name}: normal matrix is singular; parameters are degenerate")
    dof = y.size - n_free
    chi2_red = sse / dof if dof > 0 else np.nan
    cov_free = np.linalg.inv(As) / np.outer(d, d)
    if dof > 0:
        cov_free = cov_free * chi2_red
    cov = np.zeros((spec.n_params, spec.n_params))
    cov[np.ix_(free, free)] = cov_free
    p, cov = _tidy(spec, p.copy(), cov)
    return FitResult(spec.name, spec.param_names, p, cov, chi2_red, it, converged, message, sse)


def _loglinear(x, z):
    slope, intercept = np.polyfit(x, np.log(z), 1)
    return slope, intercept


def _exp_guess(x, y):
    span = np.ptp(x)
    rng = np.ptp(y)
    order = np.argsort(x)
    xs, ys = x[order], y[order]
    descending = ys[0] > ys[-1]
    if descending:
        c0 = ys.min() - 0.1 * rng
        z = ys - c0
    else:
        c0 = ys.max() + 0.1 * rng
        z = c0 - ys
    slope, intercept = _loglinear(xs, z)
    T = -1.0 / slope if slope < 0 else span
    a = np.exp(intercept) * (1 if descending else -1)
    return a, T, c0


def initial_guess(spec, x, y) -> np.ndarray:
    """Heuristic starting parameters from the data."""
    spec = get_model(spec)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size < spec.n_params:
        raise DegenerateDataError(f"{spec.name} needs at least {spec.n_params} points")
    if np.ptp(y) == 0:
        raise DegenerateDataError("data are constant")
    name = spec.name
    if name == "lorentzian":
        order = np.argsort(x)
        xs, ys = x[order], y[order]
        n_edge = max(1, len(ys) // 10)
        c = float(np.median(np.concatenate([ys[:n_edge], ys[-n_edge:]])))
        k = int(np.argmax(np.abs(ys - c)))
        A = ys[k] - c
        half = np.abs(ys - c) >= abs(A) / 2
        lo = k
        while lo > 0 and half[lo - 1]:
            lo -= 1
        hi = k
        while hi < len(ys) - 1 and half[hi + 1]:
            hi += 1
        fwhm = xs[min(hi + 1, len(xs) - 1)] - xs[max(lo - 1, 0)]
        width = xs[hi] - xs[lo]
        fwhm = 0.5 * (fwhm + width) if width > 0 else fwhm
        if not fwhm > 0:
            fwhm = np.ptp(xs) / 4
        return np.array([A, xs[k], fwhm, c])
    if name == "exp_decay":
        return np.array(_exp_guess(x, y))
    if name == "stretched_exp":
        a, T, c = _exp_guess(x, y)
        return np.array([a, T, 1.0, c])
    if name == "damped_sin":
        order = np.argsort(x)
        xs, ys = x[order], y[order]
        c = float(np.mean(ys))
        dx = np.ptp(xs) / (len(xs) - 1)
        n_pad = 16 * len(xs)
        # a quadratic background is removed so slow drifts do not win the peak search
        u = (xs - xs[0]) / max(np.ptp(xs), 1e-300)
        resid = ys - np.polyval(np.polyfit(u, ys, 2), u) if len(xs) > 6 else ys - c
        spectrum = np.abs(np.fft.rfft(resid, n_pad))
        freqs = np.fft.rfftfreq(n_pad, dx)
        k0 = 8  # half a cycle across the window
        k = k0 + int(np.argmax(spectrum[k0:]))
        w = TWO_PI * freqs[k]
        span = np.ptp(xs)
        T = span

        def amp(sel, T):
            e = np.exp(-(xs[sel] - xs[0]) / T)
            M = np.column_stack([e * np.sin(w * xs[sel]), e * np.cos(w * xs[sel])])
            coef, *_ = np.linalg.lstsq(M, ys[sel] - c, rcond=None)
            return coef

        mid = len(xs) // 2
        a1 = np.hypot(*amp(slice(0, mid), np.inf))
        a2 = np.hypot(*amp(slice(mid, None), np.inf))
        if a2 > 0 and a1 > a2:
            T = (xs[(mid + len(xs)) // 2] - xs[mid // 2]) / np.log(a1 / a2)
        s_coef, c_coef = amp(slice(None), T)
        a = np.hypot(s_coef, c_coef) * np.exp(xs[0] / T)
        phi = np.arctan2(c_coef, s_coef) % TWO_PI
        return np.array([a, T, w, phi, c])
    if name == "power_law":
        if np.any(x <= 0):
            raise DomainError("power_law is defined for x > 0 only")
        sign = 1.0 if np.all(y > 0) else -1.0
        z = sign * y
        if np.any(z <= 0):
            raise DegenerateDataError("power-law data must not change sign")
        g, loga = np.polyfit(np.log(x), np.log(z), 1)
        return np.array([sign * np.exp(loga), g])
    if name == "line_through_origin":
        return np.array([float(x @ y / (x @ x))])
    raise KeyError(name)  # pragma: no cover

