"""Independent reference computations shared by the test modules."""
import numpy as np

from spinpairsim.fitting import eval_model, get_model


def fd_jacobian(model, p, x, rel_step=1e-6):
    """Central finite differences with step ``rel_step * max(|p_i|, 1)``."""
    p = np.asarray(p, dtype=float)
    cols = []
    for i in range(p.size):
        h = rel_step * max(abs(p[i]), 1.0)
        up, dn = p.copy(), p.copy()
        up[i] += h
        dn[i] -= h
        cols.append((eval_model(model, up, x) - eval_model(model, dn, x)) / (2 * h))
    return np.column_stack(cols)


def column_rel_error(J, J_ref):
    """Worst per-column max-abs difference relative to the column's scale."""
    scale = np.maximum(np.max(np.abs(J_ref), axis=0), 1e-300)
    return float(np.max(np.max(np.abs(J - J_ref), axis=0) / scale))


def _signed(rng, lo, hi):
    return rng.choice([-1, 1]) * rng.uniform(lo, hi)


def random_draw(model, rng):
    """Random (params, x) pair within the model's natural domain."""
    name = get_model(model).name
    if name == "lorentzian":
        f0, w = rng.uniform(-5, 5), rng.uniform(0.5, 5)
        return np.array([_signed(rng, 0.1, 2), f0, w, rng.uniform(-1, 1)]), np.linspace(f0 - 3 * w, f0 + 3 * w, 50)
    if name == "exp_decay":
        T = 10 ** rng.uniform(-2, 4)
        return np.array([_signed(rng, 0.1, 2), T, rng.uniform(-1, 1)]), np.linspace(0, 5 * T, 40)
    if name == "damped_sin":
        p = [_signed(rng, 0.1, 2), rng.uniform(0.2, 5), rng.uniform(1, 50), rng.uniform(0, 2 * np.pi),
             rng.uniform(-1, 1)]
        return np.array(p), np.linspace(0, 3, 60)
    if name == "stretched_exp":
        T = 10 ** rng.uniform(-2, 4)
        return np.array([_signed(rng, 0.1, 2), T, rng.uniform(0.3, 3), rng.uniform(-1, 1)]), np.linspace(0, 3 * T, 40)
    if name == "power_law":
        return np.array([_signed(rng, 0.1, 5), rng.uniform(-2, 2)]), np.linspace(0.5, 50, 40)
    if name == "line_through_origin":
        return np.array([_signed(rng, 0.1, 5)]), np.linspace(0, 100, 20)
    raise KeyError(name)


# Synthetic traces built on the reported time constants (times in us).
REFERENCE_TRACES = {
    "T1": ("exp_decay", np.array([1.0, 14.5, 0.0]), np.linspace(0, 80, 81), "T"),
    "T2*": ("damped_sin", np.array([1.0, 0.0483, 2 * np.pi * 20.0, 0.3, 0.0]), np.linspace(0, 0.25, 126), "T"),
    "T_charge": ("exp_decay", np.array([1.0, 2000.0, 0.0]), np.linspace(0, 12000, 61), "T"),
    "Hahn T2": ("stretched_exp", np.array([1.0, 0.0645, 1.0, 0.0]), np.linspace(0.005, 0.4, 80), "T"),
    "CPMG-32 T": ("stretched_exp", np.array([1.0, 1.315, 1.2, 0.0]), np.linspace(0, 5, 101), "T"),
}
