"""Deterministic SVG figures of contrast traces with optional fit overlays."""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .spinpair import ContrastTrace  # noqa: E402
from .traceio import atomic_write_text  # noqa: E402

OVERLAY_POINTS = 512
UNIT_LABELS = {"us": "time (µs)", "ns": "time (ns)", "MHz": "detuning (MHz)", "N": "number of π pulses N",
               "G": "magnetic field (G)"}


@dataclass(frozen=True)
class Overlay:
    """Fit curve drawn over ``[x_min, x_max]`` of its trace."""

    func: Callable[[np.ndarray], np.ndarray]
    label: str = "fit"


def overlay_grid(trace: ContrastTrace, n: int = OVERLAY_POINTS) -> np.ndarray:
    return np.linspace(trace.x[0], trace.x[-1], n)


def render_svg(traces: Sequence[ContrastTrace], overlays: Sequence[Overlay | None] = (),
               labels: Sequence[str] | None = None, ylabel: str = "contrast",
               title: str = "", logx: bool = False, logy: bool = False) -> str:
    """Render traces to an SVG string; identical inputs give identical bytes."""
    if not traces:
        raise ValueError("render_svg needs at least one trace")
    labels = list(labels) if labels is not None else [f"trace {i}" for i in range(len(traces))]
    overlays = list(overlays) + [None] * (len(traces) - len(overlays))
    with plt.rc_context({"svg.hashsalt": "spinpairsim", "svg.fonttype": "path", "path.simplify": False}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for i, (tr, ov, lab) in enumerate(zip(traces, overlays, labels)):
            color = f"C{i % 10}"
            if tr.sigma is not None:
                ax.errorbar(tr.x, tr.contrast, yerr=tr.sigma, fmt="o", ms=3, color=color, label=lab)
            else:
                ax.plot(tr.x, tr.contrast, "o", ms=3, color=color, label=lab)
            if ov is not None:
                xs = overlay_grid(tr)
                ax.plot(xs, ov.func(xs), "-", lw=1.2, color=color, label=f"{lab} {ov.label}")
        ax.set_xlabel(UNIT_LABELS.get(traces[0].unit, traces[0].unit))
        ax.set_ylabel(ylabel)
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        if title:
            ax.set_title(title)
        ax.legend(fontsize="small")
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return buf.getvalue()


def render_plot(traces, path, overlays=(), **kwargs) -> None:
    atomic_write_text(path, render_svg(traces, overlays, **kwargs))
