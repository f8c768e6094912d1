"""Figure rendering for experiment outputs.

Every experiment kind gets one PNG next to its CSV/JSON outputs.  Rendering
is headless (Agg) and byte-deterministic: the Software metadata tag is
stripped so reruns of the same config produce identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_KW = {"dpi": 150, "metadata": {"Software": None}}


def _new_axes(title: str, xlabel: str, ylabel: str):
    fig, ax = plt.subplots(figsize=(6.4, 4.0), layout="constrained")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _finish(fig, outfile) -> None:
    fig.savefig(outfile, **_SAVE_KW)
    plt.close(fig)


def render_paths(paths, outfile) -> None:
    """Sample trajectories against time; first coordinate only."""
    fig, ax = _new_axes("sample paths", "t", "X(t)")
    for p in paths:
        ax.plot(p.grid.times(), p.states[:, 0], lw=0.9)
    ax.axvline(0.0, color="k", lw=0.8, ls="--", alpha=0.5)
    _finish(fig, outfile)


def render_probe(report, outfile) -> None:
    """Probe estimates (or gaps) with error bars against the offset."""
    if report.gaps:
        y = np.asarray(report.gaps)
        err = np.asarray(report.combined_se)
        ylabel = "|E f(X^y) - E f(X^x)|"
    else:
        y = np.asarray(report.estimates)
        err = np.asarray(report.stderrs)
        ylabel = "E ||X^y - X^x||^gamma"
    fig, ax = _new_axes(f"{report.kind} probe: {report.verdict}",
                        "||y - x||_inf", ylabel)
    x = np.asarray(report.distances)
    ax.errorbar(x, y, yerr=3 * err, fmt="o-", capsize=3, label="estimate ± 3 se")
    if report.limit_gap is not None:
        ax.axhline(report.limit_gap, color="C3", lw=1.0, ls=":",
                   label=f"extrapolated limit = {report.limit_gap:.3g}")
    ax.set_xscale("log")
    ax.legend()
    _finish(fig, outfile)


def render_weights(log_weights, ess_value, outfile) -> None:
    """Histogram of log importance weights with the ESS in the title."""
    fig, ax = _new_axes(
        f"log Girsanov weights (ESS = {ess_value:.1f} of {len(log_weights)})",
        "log weight", "count")
    ax.hist(np.asarray(log_weights), bins=60, color="C0", alpha=0.85)
    ax.axvline(0.0, color="k", lw=0.8, ls="--", alpha=0.5)
    _finish(fig, outfile)


def render_pde_solution(sol, outfile) -> None:
    """Corrector profiles at a few time levels."""
    fig, ax = _new_axes("backward PDE corrector", "x", "u(t, x)")
    ts = sol.grid.ts()
    xs = sol.grid.xs()
    picks = np.unique(np.linspace(0, len(ts) - 1, 5).astype(int))
    for j in picks:
        ax.plot(xs, sol.values[j], label=f"t = {ts[j]:.3g}")
    ax.legend()
    _finish(fig, outfile)


def render_delta_report(report, outfile) -> None:
    """Per-window gradient bounds of the certified contraction windows."""
    fig, ax = _new_axes(
        f"contraction windows, delta = {report.delta:g}",
        "window start S", "max |du/dx| on [S, S+delta]")
    if report.window_bounds:
        starts = [w[0] for w in report.window_bounds]
        bounds = [w[2] for w in report.window_bounds]
        ax.plot(starts, bounds, "o-")
    ax.axhline(0.5, color="C3", ls="--", lw=1.0, label="1/2 threshold")
    ax.legend()
    _finish(fig, outfile)


def render_residual(report, outfile) -> None:
    """Per-step drift residual of the transformed process."""
    res = np.asarray(report.extras.get("per_step_residual", []))
    se = np.asarray(report.extras.get("per_step_stderr", []))
    fig, ax = _new_axes("drift-removal residual", "step", "|mean dY| / h")
    if res.size:
        ax.errorbar(np.arange(res.size), res, yerr=3 * se, fmt="o-",
                    ms=3, capsize=2, label="per-step residual ± 3 se")
    ax.legend()
    _finish(fig, outfile)


def render_bounds(reports, outfile) -> None:
    """Estimate vs bound per check, with 3-sigma whiskers."""
    fig, ax = _new_axes("bound checks", "", "value")
    labels = []
    for i, rep in enumerate(reports):
        labels.append(f"{rep.check}\n({'pass' if rep.passed else 'FAIL'})")
        ax.errorbar([i], [rep.estimate], yerr=[3 * rep.stderr], fmt="o",
                    color="C0", capsize=4)
        if rep.bound is not None:
            ax.plot([i - 0.25, i + 0.25], [rep.bound, rep.bound], color="C3", lw=2)
    ax.set_xticks(range(len(labels)), labels, fontsize=8)
    _finish(fig, outfile)


def render_validation(reports, outfile) -> None:
    """Pass/fail summary of model condition validators."""
    fig, ax = _new_axes("condition validators", "", "")
    ax.set_axis_off()
    lines = [
        f"{rep.check}: {'pass' if rep.passed else 'FAIL'}  "
        + ", ".join(f"{k}={v:.4g}" for k, v in rep.stats.items()
                    if isinstance(v, (int, float)))
        for rep in reports
    ]
    ax.text(0.02, 0.95, "\n".join(lines), va="top", family="monospace", fontsize=9)
    _finish(fig, outfile)
