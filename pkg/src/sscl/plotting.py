"""Figures for verification reports (Agg backend, PNG files next to the report)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (4.8, 3.2),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path):
    fig.tight_layout()
    # no software/date metadata, keeps files stable across reruns
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def _band(ax, x, mu, se, label, **kw):
    x, mu, se = map(np.asarray, (x, mu, se))
    line, = ax.plot(x, mu, marker="o", ms=3, label=label, **kw)
    ax.fill_between(x, mu - 3 * se, mu + 3 * se, color=line.get_color(), alpha=0.2, lw=0)


def _cols(series, name):
    header, rows = series[name]
    return {h: [r[i] for r in rows] for i, h in enumerate(header)}


def plot_contraction(report, out):
    s = report.series
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if "l1_distance" in s:
            c = _cols(s, "l1_distance")
            _band(ax, c["t"], c["mean"], c["stderr"], "E int|u1-u2| (3 stderr band)")
        if "deterministic_l1" in s:
            c = _cols(s, "deterministic_l1")
            steps = np.asarray(c["step"], dtype=float)
            T = report.meta.get("T", 1.0)
            ax.plot(steps / max(steps[-1], 1) * T, c["l1"], lw=1, label="B=0")
        ax.set_xlabel("t")
        ax.set_ylabel("L1 distance")
        ax.legend()
        _save(fig, out / "contraction.png")
    return [out / "contraction.png"]


def plot_lp(report, out):
    c = _cols(report.series, "k_hat")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for p in sorted(set(c["p"])):
            sel = [i for i, q in enumerate(c["p"]) if q == p]
            _band(ax, [c["eps"][i] for i in sel], [c["K_hat"][i] for i in sel],
                  [c["stderr"][i] for i in sel], f"p={p:g}")
        ax.set_xscale("log")
        ax.set_xlabel("eps")
        ax.set_ylabel("K_hat")
        ax.legend()
        _save(fig, out / "lp_bounds.png")
    return [out / "lp_bounds.png"]


def plot_kinetic_mass(report, out):
    c = _cols(report.series, "kinetic_mass")
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7.2, 3.0))
        _band(a1, c["eps"], c["mass_mean"], c["mass_stderr"], "total mass")
        _band(a2, c["eps"], c["q_mean"], c["q_stderr"], "second moment")
        for a in (a1, a2):
            a.set_xscale("log")
            a.set_xlabel("eps")
            a.legend()
        _save(fig, out / "kinetic_mass.png")
    return [out / "kinetic_mass.png"]


def plot_vanishing_viscosity(report, out):
    c = _cols(report.series, "cauchy")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        _band(ax, c["eps"], c["l1_mean"], c["l1_stderr"], "E|u^eps - u^{eps/2}|")
        floor = report.meta.get("diffusion_floor")
        if floor:
            ax.axvline(floor, color="k", ls="--", lw=0.8, label="diffusion floor")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("eps")
        ax.legend()
        _save(fig, out / "vanishing_viscosity.png")
    return [out / "vanishing_viscosity.png"]


def _two_level(report, out, name, key, label):
    c = _cols(report.series, key)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(c["level"]))
        cols = [h for h in c if h.startswith("mean")]
        for j, h in enumerate(cols):
            se = c[h.replace("mean", "stderr")]
            ax.bar(x + 0.35 * j, np.abs(c[h]), 0.35, yerr=3 * np.asarray(se), label=h)
        ax.set_xticks(x + 0.175, c["level"])
        ax.set_ylabel(label)
        ax.set_yscale("log")
        ax.legend()
        _save(fig, out / f"{name}.png")
    return [out / f"{name}.png"]


PLOTTERS = {
    "contraction": plot_contraction,
    "lp_bounds": plot_lp,
    "kinetic_mass": plot_kinetic_mass,
    "vanishing_viscosity": plot_vanishing_viscosity,
    "energy_identity": lambda r, o: _two_level(r, o, "energy_identity", "energy_residual", "|mean residual|"),
    "weak_residual": lambda r, o: _two_level(r, o, "weak_residual", "weak_residual", "mean |residual|"),
}


def render(report, out_dir) -> list[Path]:
    """Figures for a suite report; suites without series produce none."""
    fn = PLOTTERS.get(report.suite)
    if fn is None or not report.series:
        return []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return fn(report, out)
