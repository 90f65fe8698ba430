"""Optional figures rendered from the CSV outputs (``--plot``).

Figures are derived from the CSVs after they are written, so the CSVs
themselves never depend on whether plotting ran.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "font.size": 9,
    "axes.linewidth": 0.6,
    "lines.linewidth": 1.0,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _read(path):
    return np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding=None)


def _save(fig, out, name):
    path = Path(out) / "figures"
    path.mkdir(parents=True, exist_ok=True)
    fig.savefig(path / f"{name}.png", bbox_inches="tight")
    plt.close(fig)
    return path / f"{name}.png"


def plot_md(out):
    out = Path(out)
    with plt.rc_context(STYLE):
        d = _read(out / "trajectory.csv")
        fig, (a0, a1) = plt.subplots(2, 1, sharex=True)
        a0.plot(d["time"], d["e_cm"], label="E_CM")
        a0.plot(d["time"], d["rel_kinetic"], label="relative kinetic")
        a0.set_ylabel("energy")
        a0.legend(frameon=False)
        a1.plot(d["time"], (d["e_total"] - d["e_total"][0]) / abs(d["e_total"][0]))
        a1.set_ylabel("rel. total-energy error")
        a1.set_xlabel("time")
        _save(fig, out, "energies")
        if (out / "dissipation_sweep.csv").exists():
            s = _read(out / "dissipation_sweep.csv")
            fig, ax = plt.subplots()
            ax.loglog(s["epsilon"], s["relative_rms"], "o-")
            ax.set_xlabel("relative amplitude eps")
            ax.set_ylabel("RMS residual / RMS dE_CM/dt")
            _save(fig, out, "dissipation_sweep")


def plot_ensemble(out):
    out = Path(out)
    if not (out / "scaling.csv").exists():
        return
    with plt.rc_context(STYLE):
        s = _read(out / "scaling.csv")
        fig, (a0, a1) = plt.subplots(1, 2)
        a0.loglog(s["N"], s["delta_P"], "o-")
        a0.set_xlabel("N")
        a0.set_ylabel("std of P")
        a1.loglog(s["N"], s["delta_E_total_rel"], "o-", label="E_total")
        a1.set_xlabel("N")
        a1.set_ylabel("relative std")
        a1.legend(frameon=False)
        fig.tight_layout()
        _save(fig, out, "scaling")


def plot_quantum(out):
    out = Path(out)
    with plt.rc_context(STYLE):
        d = _read(out / "quantum.csv")
        fig, (a0, a1) = plt.subplots(2, 1, sharex=True)
        a0.plot(d["time"], d["mean_X"])
        a0.set_ylabel("<X>")
        a1.plot(d["time"], 1.0 - d["purity"])
        a1.set_ylabel("1 - purity")
        a1.set_xlabel("time")
        _save(fig, out, "quantum")
