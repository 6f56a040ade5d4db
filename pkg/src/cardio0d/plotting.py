"""Figures written to files: beat transients and cohort means against healthy ranges."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .observables import DISPLAY_NAMES, UNITS  # noqa: E402

plt.rcParams.update({
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
})

_PANELS = (
    ("Left heart and systemic arteries [mmHg]", ("p_LV", "p_LA", "p_AR_SYS")),
    ("Right heart and pulmonary arteries [mmHg]", ("p_RV", "p_RA", "p_AR_PUL")),
    ("Left volumes [mL]", ("V_LV", "V_LA")),
    ("Right volumes [mL]", ("V_RV", "V_RA")),
)
_STYLES = {"p_LV": "-", "p_LA": "--", "p_AR_SYS": ":", "p_RV": "-", "p_RA": "--",
           "p_AR_PUL": ":", "V_LV": "-", "V_LA": "--", "V_RV": "-", "V_RA": "--"}


def _save(fig, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def _series(traj, name):
    return traj.state(name) if name.startswith("V_") or name.startswith("p_AR") else \
        traj.signal(name)


def plot_transients(trajectories, path, title: str = "") -> None:
    """Pressures and volumes over one beat normalised to unit duration.

    ``trajectories`` is a sequence of (label, Trajectory); one colour per label.
    """
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    colours = plt.cm.viridis(np.linspace(0, 0.9, max(len(trajectories), 1)))
    for (label, traj), c in zip(trajectories, colours):
        t = traj.times / traj.beat_period
        for ax, (_, names) in zip(axes.flat, _PANELS):
            for n in names:
                ax.plot(t, _series(traj, n), _STYLES[n], color=c, lw=1.0,
                        label=f"{n} {label}".strip() if len(trajectories) == 1 else None)
    for ax, (heading, names) in zip(axes.flat, _PANELS):
        ax.set_title(heading, fontsize=9)
        ax.set_xlim(0, 1)
        ax.plot([], [], "k-", label=names[0])
        for n in names[1:]:
            ax.plot([], [], "k" + _STYLES[n], label=n)
        ax.legend(frameon=False, fontsize=7, loc="upper right")
    for ax in axes[1]:
        ax.set_xlabel("normalised time [-]")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def plot_range_chart(results, path, title: str = "") -> None:
    """Cohort mean ± std of each quantity on a scale where its healthy range spans [0, 1]."""
    rows = [r for r in results if r.summary is not None and r.healthy is not None
            and r.healthy.lower is not None and r.healthy.upper is not None]
    fig, ax = plt.subplots(figsize=(7, 0.3 * len(rows) + 1.2))
    ax.axvspan(0, 1, color="0.9", label="healthy range")
    for k, r in enumerate(rows):
        lo, hi = r.healthy.lower, r.healthy.upper
        m = (r.summary.mean - lo) / (hi - lo)
        s = r.summary.std / (hi - lo)
        colour = {"I": "tab:red", "II": "tab:blue", "III": "0.5"}.get(r.group, "k")
        ax.errorbar(m, k, xerr=s, fmt="o", color=colour, ms=4, capsize=2)
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels([f"{DISPLAY_NAMES.get(r.name, r.name)} [{UNITS.get(r.name, '')}]"
                        f" ({r.group})" for r in rows])
    ax.invert_yaxis()
    ax.set_xlabel("position relative to the healthy range [-]")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
