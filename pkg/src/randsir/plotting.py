"""SVG figure: stacked S, I, R time panels on the left, (S, I) phase panel on the right."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .integrator import Trajectory  # noqa: E402

_LABELS = ("S", "I", "R")


def plot_figure(series: Sequence[Trajectory], reference: Optional[Trajectory],
                dest: Union[str, Path], title: str = "") -> Path:
    dest = Path(dest)
    plt.rcParams["svg.hashsalt"] = "randsir"
    fig = plt.figure(figsize=(10, 6))
    grid = fig.add_gridspec(3, 2, width_ratios=(1, 1.2))
    time_axes = [fig.add_subplot(grid[i, 0]) for i in range(3)]
    phase_ax = fig.add_subplot(grid[:, 1])

    for traj in series:
        for i, ax in enumerate(time_axes):
            ax.plot(traj.t, traj.states[:, i], lw=0.9)
        phase_ax.plot(traj.S, traj.I, lw=0.9)
    if reference is not None:
        for i, ax in enumerate(time_axes):
            ax.plot(reference.t, reference.states[:, i], "k--", lw=1.2)
        phase_ax.plot(reference.S, reference.I, "k--", lw=1.2, label="deterministic")
        phase_ax.legend(loc="upper right")

    for ax, label in zip(time_axes, _LABELS):
        ax.set_ylabel(label)
    time_axes[-1].set_xlabel("t")
    for ax in time_axes[:-1]:
        ax.tick_params(labelbottom=False)
    phase_ax.set_xlabel("S")
    phase_ax.set_ylabel("I")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(dest, format="svg", metadata={"Date": None})
    plt.close(fig)
    return dest
