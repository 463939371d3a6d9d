from __future__ import annotations

from pathlib import Path


PLOT_SCRIPT_NAME = "plot_results.py"

PLOT_TEMPLATE = '''"""Plots for a {kind} run. Requires matplotlib and pandas."""

from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd


HERE = Path(__file__).resolve().parent


def plot_run(run_dir):
    trajectory = pd.read_csv(run_dir / "trajectory.csv")
    spikes = pd.read_csv(run_dir / "spikes.csv")

    fig, ax = plt.subplots(3, figsize=(10, 8), sharex=True, gridspec_kw={{"height_ratios": [1, 1, 1.5]}})
    ax[0].plot(trajectory["t"], trajectory["target"], label="target")
    ax[0].plot(trajectory["t"], trajectory["encoder"], label="encoder")
    ax[0].set_ylabel("position")
    ax[0].legend(loc="upper right")

    ax[1].plot(trajectory["t"], trajectory["expected_error"], label="a - b")
    ax[1].plot(trajectory["t"], trajectory["decoded_error"], label="decoded c")
    ax[1].set_ylabel("error")
    ax[1].legend(loc="upper right")

    for population, group in spikes.groupby("population"):
        ax[2].scatter(group["t_ms"] / 1000.0, group["neuron_id"], s=1, marker="|", label=population)
    ax[2].set_ylabel("neuron")
    ax[2].set_xlabel("time (s)")

    fig.suptitle(str(run_dir.relative_to(HERE)) if run_dir != HERE else "{kind}")
    fig.tight_layout()
    fig.savefig(run_dir / "plot.png", dpi=120)
    plt.close(fig)


def main():
    for trajectory in sorted(HERE.rglob("trajectory.csv")):
        plot_run(trajectory.parent)
        print(f"Wrote {{trajectory.parent / 'plot.png'}}")


if __name__ == "__main__":
    main()
'''


def render_plot_script(kind: str) -> str:
    return PLOT_TEMPLATE.format(kind=kind)


def write_plot_script(output_dir: Path, kind: str) -> Path:
    """Write a standalone plotting script next to the run's CSV files."""

    path = output_dir / PLOT_SCRIPT_NAME
    path.write_text(render_plot_script(kind), encoding="utf-8")
    return path
