"""PNG figures rendered from a run directory's CSV files (Agg backend, no display)."""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _floats(rows, key):
    return [float(r[key]) if r[key] not in ("", None) else float("nan") for r in rows]


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_metrics(run_dir):
    rows = _read(Path(run_dir) / "metrics.csv")
    epochs = [int(r["epoch"]) for r in rows]
    fig, (ax_r, ax_c) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_r.plot(epochs, _floats(rows, "J_r"), marker="o", label="learner")
    ax_r.plot(epochs, _floats(rows, "JE_r"), ls="--", label="expert")
    ax_r.set(xlabel="epoch", ylabel="reward value", title="reward")
    ax_c.plot(epochs, _floats(rows, "J_cstar"), marker="o", label="learner")
    ax_c.plot(epochs, _floats(rows, "JE_cstar"), ls="--", label="expert")
    ax_c.axhline(0.0, color="grey", lw=0.8)
    ax_c.set(xlabel="epoch", ylabel="true constraint value", title="true constraint")
    for ax in (ax_r, ax_c):
        ax.legend()
    return _save(fig, Path(run_dir) / "metrics.png")


def plot_regret(run_dir):
    rows = _read(Path(run_dir) / "regret.csv")
    if rows and "task_id" in rows[0]:
        rows = [r for r in rows if r["task_id"] == "all"]
    rounds = [int(r["round"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(rounds, _floats(rows, "avg_regret"), marker="o")
    ax.set(xlabel="round", ylabel="average regret", title="constraint-player regret")
    return _save(fig, Path(run_dir) / "regret.png")


def plot_readout(run_dir):
    rows = _read(Path(run_dir) / "readout.csv")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([int(r["epoch"]) for r in rows], _floats(rows, "value"), marker="o")
    ax.set(xlabel="epoch", ylabel=rows[0]["name"] if rows else "", title="readout per epoch")
    return _save(fig, Path(run_dir) / "readout.png")


def plot_grid(run_dir):
    run_dir = Path(run_dir)
    pred = [[int(v) for v in r.values()] for r in _read(run_dir / "constraint_grid.csv")]
    truth = [[int(v) for v in r.values()] for r in _read(run_dir / "truth_grid.csv")]
    fig, axes = plt.subplots(1, 2, figsize=(7, 3.5))
    for ax, grid, title in zip(axes, (pred, truth), ("learned unsafe cells", "true walls")):
        ax.imshow(grid, cmap="Greys", vmin=0, vmax=1, origin="lower")
        ax.set(title=title, xticks=[], yticks=[])
    return _save(fig, run_dir / "constraint_grid.png")


def render_run(run_dir):
    """Render whichever figures the run directory has data for; returns the written paths."""
    run_dir = Path(run_dir)
    jobs = [
        ("metrics.csv", plot_metrics),
        ("regret.csv", plot_regret),
        ("readout.csv", plot_readout),
        ("constraint_grid.csv", plot_grid),
    ]
    return [fn(run_dir) for name, fn in jobs if (run_dir / name).exists()]
