"""Batch estimator comparison and plotting of run directories."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .runner import simulate

MODES = ("wio", "vo", "viwo")


def compare_estimators(scenario, seeds, modes=MODES, task: int = 1, duration=None, out_dir=None):
    """Final |x| and |y| errors per seed and mode, plus STD / Average / Median rows.

    Returns (header, rows). A mode whose run failed is written as "absent".
    """
    errors = {m: [] for m in modes}
    rows = []
    for seed in seeds:
        row = [str(seed)]
        for m in modes:
            try:
                res = simulate(scenario, task=task, seed=seed, mode=m, duration=duration, out_dir=out_dir)
                ex, ey = res.final_abs_xy()
            except (RuntimeError, ValueError):
                ex = ey = math.nan
            errors[m].append((ex, ey))
            row += ["absent" if math.isnan(ex) else f"{ex:.2f}", "absent" if math.isnan(ey) else f"{ey:.2f}"]
        rows.append(row)
    for label, fn in (("STD", lambda a: np.std(a, ddof=1) if len(a) > 1 else math.nan),
                      ("Average", np.mean), ("Median", np.median)):
        row = [label]
        for m in modes:
            e = np.array(errors[m], dtype=float).reshape(-1, 2)
            e = e[~np.isnan(e).any(axis=1)]
            for k in range(2):
                v = fn(e[:, k]) if len(e) else math.nan
                row.append("absent" if math.isnan(v) else f"{v:.2f}")
        rows.append(row)
    header = ["trial"] + [f"{m}_{ax}" for m in modes for ax in ("x", "y")]
    return header, rows


def median_horizontal(scenario, seeds, modes=MODES, task: int = 1, duration=None) -> dict:
    out = {}
    for m in modes:
        errs = [simulate(scenario, task=task, seed=s, mode=m, duration=duration).final_error() for s in seeds]
        out[m] = float(np.median(errs))
    return out


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path: Path):
    if not path.exists():
        return None
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return rows


def emit_plots(run_dir) -> list:
    """Trajectory (truth vs estimate) and error-vs-time plots for a run
    directory. Returns the written image paths. An empty trajectory still
    produces plots, annotated as empty."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run_dir = Path(run_dir)
    traj = _read_csv(run_dir / "trajectory.csv")
    if traj is None:
        raise FileNotFoundError(f"no trajectory.csv in {run_dir}")
    homing = _read_csv(run_dir / "homing.csv") or []
    cols = {k: np.array([float(r[k]) for r in traj]) for k in ("t", "truth_x", "truth_y", "est_x", "est_y", "err_h")}
    written = []

    fig, ax = plt.subplots(figsize=(6, 6))
    if len(traj):
        ax.plot(cols["truth_x"], cols["truth_y"], label="truth")
        ax.plot(cols["est_x"], cols["est_y"], "--", label="estimate")
        ax.legend()
    else:
        ax.text(0.5, 0.5, "empty trajectory", ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    p = run_dir / "trajectory.png"
    fig.savefig(p, dpi=100)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(7, 4))
    if len(traj):
        ax.plot(cols["t"], cols["err_h"])
        for h in homing:
            ax.axvline(float(h["t"]), color="k", ls=":", lw=0.8)
    else:
        ax.text(0.5, 0.5, "empty trajectory", ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("horizontal error [m]")
    p = run_dir / "error.png"
    fig.savefig(p, dpi=100)
    plt.close(fig)
    written.append(p)
    return written
