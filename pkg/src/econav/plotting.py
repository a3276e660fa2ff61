"""Post-hoc figures rendered from the trajectory CSV."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read_trajectory(path):
    """CSV -> dict of column name to array (``solver_status`` kept as strings)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in body]
        cols[name] = vals if name == "solver_status" else np.array(vals, dtype=float)
    return cols


def _d_eo_columns(cols):
    return sorted((k for k in cols if k.startswith("d_EO_")), key=lambda k: int(k.split("_")[-1]))


def plot_run(csv_path, out_dir, stem=None, d_safe=2.0, label=None):
    """Write path, clearance, speed/energy and power figures; returns the PNG paths."""
    cols = read_trajectory(csv_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or Path(csv_path).stem
    t = cols["t"]
    written = []

    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(cols["p_x"], cols["p_y"], lw=1.5, label=label or "EV")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best", fontsize=8)
    written.append(_save(fig, out_dir / f"{stem}-path.png"))

    fig, ax = plt.subplots(figsize=(6, 3))
    for k in _d_eo_columns(cols):
        ax.plot(t, np.minimum(cols[k], 20.0), lw=1.2, label=k.replace("_", " ", 1))
    ax.axhline(d_safe, color="0.5", ls="--", lw=1, label="d_safe")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("clearance [m] (clipped at 20)")
    ax.legend(loc="best", fontsize=8)
    written.append(_save(fig, out_dir / f"{stem}-clearance.png"))

    fig, (a1, a2) = plt.subplots(2, 1, figsize=(6, 4.5), sharex=True)
    a1.plot(t, cols["v_x"], lw=1.2)
    a1.set_ylabel("v_x [m/s]")
    a2.plot(t, cols["gamma"], lw=1.2)
    a2.set_ylabel("state of energy")
    a2.set_xlabel("t [s]")
    written.append(_save(fig, out_dir / f"{stem}-speed-energy.png"))

    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(t, cols["P_b"] / 1e3, lw=1.2, label="battery")
    ax.plot(t, cols["P_lat"] / 1e3, lw=1.2, label="lateral dissipation")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("power [kW]")
    ax.legend(loc="best", fontsize=8)
    written.append(_save(fig, out_dir / f"{stem}-power.png"))
    return written


def plot_comparison(aware_csv, unaware_csv, out_path):
    """Overlay speed and state of energy for the two controllers."""
    a, u = read_trajectory(aware_csv), read_trajectory(unaware_csv)
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(6, 4.5), sharex=True)
    for cols, name in ((a, "energy aware"), (u, "energy unaware")):
        a1.plot(cols["t"], cols["v_x"], lw=1.2, label=name)
        a2.plot(cols["t"], cols["gamma"], lw=1.2, label=name)
    a1.set_ylabel("v_x [m/s]")
    a2.set_ylabel("state of energy")
    a2.set_xlabel("t [s]")
    a1.legend(loc="best", fontsize=8)
    return _save(fig, Path(out_path))


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
