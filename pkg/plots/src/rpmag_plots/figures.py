"""Figure builders over the rpmag file formats.

Each builder reads one or more CSV tables (with their ``*.meta.json``
sidecars when present), renders a figure to the requested image path, and
returns a small info dict (dimensions, axis metadata, mask counts) used by
callers and tests. Input files are never modified, figures embed the
config hash from the sidecar in the image metadata, and rendering the same
inputs twice produces identical images.
"""

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIGURE_DPI = 150

SWEEP_COLUMNS = (
    "nu_d_MHz", "J0_over_2pi_MHz", "theta_rad", "phi_rad", "Phi_S",
    "Gamma", "F_theta", "QFI_theta", "ratio", "ratio_mean", "flags",
)
ORIENTATION_COLUMNS = (
    "theta_rad", "phi_rad", "Phi_S", "Theta_S", "F_theta", "QFI_theta", "ratio", "flags",
)
COMPARISON_METRICS = ("Gamma", "NF_theta", "NQFI_theta")
TRACE_COLUMNS = ("t_us", "trace", "p_S", "r_A", "kb_per_us")


class SchemaError(Exception):
    """Input file does not match the documented column schema."""


def read_table(path, required: tuple) -> dict:
    """Parse a headered CSV into column arrays; empty cells become nan."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}; found {header}")
    idx = {c: header.index(c) for c in header}
    out = {}
    for col in header:
        values = [r[idx[col]] for r in rows]
        if col == "flags":
            out[col] = values
        else:
            out[col] = np.array([float(v) if v != "" else np.nan for v in values])
    return out


def read_sidecar(path) -> dict:
    """Sidecar metadata for a table, or {} when absent."""
    sidecar = Path(str(path) + ".meta.json")
    if not sidecar.exists():
        return {}
    return json.loads(sidecar.read_text())


def _png_metadata(config_hash: str) -> dict:
    from . import __version__

    meta = {"Software": f"rpmag-plots {__version__}"}
    if config_hash:
        meta["rpmag-config-hash"] = config_hash
    return meta


def _save(fig, out_path, config_hash):
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=FIGURE_DPI, metadata=_png_metadata(config_hash))
    plt.close(fig)


def _edges(values: np.ndarray, log: bool = False) -> np.ndarray:
    """Cell edges for pcolormesh from (possibly single) sample positions."""
    v = np.log10(values) if log else values
    if v.size == 1:
        half = 0.05 * max(abs(v[0]), 1.0)
        e = np.array([v[0] - half, v[0] + half])
    else:
        mid = 0.5 * (v[1:] + v[:-1])
        e = np.concatenate([[v[0] - (mid[0] - v[0])], mid, [v[-1] + (v[-1] - mid[-1])]])
    return 10.0**e if log else e


def plot_heatmap(sweep_csv, out_path):
    """Ratio heatmap over (driving frequency, exchange coupling).

    The frequency axis is logarithmic, the coupling axis linear; colors are
    the CFI/QFI ratio clipped to [0, 1], and rows flagged as filtered (or
    with no defined ratio) render as masked cells.
    """
    table = read_table(sweep_csv, SWEEP_COLUMNS)
    meta = read_sidecar(sweep_csv)
    nus = np.unique(table["nu_d_MHz"])
    j0s = np.unique(table["J0_over_2pi_MHz"])
    grid = np.full((nus.size, j0s.size), np.nan)
    masked = 0
    for k in range(table["nu_d_MHz"].size):
        i = int(np.searchsorted(nus, table["nu_d_MHz"][k]))
        j = int(np.searchsorted(j0s, table["J0_over_2pi_MHz"][k]))
        flags = table["flags"][k]
        ratio = table["ratio"][k]
        if "filtered" in flags or "ratio-undefined" in flags or math.isnan(ratio):
            masked += 1
            continue
        grid[i, j] = min(max(ratio, 0.0), 1.0)

    fig, ax = plt.subplots(figsize=(7.0, 5.0))
    mesh = ax.pcolormesh(
        _edges(j0s), _edges(nus, log=nus.min() > 0), np.ma.masked_invalid(grid),
        cmap="viridis", vmin=0.0, vmax=1.0,
    )
    if nus.min() > 0:
        ax.set_yscale("log")
    ax.set_xlabel("J0 / 2pi (MHz)")
    ax.set_ylabel("driving frequency (MHz)")
    ax.set_title("CFI/QFI ratio (masked where filtered)")
    cbar = fig.colorbar(mesh, ax=ax)
    cbar.set_label("CFI / QFI")
    _annotate_hash(ax, meta.get("config_hash", ""))
    _save(fig, out_path, meta.get("config_hash", ""))
    return {
        "size": (int(7.0 * FIGURE_DPI), int(5.0 * FIGURE_DPI)),
        "cells": int(grid.size),
        "masked": masked,
        "color_range": (0.0, 1.0),
        "xlabel": "J0 / 2pi (MHz)",
        "ylabel": "driving frequency (MHz)",
    }


def _annotate_hash(ax, config_hash):
    if config_hash:
        ax.annotate(
            f"config {config_hash}", xy=(0.99, -0.13), xycoords="axes fraction",
            ha="right", fontsize=6, color="0.4", annotation_clip=False,
        )


def plot_yield_profile(orientation_csv, out_path):
    """Singlet-yield profile over field orientations with extrema marked.

    Theta-only scans render as a line; full grids as a (theta, phi)
    heatmap. The relative anisotropy recomputed from the yields goes in
    the title. Grids with fewer than three orientations are rejected.
    """
    table = read_table(orientation_csv, ORIENTATION_COLUMNS)
    meta = read_sidecar(orientation_csv)
    yields = table["Phi_S"]
    if yields.size < 3:
        raise SchemaError(
            f"{orientation_csv}: need at least 3 orientations for a profile, got {yields.size}"
        )
    mean = yields.mean()
    gamma = (yields.max() - yields.min()) / mean if mean > 0 else 0.0
    imax, imin = int(np.argmax(yields)), int(np.argmin(yields))
    shape = meta.get("grid_shape")
    if not shape:
        n_phi = np.unique(table["phi_rad"]).size
        shape = [yields.size // n_phi, n_phi]

    fig, ax = plt.subplots(figsize=(7.0, 5.0))
    if shape[1] == 1:
        ax.plot(table["theta_rad"], yields, "-", color="tab:blue")
        ax.plot(table["theta_rad"][imax], yields[imax], "^", color="tab:red", label="max")
        ax.plot(table["theta_rad"][imin], yields[imin], "v", color="tab:green", label="min")
        ax.set_xlabel("theta (rad)")
        ax.set_ylabel("singlet yield")
        ax.legend(loc="best")
        kind = "line"
    else:
        zz = yields.reshape(shape[0], shape[1])
        thetas = table["theta_rad"].reshape(shape[0], shape[1])[:, 0]
        phis = table["phi_rad"].reshape(shape[0], shape[1])[0, :]
        mesh = ax.pcolormesh(_edges(phis), _edges(thetas), zz, cmap="cividis")
        ax.plot(table["phi_rad"][imax], table["theta_rad"][imax], "^", color="tab:red")
        ax.plot(table["phi_rad"][imin], table["theta_rad"][imin], "v", color="white")
        ax.set_xlabel("phi (rad)")
        ax.set_ylabel("theta (rad)")
        fig.colorbar(mesh, ax=ax, label="singlet yield")
        kind = "surface"
    ax.set_title(f"yield profile, relative anisotropy = {gamma:.4g}")
    _annotate_hash(ax, meta.get("config_hash", ""))
    _save(fig, out_path, meta.get("config_hash", ""))
    return {
        "size": (int(7.0 * FIGURE_DPI), int(5.0 * FIGURE_DPI)),
        "kind": kind,
        "gamma": gamma,
        "argmax": imax,
        "argmin": imin,
    }


def plot_comparison(series_csvs, out_path):
    """Metric panels versus exchange coupling for two or more series.

    Every input must carry the same J0 axis and the same subset of the
    metric columns (Gamma, NF_theta, NQFI_theta); one panel per metric.
    """
    if len(series_csvs) < 2:
        raise SchemaError("comparison needs at least two series files")
    tables, labels, hashes = [], [], []
    for path in series_csvs:
        table = read_table(path, ("J0_over_2pi_MHz",))
        meta = read_sidecar(path)
        tables.append(table)
        labels.append(meta.get("series") or Path(path).stem)
        if meta.get("config_hash"):
            hashes.append(meta["config_hash"])

    metrics = [m for m in COMPARISON_METRICS if m in tables[0]]
    if not metrics:
        raise SchemaError(
            f"{series_csvs[0]}: no metric columns found (expected any of {COMPARISON_METRICS})"
        )
    for path, table in zip(series_csvs, tables):
        missing = [m for m in metrics if m not in table]
        if missing:
            raise SchemaError(f"{path}: missing metric columns {missing}")
        if table["J0_over_2pi_MHz"].size != tables[0]["J0_over_2pi_MHz"].size:
            raise SchemaError(
                f"{path}: series length {table['J0_over_2pi_MHz'].size} does not match "
                f"{tables[0]['J0_over_2pi_MHz'].size} in {series_csvs[0]}"
            )

    fig, axes = plt.subplots(
        1, len(metrics), figsize=(4.0 * len(metrics), 4.0), squeeze=False
    )
    for ax, metric in zip(axes[0], metrics):
        for table, label in zip(tables, labels):
            ax.plot(table["J0_over_2pi_MHz"], table[metric], marker="o", ms=3, label=label)
        ax.set_xlabel("J0 / 2pi (MHz)")
        ax.set_ylabel(metric)
        if np.all([np.all(t[metric] > 0) for t in tables]):
            ax.set_yscale("log")
    axes[0][0].legend(loc="best", fontsize=8)
    config_hash = hashes[0] if hashes else ""
    _annotate_hash(axes[0][-1], config_hash)
    fig.tight_layout()
    _save(fig, out_path, config_hash)
    return {
        "size": (int(4.0 * len(metrics) * FIGURE_DPI), int(4.0 * FIGURE_DPI)),
        "panels": len(metrics),
        "series": labels,
    }


def plot_trace(trace_path, out_path):
    """Survival trace and singlet probability of one run versus time."""
    data = np.loadtxt(trace_path, ndmin=2)
    if data.shape[1] != len(TRACE_COLUMNS):
        raise SchemaError(
            f"{trace_path}: expected {len(TRACE_COLUMNS)} columns {TRACE_COLUMNS}, "
            f"got {data.shape[1]}"
        )
    t, trace, p_s, r, kb = data.T
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7.0, 6.0), sharex=True)
    ax1.plot(t, trace, label="trace")
    ax1.plot(t, p_s, label="singlet probability")
    ax1.set_ylabel("population")
    ax1.legend(loc="best")
    ax2.plot(t, r, color="tab:orange", label="interradical distance (A)")
    ax2.set_ylabel("r (A)")
    ax2.set_xlabel("t (us)")
    twin = ax2.twinx()
    twin.plot(t, kb, color="tab:green", lw=0.8, label="k_b (1/us)")
    twin.set_ylabel("k_b (1/us)")
    fig.tight_layout()
    _save(fig, out_path, "")
    return {"size": (int(7.0 * FIGURE_DPI), int(6.0 * FIGURE_DPI)), "points": int(t.size)}
