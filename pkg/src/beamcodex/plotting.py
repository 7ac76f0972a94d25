"""Optional SVG charts of the CSV outputs (requires matplotlib)."""

from __future__ import annotations

import os

from .harness.records import read_csv


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_sweep(summary_csv, out_dir):
    """One Eff-SSE line chart per sweep axis, one line per scheme."""
    plt = _pyplot()
    rows = read_csv(summary_csv)
    written = []
    for axis in sorted({r["axis"] for r in rows}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for scheme in ("MU-MIMO", "SU-MIMO", "non-PMI"):
            pts = sorted((int(r["value"]), float(r["mean_eff_sse"]))
                         for r in rows if r["axis"] == axis and r["scheme"] == scheme)
            if pts:
                ax.plot(*zip(*pts), marker="o", label=scheme)
        ax.set_xlabel(axis.upper())
        ax.set_ylabel("Eff-SSE [bit/s/Hz]")
        ax.grid(alpha=0.3)
        ax.legend()
        path = os.path.join(out_dir, f"sweep_{axis}.svg")
        fig.tight_layout()
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written


def plot_cdf(cdf_csv, out_dir):
    plt = _pyplot()
    rows = read_csv(cdf_csv)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for kind in ("no-BF", "DFT", "BSC", "RSV"):
        pts = [(float(r["rsrp_dbm"]), int(r["percentile"]) / 100) for r in rows if r["kind"] == kind]
        if pts:
            ax.plot(*zip(*pts), label=kind)
    ax.set_xlabel("best-beam RSRP [dBm]")
    ax.set_ylabel("CDF")
    ax.grid(alpha=0.3)
    ax.legend()
    path = os.path.join(out_dir, "ssb_cdf.svg")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return [path]


def render_all(in_dir, out_dir):
    """Charts for whichever of ``sweep_summary.csv`` / ``ssb_cdf.csv`` exist in ``in_dir``."""
    written = []
    sweep = os.path.join(in_dir, "sweep_summary.csv")
    cdf = os.path.join(in_dir, "ssb_cdf.csv")
    if os.path.exists(sweep):
        written += plot_sweep(sweep, out_dir)
    if os.path.exists(cdf):
        written += plot_cdf(cdf, out_dir)
    if not written:
        raise FileNotFoundError(f"no sweep_summary.csv or ssb_cdf.csv in {in_dir}")
    return written
