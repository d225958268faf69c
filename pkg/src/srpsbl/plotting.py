"""PNG figures for CLI reports (direction maps, LE versus duration).

Figures are built on an explicit Agg canvas so nothing here touches the
global pyplot state or needs a display.
"""
from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

_METHOD_STYLE = {
    "srp_phat": ("SRP-PHAT", "o"),
    "msbl_direct": ("M-SBL", "s"),
    "srp_s": ("SRP-S", "^"),
    "srp_sbl": ("SRP-SBL", "D"),
}


def _figure(width=6.0, height=3.6):
    fig = Figure(figsize=(width, height), dpi=120)
    FigureCanvasAgg(fig)
    return fig


def _as_image(values, grid):
    return np.asarray(values, dtype=float).reshape(grid.n_elevation, grid.n_azimuth)


def plot_map(values, grid, path, truths=(), estimates=(), title=None):
    """Direction map as an elevation x azimuth image with optional markers."""
    img = _as_image(values, grid)
    el = np.unique(grid.elevations)
    az = np.unique(grid.azimuths)
    fig = _figure()
    ax = fig.add_subplot()
    half_el = (el[1] - el[0]) / 2 if el.size > 1 else 1.0
    half_az = (az[1] - az[0]) / 2 if az.size > 1 else 1.0
    mesh = ax.imshow(img, origin="lower", aspect="auto", cmap="viridis",
                     extent=(az[0] - half_az, az[-1] + half_az, el[0] - half_el, el[-1] + half_el))
    fig.colorbar(mesh, ax=ax, pad=0.02)
    if truths:
        ax.scatter([t.azimuth for t in truths], [t.elevation for t in truths], s=60,
                   facecolors="none", edgecolors="white", linewidths=1.5, label="truth")
    if estimates:
        ax.scatter([e.azimuth for e in estimates], [e.elevation for e in estimates], s=40,
                   marker="x", color="red", linewidths=1.5, label="estimate")
    if truths or estimates:
        ax.legend(loc="upper right", fontsize=7, framealpha=0.6)
    ax.set_xlabel("azimuth (deg)")
    ax.set_ylabel("elevation (deg)")
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path)
    return path


def plot_le_vs_duration(rows, path):
    """Median LE with interquartile bars per method from aggregated rows.

    ``rows`` are dicts with method, duration_s, median_le_deg, q1_le_deg and
    q3_le_deg, as written by ``srpsbl compare``.
    """
    fig = _figure()
    ax = fig.add_subplot()
    methods = list(dict.fromkeys(r["method"] for r in rows))
    for i, m in enumerate(methods):
        sub = sorted((r for r in rows if r["method"] == m), key=lambda r: r["duration_s"])
        d = np.array([r["duration_s"] for r in sub])
        med = np.array([r["median_le_deg"] for r in sub])
        lo = med - np.array([r["q1_le_deg"] for r in sub])
        hi = np.array([r["q3_le_deg"] for r in sub]) - med
        label, marker = _METHOD_STYLE.get(m, (m, "o"))
        # small horizontal offsets keep the bars of different methods apart
        shift = 1.0 + 0.03 * (i - (len(methods) - 1) / 2)
        ax.errorbar(d * shift, med, yerr=[lo, hi], marker=marker, capsize=3, label=label)
    ax.set_xscale("log")
    durations = sorted({r["duration_s"] for r in rows})
    ax.set_xticks(durations)
    ax.set_xticklabels([f"{d:g}" for d in durations])
    ax.set_xlabel("recording duration (s)")
    ax.set_ylabel("localization error (deg)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    return path
