"""Run reports: metrics as CSV plus matplotlib figures rendered to files."""

from __future__ import annotations

import csv
import math
import os

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .maps import builtin_map, builtin_map_ids  # noqa: E402
from .runner import MetricsReport, Trace  # noqa: E402
from .types import NS_PER_S  # noqa: E402


def write_metrics_csv(metrics: MetricsReport, path) -> None:
    def dump(fh):
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for name in sorted(metrics.scalars):
            w.writerow([name, metrics.scalars[name]])
        for vid in sorted(metrics.per_vehicle_tracking_rms):
            w.writerow([f"tracking_rms_vehicle_{vid}",
                        metrics.per_vehicle_tracking_rms[vid]])
        for (a, b), gap in sorted(metrics.settled_gaps.items()):
            w.writerow([f"settled_gap_{a}_{b}", gap])

    if hasattr(path, "write"):
        dump(path)
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            dump(fh)


def _trace_arrays(trace: Trace):
    vids = list(trace.header.vehicle_ids)
    idx = {vid: i for i, vid in enumerate(vids)}
    n = len(trace.periods)
    t = np.array([p.period for p in trace.periods]) * \
        trace.header.mlc_period_ns / NS_PER_S
    pos = np.full((n, len(vids), 2), np.nan)
    ref = np.full((n, len(vids), 2), np.nan)
    for k, p in enumerate(trace.periods):
        for v in p.vehicles:
            pos[k, idx[v.vehicle_id]] = (v.truth_x, v.truth_y)
            ref[k, idx[v.vehicle_id]] = (v.ref_x, v.ref_y)
    return vids, t, pos, ref


def render_figures(trace: Trace, out_dir: str) -> list[str]:
    """Render the standard figure set into out_dir; returns file paths."""
    os.makedirs(out_dir, exist_ok=True)
    vids, t, pos, ref = _trace_arrays(trace)
    written = []

    fig, ax = plt.subplots(figsize=(6, 6.5))
    if trace.header.map_id in builtin_map_ids():
        for p in builtin_map(trace.header.map_id).paths.values():
            ax.plot(p.xy[:, 0], p.xy[:, 1], color="0.85", lw=1, zorder=0)
    for i, vid in enumerate(vids):
        ax.plot(pos[:, i, 0], pos[:, i, 1], lw=0.8, label=f"vehicle {vid}")
        ax.plot(pos[0, i, 0], pos[0, i, 1], "o", ms=3, color="k")
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"{trace.header.name}: driven paths")
    if len(vids) <= 10:
        ax.legend(fontsize=7, loc="upper right")
    path = os.path.join(out_dir, "paths.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    written.append(path)

    if len(vids) > 1:
        mind = np.full(len(t), np.inf)
        for i in range(len(vids)):
            for j in range(i + 1, len(vids)):
                d = np.linalg.norm(pos[:, i] - pos[:, j], axis=1)
                mind = np.minimum(mind, d)
        fig, ax = plt.subplots(figsize=(7, 3))
        ax.plot(t, mind, lw=0.8)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("min pairwise distance [m]")
        ax.set_title("minimum center distance")
        fig.tight_layout()
        path = os.path.join(out_dir, "min_gap.png")
        fig.savefig(path, dpi=130)
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(figsize=(7, 3))
    for i, vid in enumerate(vids):
        err = np.linalg.norm(pos[:, i] - ref[:, i], axis=1)
        ax.plot(t, err, lw=0.6, label=f"vehicle {vid}")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("tracking error [m]")
    ax.set_title("distance to active reference")
    if len(vids) <= 10:
        ax.legend(fontsize=7, ncols=2)
    fig.tight_layout()
    path = os.path.join(out_dir, "tracking.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    written.append(path)

    wall = np.array([p.wall_ns for p in trace.periods]) / 1e6
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(t, wall, lw=0.6)
    ax.axhline(trace.header.mlc_period_ns / 1e6, color="r", lw=0.8, ls="--",
               label="period budget")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("compute wall time [ms]")
    ax.set_title("per-period compute time")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = os.path.join(out_dir, "timing.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    written.append(path)
    return written


def write_report(trace: Trace, metrics: MetricsReport, out_dir: str) -> list[str]:
    """Figures plus metrics.csv in one directory."""
    os.makedirs(out_dir, exist_ok=True)
    files = render_figures(trace, out_dir)
    csv_path = os.path.join(out_dir, "metrics.csv")
    write_metrics_csv(metrics, csv_path)
    files.append(csv_path)
    return files


def format_metrics(metrics: MetricsReport) -> str:
    lines = []
    for name in sorted(metrics.scalars):
        v = metrics.scalars[name]
        if isinstance(v, float) and not math.isnan(v):
            lines.append(f"{name:24s} {v:.6g}")
        else:
            lines.append(f"{name:24s} {v}")
    return "\n".join(lines)
