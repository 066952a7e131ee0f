"""Delimited output and figure rendering for the experiment commands.

CSV files are the primary record: comma separated, header row, ``.`` decimal
separator, LF line endings, floats at 17 significant digits so runs are
byte-reproducible and round-trip exactly.  Figures are rendered *from the
written CSV*, never from a second computation, so the two artifacts cannot
disagree.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_SVG_META = {"Date": None}  # drop the creation timestamp for stable output

METHOD_STYLES = {
    "mean field": dict(linestyle="-"),
    "refined mean field": dict(linestyle="--"),
    "simulation": dict(linestyle=":"),
}


def format_value(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        return header, list(reader)


def _columns(header: list[str], rows: list[list[str]]) -> dict[str, list[str]]:
    return {name: [row[i] for row in rows] for i, name in enumerate(header)}


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def plot_transient(csv_path: Path, svg_path: Path, title: str,
                   error_mode: bool = False) -> None:
    header, rows = read_csv(csv_path)
    col = _columns(header, rows)
    labels = sorted(set(col["state"]), key=col["state"].index)
    if error_mode:
        fig, axes = plt.subplots(1, 2, figsize=(11, 4.5), sharex=True)
        panels = [("err_mean_field", "simulation - mean field"),
                  ("err_refined", "simulation - refined mean field")]
        for ax, (column, panel_title) in zip(axes, panels):
            for label in labels:
                sel = [i for i, s in enumerate(col["state"]) if s == label]
                t = [float(col["t"][i]) for i in sel]
                y = [float(col[column][i]) for i in sel]
                ax.plot(t, y, label=label)
            ax.set_xlabel("t")
            ax.set_title(panel_title)
            ax.axhline(0.0, color="grey", linewidth=0.6)
        axes[0].set_ylabel("error")
        axes[0].legend()
    else:
        fig, ax = plt.subplots(figsize=(7, 4.5))
        series = [("mu", "mean field"), ("refined_mean", "refined mean field"),
                  ("sim_mean", "simulation")]
        colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
        for ci, label in enumerate(labels):
            sel = [i for i, s in enumerate(col["state"]) if s == label]
            t = [float(col["t"][i]) for i in sel]
            for column, method in series:
                y = [float(col[column][i]) for i in sel]
                ax.plot(t, y, color=colors[ci % len(colors)],
                        label=f"{label} {method}", **METHOD_STYLES[method])
        ax.set_xlabel("t")
        ax.set_ylabel("occupancy")
        ax.legend(fontsize="x-small", ncol=2)
    fig.suptitle(title)
    _save(fig, svg_path)


def plot_steady(csv_path: Path, svg_path: Path, title: str) -> None:
    header, rows = read_csv(csv_path)
    col = _columns(header, rows)
    labels = col["state"]
    methods = [("simulation", "simulation"),
               ("refined_mean_field", "refined mean field"),
               ("mean_field", "mean field")]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    x = range(len(labels))
    width = 0.25
    for k, (column, label) in enumerate(methods):
        vals = [float(v) if v not in ("", "unavailable") else float("nan")
                for v in col[column]]
        ax.bar([xi + (k - 1) * width for xi in x], vals, width, label=label)
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels)
    ax.set_ylabel("stationary occupancy")
    ax.legend()
    fig.suptitle(title)
    _save(fig, svg_path)


def plot_response_time(csv_path: Path, svg_path: Path, title: str) -> None:
    header, rows = read_csv(csv_path)
    col = _columns(header, rows)
    t = [float(v) for v in col["t"]]
    curves = [("h_mean_field", "(1) classic mean field"),
              ("h_simulation", "(2) simulation of E[h(M)]"),
              ("h_refined_functional", "(3) refined E[h(M)]"),
              ("h_of_refined_mean", "(4) h(refined mean)"),
              ("h_of_simulation_mean", "(5) h(simulated mean)")]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for column, label in curves:
        ax.plot(t, [float(v) for v in col[column]], label=label)
    ax.set_xlabel("t")
    ax.set_ylabel("expected response time")
    ax.legend()
    fig.suptitle(title)
    _save(fig, svg_path)


def plot_sqrt_fit(csv_path: Path, svg_path: Path, title: str) -> None:
    header, rows = read_csv(csv_path)
    col = _columns(header, rows)
    n = [float(v) for v in col["n"]]
    y = [float(v) for v in col["sqrt_n_deviation"]]
    fit = [float(v) for v in col["fitted_deviation"]]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(n, y, "o", label="sqrt(N) (E[M_0] - mu_0(inf))")
    ax.plot(n, fit, "-", label="fit a + b / sqrt(N)")
    ax.set_xlabel("N")
    ax.set_ylabel("scaled deviation")
    ax.legend()
    fig.suptitle(title)
    _save(fig, svg_path)
