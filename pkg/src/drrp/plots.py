"""Static figures rendered from suite CSVs."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_improvements(rows, path, label="service-rate gain over NA [pp]"):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    names = [f"{r['nodes']}/{r['fleet']} {r['method']}" for r in rows]
    means = [float(r["delta_mean"]) for r in rows]
    sds = [float(r["delta_sd"]) for r in rows]
    ax.bar(range(len(rows)), means, yerr=sds, capsize=3, color="tab:blue")
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel(label)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_iterations(cell_dirs, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for d in cell_dirs:
        rows = _read(d / "iterations.csv")
        ax.plot([int(r["n"]) for r in rows], [float(r["service_rate"]) for r in rows], lw=0.8, label=d.name)
    ax.set_xlabel("iteration")
    ax.set_ylabel("sampled service rate")
    if len(cell_dirs) <= 8:
        ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_theta(theta_csv, path, slots=4):
    rows = _read(theta_csv)
    last = max(int(r["iteration"]) for r in rows)
    curves: dict = {}
    for r in rows:
        if int(r["iteration"]) == last:
            curves.setdefault((int(r["i"]), int(r["t"])), []).append((int(r["y_prime"]), float(r["slope"])))
    # slots with the largest slope range are the informative ones
    ranked = sorted(curves, key=lambda k: -(max(s for _, s in curves[k]) - min(s for _, s in curves[k])))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for key in ranked[:slots]:
        pts = sorted(curves[key])
        # cumulative value through the origin
        acc = {0: 0.0}
        for y, s in pts:
            if y >= 0:
                acc[y + 1] = acc[y] + s
        for y, s in sorted(pts, reverse=True):
            if y < 0:
                acc[y] = acc[y + 1] - s
        xs, value = zip(*sorted(acc.items()))
        ax.plot(xs, value, marker="o", ms=3, label=f"station {key[0]}, step {key[1]}")
    ax.set_xlabel("net SVs unloaded")
    ax.set_ylabel("approximate cost-to-go")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_suite(out_dir) -> list:
    out = Path(out_dir)
    made = []
    rates = out / "service_rates.csv"
    if rates.exists() and _read(rates):
        plot_improvements(_read(rates), out / "service_rates.png")
        made.append(out / "service_rates.png")
    cells = sorted(p for p in (out / "cells").glob("*") if (p / "iterations.csv").exists())
    if cells:
        plot_iterations(cells, out / "iterations.png")
        made.append(out / "iterations.png")
        theta = cells[0] / "theta.csv"
        if theta.exists():
            plot_theta(theta, out / "theta.png")
            made.append(out / "theta.png")
    return made
