"""Metric summaries and figure rendering from simulation outputs.

Figures are written as PNG files next to the delimited outputs; everything
uses the non-interactive matplotlib backend so the report path works
headless.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .fileio import read_metrics


def summarize_metrics(rows: Sequence[Mapping]) -> list[dict]:
    """Per-level averages over valid days (one summary row per level)."""
    by_eps: dict[float, list[Mapping]] = defaultdict(list)
    for r in rows:
        if r["valid"]:
            by_eps[float(r["epsilon_level"])].append(r)
    out = []
    for eps in sorted(by_eps):
        grp = by_eps[eps]
        out.append({
            "epsilon_level": eps,
            "days": len(grp),
            "mean_r_gamma": float(np.mean([g["r_gamma"] for g in grp])),
            "mean_balancing_kwh": float(np.mean([g["balancing_kwh"] for g in grp])),
            "mean_dis_cost_eur": float(np.mean([g["dis_cost_eur"] for g in grp])),
            "mean_sigma_cost_eur": float(np.mean([g["sigma_cost_eur"] for g in grp])),
            "mean_total_cost_eur": float(np.mean([g["total_cost_eur"] for g in grp])),
            "mean_max_ramp_g_kw": float(np.mean([g["max_ramp_g_kw"] for g in grp])),
            "mean_max_ramp_baseline_kw": float(
                np.mean([g["max_ramp_baseline_kw"] for g in grp])),
            "mean_stage1_seconds": float(np.nanmean([g["stage1_seconds"] for g in grp])),
        })
    return out


def write_summary(path: str | Path, summary: Sequence[Mapping]) -> None:
    if not summary:
        raise ValueError("empty summary")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0].keys()))
        w.writeheader()
        for row in summary:
            w.writerow(row)


def _read_series(path: Path) -> dict[str, dict[int, float]]:
    series: dict[str, dict[int, float]] = defaultdict(dict)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            series[row["series"]][int(row["step"])] = float(row["value"])
    return series


def _sorted_xy(values: Mapping[int, float]) -> tuple[np.ndarray, np.ndarray]:
    steps = np.array(sorted(values))
    return steps, np.array([values[int(s)] for s in steps])


def render_power_profiles(series: Mapping[str, Mapping[int, float]], out: Path,
                          window: tuple[int, int] | None = None) -> None:
    """Realized exchange vs schedule vs baseline over a step window."""
    fig, ax = plt.subplots(figsize=(9, 4))
    for name, style, label in (
            ("baseline", dict(color="tab:green", ls="--", lw=1.2), "baseline prosumption"),
            ("l", dict(color="tab:gray", lw=1.0, alpha=0.8), "inflexible power"),
            ("dis_net", dict(color="darkred", ls=":", lw=1.6), "dispatch schedule"),
            ("g_net", dict(color="tab:red", lw=1.2), "realized exchange"),
            ("ess", dict(color="tab:cyan", ls="--", lw=1.0), "storage power")):
        if name not in series:
            continue
        x, y = _sorted_xy(series[name])
        if window is not None:
            m = (x >= window[0]) & (x < window[1])
            x, y = x[m], y[m]
        ax.plot(x, y, label=label, **style)
    ax.set_xlabel("step (h)")
    ax.set_ylabel("power (kW)")
    ax.grid(alpha=0.3)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def render_soc_profiles(series: Mapping[str, Mapping[int, float]], out: Path,
                        window: tuple[int, int] | None = None) -> None:
    fig, ax = plt.subplots(figsize=(9, 4))
    for name, values in sorted(series.items()):
        if name != "ess_soc" and not name.endswith("_soc"):
            continue
        x, y = _sorted_xy(values)
        if window is not None:
            m = (x >= window[0]) & (x < window[1])
            x, y = x[m], y[m]
        label = "storage" if name == "ess_soc" else name.replace("pev_", "").replace("_soc", "")
        ax.plot(x, y, lw=1.2, label=label)
    ax.set_xlabel("step (h)")
    ax.set_ylabel("SOC (kWh)")
    ax.grid(alpha=0.3)
    ax.legend(loc="upper right", fontsize=8, ncol=3)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def render_reliability(summary: Sequence[Mapping], out: Path) -> None:
    """Tracking ratio and balancing energy against the reliability level."""
    eps = [s["epsilon_level"] for s in summary]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(eps, [s["mean_r_gamma"] for s in summary], "o-", color="tab:blue",
             label="tracking ratio")
    ax1.plot(eps, eps, ":", color="tab:gray", lw=1.0, label="target")
    ax1.set_xlabel("reliability level")
    ax1.set_ylabel("tracking ratio", color="tab:blue")
    ax1.set_ylim(0.0, 1.05)
    ax2 = ax1.twinx()
    ax2.plot(eps, [s["mean_balancing_kwh"] for s in summary], "s--",
             color="tab:orange", label="balancing energy")
    ax2.set_ylabel("balancing energy (kWh/day)", color="tab:orange")
    ax1.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def render_report(out_dir: str | Path, window: tuple[int, int] | None = None) -> list[Path]:
    """Build summary CSV and figures from a simulation output directory."""
    out = Path(out_dir)
    metrics_path = out / "metrics.csv"
    if not metrics_path.exists():
        raise FileNotFoundError(f"no metrics.csv under {out}")
    rows = read_metrics(metrics_path)
    summary = summarize_metrics(rows)
    produced = [out / "summary.csv"]
    write_summary(produced[0], summary)
    if summary:
        fig = out / "reliability.png"
        render_reliability(summary, fig)
        produced.append(fig)
    for series_file in sorted(out.glob("series_*.csv")):
        tag = series_file.stem.replace("series_", "")
        series = _read_series(series_file)
        if window is None and "g_net" in series:
            steps = sorted(series["g_net"])
            window_eff = (max(steps[0], steps[-1] - 72 + 1), steps[-1] + 1)
        else:
            window_eff = window
        p1 = out / f"power_profiles_{tag}.png"
        render_power_profiles(series, p1, window_eff)
        p2 = out / f"soc_profiles_{tag}.png"
        render_soc_profiles(series, p2, window_eff)
        produced += [p1, p2]
    return produced
