"""Consolidated run reports: markdown/JSON summaries plus rendered figures.

A run directory is whatever a CLI command produced: trace.csv, metrics.json,
certificate.json, sweep.csv and manifest.json in any combination.  The
report collects what it finds into summary.md / summary.json and renders
matplotlib figures next to the delimited data.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .sim import Trace

__all__ = ["consolidate", "render_trace_figures", "render_sweep_figure"]


def _load_json(path: Path):
    with open(path) as fh:
        return json.load(fh)


def render_trace_figures(trace: Trace, out_dir: Path) -> list:
    """State, error-norm and extended-state figures for one trace."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    n = trace.x.shape[1]
    names = list(trace.xhat)

    fig, axes = plt.subplots(n, 1, figsize=(7, 1.9 * n), sharex=True, squeeze=False)
    for i in range(n):
        ax = axes[i, 0]
        ax.plot(trace.t, trace.x[:, i], "r-", lw=1.2, label="state")
        for name in names:
            est = trace.xhat[name]
            if i < est.shape[1]:
                ax.plot(trace.t, est[:, i], "--", lw=0.9, label=name)
        ax.set_ylabel(f"x{i + 1}")
        ax.grid(alpha=0.3)
    axes[0, 0].legend(loc="upper right", fontsize=8)
    axes[-1, 0].set_xlabel("t [s]")
    p = out_dir / "states.png"
    fig.tight_layout()
    fig.savefig(p, dpi=130)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(7, 3.2))
    for name in names:
        en = np.linalg.norm(trace.error(name), axis=1)
        ax.semilogy(trace.t, np.maximum(en, 1e-300), lw=1.0, label=name)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("||x - xhat||")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    p = out_dir / "error_norm.png"
    fig.tight_layout()
    fig.savefig(p, dpi=130)
    plt.close(fig)
    written.append(p)

    if trace.ext_truth is not None:
        n_q = trace.ext_truth.shape[1]
        fig, axes = plt.subplots(n_q, 1, figsize=(7, 2.2 * n_q), sharex=True,
                                 squeeze=False)
        for i in range(n_q):
            ax = axes[i, 0]
            ax.plot(trace.t, trace.ext_truth[:, i], "r-", lw=1.2, label="truth")
            for name in names:
                est = trace.ext_hat.get(name)
                if est is not None:
                    ax.plot(trace.t, est[:, i], "--", lw=0.9, label=name)
            ax.set_ylabel(f"uncertainty {i + 1}")
            ax.grid(alpha=0.3)
        axes[0, 0].legend(loc="upper right", fontsize=8)
        axes[-1, 0].set_xlabel("t [s]")
        p = out_dir / "extended_state.png"
        fig.tight_layout()
        fig.savefig(p, dpi=130)
        plt.close(fig)
        written.append(p)
    return written


def render_sweep_figure(sweep_rows: list, out_dir: Path) -> list:
    """Log-log steady error versus gain figure from parsed sweep rows."""
    out_dir.mkdir(parents=True, exist_ok=True)
    eps = [r["eps"] for r in sweep_rows]
    keys = [k for k in sweep_rows[0] if k.startswith("sup_e_")]
    fig, ax = plt.subplots(figsize=(6, 4))
    for k in keys:
        ax.loglog(eps, [r[k] for r in sweep_rows], "o-", label=k)
    if not any(np.isnan(r.get("sup_ext", float("nan"))) for r in sweep_rows):
        ax.loglog(eps, [r["sup_ext"] for r in sweep_rows], "s--", label="sup_ext")
    ax.set_xlabel("eps")
    ax.set_ylabel("steady sup error")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    p = out_dir / "sweep.png"
    fig.tight_layout()
    fig.savefig(p, dpi=130)
    plt.close(fig)
    return [p]


def _parse_sweep_csv(path: Path):
    rows, ratios = [], []
    with open(path, newline="") as fh:
        section = 0
        for rec in csv.reader(fh):
            if not rec:
                section = 1
                continue
            if rec[0] in ("eps", "ratio_pair"):
                header = rec
                continue
            vals = dict(zip(header, rec))
            if section == 0:
                rows.append({k: float(v) for k, v in vals.items()})
            else:
                ratios.append({k: (v if k == "ratio_pair" else float(v))
                               for k, v in vals.items()})
    return rows, ratios


def consolidate(run_dir) -> Path:
    """Build summary.md / summary.json and figures from one run directory.

    Returns the path of the markdown summary; raises FileNotFoundError when
    the directory holds none of the recognized artifacts.
    """
    run_dir = Path(run_dir)
    found = {}
    for name in ("manifest.json", "metrics.json", "certificate.json",
                 "verify.json", "sweep.csv", "trace.csv"):
        p = run_dir / name
        if p.exists():
            found[name] = p
    if not found:
        raise FileNotFoundError(f"no run artifacts found in {run_dir}")

    summary = {"run_dir": str(run_dir), "artifacts": sorted(found)}
    lines = ["# Run summary", ""]
    figures = []

    if "manifest.json" in found:
        man = _load_json(found["manifest.json"])
        summary["manifest"] = man
        lines += [
            f"- command: `{man.get('command', '?')}`",
            f"- seed: {man.get('seed')}",
            f"- tool version: {man.get('tool_version')}",
            f"- wall clock: {man.get('wall_clock_utc')}",
            "",
        ]

    if "certificate.json" in found:
        cert = _load_json(found["certificate.json"])
        summary["certificate"] = cert
        lines += ["## Certificate", "",
                  f"- status: **{cert.get('status')}**",
                  f"- iterations: {cert.get('iterations')}",
                  f"- phase-I gauge: {cert.get('final_t'):.3e}"]
        margins = cert.get("margins", [])
        if margins:
            lines.append(f"- worst constraint slack: {min(margins):.3e}")
        lines.append("")

    if "verify.json" in found:
        ver = _load_json(found["verify.json"])
        summary["verify"] = ver
        lines += ["## Independent verification", "",
                  f"- passed: **{ver.get('passed')}**",
                  f"- per-constraint worst slack: "
                  f"{[f'{v:.3e}' for v in ver.get('worst', [])]}", ""]

    if "metrics.json" in found:
        met = _load_json(found["metrics.json"])
        summary["metrics"] = met
        lines += ["## Metrics", "",
                  "| quantity | value |", "|---|---|"]
        for key in ("observer", "window", "rmse", "peak_error",
                    "convergence_time", "kappa_hat", "M_hat", "r_squared"):
            if key in met:
                lines.append(f"| {key} | {met[key]} |")
        lines.append("")

    if "trace.csv" in found:
        trace = Trace.from_csv(found["trace.csv"])
        figures += render_trace_figures(trace, run_dir / "figures")

    if "sweep.csv" in found:
        rows, ratios = _parse_sweep_csv(found["sweep.csv"])
        summary["sweep"] = {"rows": rows, "ratios": ratios}
        lines += ["## Gain sweep", "", "| eps | " + " | ".join(
            k for k in rows[0] if k != "eps") + " |",
            "|" + "---|" * len(rows[0])]
        for r in rows:
            lines.append("| " + " | ".join(f"{r[k]:.4g}" if isinstance(r[k], float)
                                           else str(r[k]) for k in r) + " |")
        lines.append("")
        if ratios:
            lines += ["consecutive-gain error ratios:", ""]
            for r in ratios:
                vals = {k: v for k, v in r.items() if k != "ratio_pair"}
                lines.append(f"- {r['ratio_pair']}: "
                             + ", ".join(f"{k}={v:.3g}" for k, v in vals.items()))
            lines.append("")
        figures += render_sweep_figure(rows, run_dir / "figures")

    if figures:
        lines += ["## Figures", ""]
        lines += [f"![{p.stem}](figures/{p.name})" for p in figures]
        lines.append("")
        summary["figures"] = [str(p) for p in figures]

    md_path = run_dir / "summary.md"
    md_path.write_text("\n".join(lines))
    with open(run_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return md_path
