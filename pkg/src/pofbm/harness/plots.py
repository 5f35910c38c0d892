"""Tidy study CSVs, the standalone plotting script, and rendered figures.

The script written next to the CSVs depends only on the CSV files and
matplotlib; :func:`emit_plots` runs that same script to render the PNGs.
"""
from __future__ import annotations

import runpy
from pathlib import Path

import numpy as np

from ..errors import InsufficientPoints
from ..ledger import FIELDS
from .experiments import Reference, StudyPoint, StudyResult, fit_rate
from .io import read_rows, write_rows

POINTS_HEADER = ["method", "level", "repeat", "parameter", "estimate", "cost", *FIELDS]
SUMMARY_HEADER = ["method", "level", "parameter", "mse", "variance", "bias2", "mean_cost", "repeats"]
REFERENCE_HEADER = ["parameter", "value", "se", "level", "iterations", "chains"]
RATES_HEADER = ["method", "parameter", "slope", "intercept", "residual", "points"]
SCRIPT_NAME = "plot_study.py"

SCRIPT = r'''"""Render figures from the CSV files in this directory.

Usage: python plot_study.py [DIR]
"""
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

PLOTS = [
    {"kind": "loglog", "csv": "study_summary.csv", "x": "mse", "y": "mean_cost",
     "group": "method", "facet": "parameter", "name": "cost_vs_mse_{facet}.png",
     "xlabel": "MSE", "ylabel": "cost (operations)"},
    {"kind": "trace", "csv": "chain.csv", "x": "iteration", "skip": ["iteration", "log_c", "accepted"],
     "name": "trace_{column}.png"},
    {"kind": "lines", "csv": "states.csv", "x": "t", "y": ["y", "x_corrected", "x_uncorrected", "x_true"],
     "name": "states.png", "xlabel": "t"},
]

COLORS = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"]
MARKERS = ["o", "s", "^", "v", "D"]
STYLE = {"font.size": 9, "axes.linewidth": 0.6, "figure.dpi": 100, "savefig.dpi": 120}


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def loglog(spec, rows, outdir):
    made = []
    for facet in sorted({r[spec["facet"]] for r in rows}):
        fig, ax = plt.subplots(figsize=(4.0, 3.4))
        sub = [r for r in rows if r[spec["facet"]] == facet]
        for i, group in enumerate(sorted({r[spec["group"]] for r in sub})):
            pts = sorted((float(r[spec["x"]]), float(r[spec["y"]])) for r in sub if r[spec["group"]] == group)
            ax.loglog([p[0] for p in pts], [p[1] for p in pts], marker=MARKERS[i % len(MARKERS)],
                      color=COLORS[i % len(COLORS)], label=group)
        ax.set_xlabel(spec["xlabel"])
        ax.set_ylabel(spec["ylabel"])
        ax.set_title(facet)
        ax.legend(frameon=False)
        path = outdir / spec["name"].format(facet=facet)
        save(fig, path)
        made.append(path)
    return made


def trace(spec, rows, outdir):
    made = []
    x = [float(r[spec["x"]]) for r in rows]
    for column in [c for c in rows[0] if c not in spec["skip"]]:
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        ax.plot(x, [float(r[column]) for r in rows], lw=0.6, color=COLORS[0])
        ax.set_xlabel(spec["x"])
        ax.set_ylabel(column)
        path = outdir / spec["name"].format(column=column)
        save(fig, path)
        made.append(path)
    return made


def lines(spec, rows, outdir):
    fig, ax = plt.subplots(figsize=(7.0, 3.0))
    x = [float(r[spec["x"]]) for r in rows]
    for i, column in enumerate(c for c in spec["y"] if c in rows[0]):
        ax.plot(x, [float(r[column]) for r in rows], lw=0.9, color=COLORS[i % len(COLORS)],
                marker="." if column == "y" else None, ls="" if column == "y" else "-", label=column)
    ax.set_xlabel(spec["xlabel"])
    ax.legend(frameon=False, ncol=4)
    path = outdir / spec["name"]
    save(fig, path)
    return [path]


def render(outdir):
    outdir = Path(outdir)
    made = []
    with plt.rc_context(STYLE):
        for spec in PLOTS:
            path = outdir / spec["csv"]
            if not path.is_file():
                continue
            rows = read(path)
            if rows:
                made += globals()[spec["kind"]](spec, rows, outdir)
    return made


if __name__ == "__main__":
    for p in render(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent):
        print(p)
'''


def write_study_csvs(study: StudyResult, outdir) -> dict:
    """Write the four study tables; an empty study gives header-only files."""
    outdir = Path(outdir)
    points, summary, ref_rows, rate_rows = [], [], [], []
    if study.points:
        for p in study.points:
            for j, name in enumerate(study.param_names):
                points.append([p.method, p.level, p.repeat, name, p.estimate[j], p.cost,
                               *(p.ledger[f] for f in FIELDS)])
        summary = [list(r) for r in study.summary()]
        try:
            rate_rows = rates_rows(summary)
        except InsufficientPoints:
            rate_rows = []
    if study.reference is not None:
        ref = study.reference
        ref_rows = [[name, ref.value[j], ref.se[j], ref.level, ref.iterations, ref.chains]
                    for j, name in enumerate(study.param_names)]
    return {
        "points": write_rows(outdir / "study_points.csv", POINTS_HEADER, points),
        "summary": write_rows(outdir / "study_summary.csv", SUMMARY_HEADER, summary),
        "reference": write_rows(outdir / "reference.csv", REFERENCE_HEADER, ref_rows),
        "rates": write_rows(outdir / "rates.csv", RATES_HEADER, rate_rows),
    }


def rates_rows(summary_rows) -> list:
    """Rate-fit rows from summary rows (lists or dicts in ``SUMMARY_HEADER`` order)."""
    rows = [r if isinstance(r, dict) else dict(zip(SUMMARY_HEADER, r)) for r in summary_rows]
    out = []
    keys = sorted({(r["method"], r["parameter"]) for r in rows})
    for method, name in keys:
        sel = [r for r in rows if r["method"] == method and r["parameter"] == name]
        fit = fit_rate([float(r["mse"]) for r in sel], [float(r["mean_cost"]) for r in sel])
        out.append([method, name, fit.slope, fit.intercept, fit.residual, len(fit.log_mse)])
    return out


def load_study(outdir) -> StudyResult:
    """Rebuild a study from ``study_points.csv`` and ``reference.csv``."""
    outdir = Path(outdir)
    rows = read_rows(outdir / "study_points.csv")
    refs = read_rows(outdir / "reference.csv")
    names = tuple(r["parameter"] for r in refs)
    reference = None
    if refs:
        reference = Reference(level=int(refs[0]["level"]), iterations=int(refs[0]["iterations"]),
                              chains=int(refs[0]["chains"]), value=np.array([float(r["value"]) for r in refs]),
                              se=np.array([float(r["se"]) for r in refs]))
    grouped = {}
    for r in rows:
        key = (r["method"], int(r["level"]), int(r["repeat"]))
        grouped.setdefault(key, {"cost": float(r["cost"]), "ledger": {f: float(r[f]) for f in FIELDS}, "est": {}})
        grouped[key]["est"][r["parameter"]] = float(r["estimate"])
    if not names and grouped:
        names = tuple(next(iter(grouped.values()))["est"])
    points = [StudyPoint(m, l, rep, np.array([g["est"][n] for n in names]), g["cost"], g["ledger"])
              for (m, l, rep), g in grouped.items()]
    return StudyResult(param_names=names, reference=reference, points=points)


def write_script(outdir) -> Path:
    path = Path(outdir) / SCRIPT_NAME
    path.write_text(SCRIPT)
    return path


def render(outdir) -> list:
    """Run the emitted script in-process; returns the figure paths."""
    script = Path(outdir) / SCRIPT_NAME
    ns = runpy.run_path(str(script), run_name="plot_study")
    return ns["render"](outdir)


def emit_plots(study: StudyResult, outdir, render_figures=True) -> dict:
    """CSVs always; the plotting script and figures only for a non-empty study."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    out = write_study_csvs(study, outdir)
    if study.points:
        out["script"] = write_script(outdir)
        if render_figures:
            out["figures"] = render(outdir)
    return out
