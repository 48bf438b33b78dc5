"""Comparison tables and SVG curves built from metrics CSVs."""

from __future__ import annotations

import csv
import io
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .trainer import RunMetrics, metrics_header

_SEED_DIR = re.compile(r"^seed\d+$")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _is_metrics_file(path: Path) -> bool:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            header = next(csv.reader(fh), None)
    except (OSError, UnicodeDecodeError):
        return False
    if not header:
        return False
    M = sum(1 for h in header if h.startswith("w_l_"))
    return header == metrics_header(M)


def run_label(path: Path, metrics: RunMetrics) -> str:
    """``<label>/seedN/metrics.csv`` gives ``label``; otherwise the strategy tag."""
    if _SEED_DIR.match(path.parent.name):
        return path.parent.parent.name
    return metrics.strategy


def load_runs(root) -> dict:
    """All metrics CSVs under ``root`` grouped by run label."""
    root = Path(root)
    files = [root] if root.is_file() else sorted(root.rglob("*.csv"))
    runs = {}
    for path in files:
        if not _is_metrics_file(path):
            continue
        m = RunMetrics.read_csv(path)
        if m.rows:
            runs.setdefault(run_label(path, m), []).append(m)
    if not runs:
        raise FileNotFoundError(f"no metrics CSV files found under {root}")
    return runs


@dataclass
class SummaryRow:
    label: str
    strategy: str
    runs: int
    mean_acc: float
    std_acc: float


def mean_std(values) -> tuple:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def summarize(runs: dict) -> list:
    """One row per label, best mean final accuracy first (ties by label)."""
    rows = []
    for label, group in runs.items():
        mean, std = mean_std([m.final_acc for m in group])
        rows.append(SummaryRow(label, group[0].strategy, len(group), mean, std))
    rows.sort(key=lambda r: (-r.mean_acc, r.label))
    return rows


def table_text(rows) -> str:
    width = max([len("run")] + [len(r.label) for r in rows])
    lines = [f"{'run':<{width}}  {'strategy':<8}  {'seeds':>5}  {'acc mean':>9}  {'acc std':>8}"]
    for r in rows:
        lines.append(f"{r.label:<{width}}  {r.strategy:<8}  {r.runs:>5}  {r.mean_acc:>9.4f}  {r.std_acc:>8.4f}")
    return "\n".join(lines) + "\n"


def table_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "strategy", "seeds", "acc_mean", "acc_std"])
    for r in rows:
        w.writerow([r.label, r.strategy, r.runs, repr(r.mean_acc), repr(r.std_acc)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------


def _mean_curve(group, getter):
    """Epoch-aligned mean over runs; stops at the shortest run."""
    n = min(len(m.rows) for m in group)
    xs = [group[0].rows[i].epoch for i in range(n)]
    ys = np.mean([[getter(m.rows[i]) for i in range(n)] for m in group], axis=0)
    return list(zip(xs, ys.tolist()))


def line_chart(series: dict, title: str, xlabel: str, ylabel: str, width=640, height=400) -> str:
    """Self-contained SVG; one ``<polyline>`` per entry of ``series`` (name -> [(x, y), ...])."""
    left, right, top, bottom = 60, 150, 40, 50
    pts = [p for s in series.values() for p in s]
    if pts:
        x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
        y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (1.0 - (y - y0) / (y1 - y0)) * ph

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width), height=str(height),
                     viewBox=f"0 0 {width} {height}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(width), height=str(height), fill="white")
    ET.SubElement(svg, "text", x=str(width / 2), y="22", **{"text-anchor": "middle", "font-size": "15"}).text = title
    axes = ET.SubElement(svg, "g", stroke="black", **{"stroke-width": "1"})
    ET.SubElement(axes, "line", x1=str(left), y1=str(top + ph), x2=str(left + pw), y2=str(top + ph))
    ET.SubElement(axes, "line", x1=str(left), y1=str(top), x2=str(left), y2=str(top + ph))
    labels = ET.SubElement(svg, "g", **{"font-size": "11", "font-family": "sans-serif"})
    for k in range(5):
        fy = y0 + (y1 - y0) * k / 4
        fx = x0 + (x1 - x0) * k / 4
        ET.SubElement(labels, "text", x=str(left - 6), y=f"{sy(fy) + 4:.1f}", **{"text-anchor": "end"}).text = f"{fy:.3g}"
        ET.SubElement(labels, "text", x=f"{sx(fx):.1f}", y=str(top + ph + 16), **{"text-anchor": "middle"}).text = f"{fx:.3g}"
    ET.SubElement(labels, "text", x=str(left + pw / 2), y=str(height - 12), **{"text-anchor": "middle"}).text = xlabel
    ET.SubElement(labels, "text", x="14", y=str(top + ph / 2),
                  transform=f"rotate(-90 14 {top + ph / 2})", **{"text-anchor": "middle"}).text = ylabel

    for i, (name, data) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        dash = {} if i < len(PALETTE) else {"stroke-dasharray": "5,3"}
        points = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in data)
        ET.SubElement(svg, "polyline", points=points, fill="none", stroke=color,
                      **{"stroke-width": "1.5", "data-series": name}, **dash)
        ly = top + 14 * i + 6
        ET.SubElement(svg, "line", x1=str(left + pw + 10), y1=str(ly), x2=str(left + pw + 30), y2=str(ly),
                      stroke=color, **{"stroke-width": "2"}, **dash)
        ET.SubElement(labels, "text", x=str(left + pw + 34), y=str(ly + 4)).text = name
    return ET.tostring(svg, encoding="unicode") + "\n"


def accuracy_svg(runs: dict) -> str:
    series = {label: _mean_curve(group, lambda r: r.acc) for label, group in sorted(runs.items())}
    return line_chart(series, "Student test accuracy", "epoch", "accuracy")


def weight_svg(group, title="Mean teacher weights") -> str:
    """2M series: ``w_l_m`` and ``w_f_m`` per teacher, epochs lacking weights skipped."""
    M = group[0].teachers
    usable = [m for m in group if all(r.w_l is not None for r in m.rows)]
    if not usable:
        usable = [RunMetrics(m.strategy, M, [r for r in m.rows if r.w_l is not None]) for m in group]
        usable = [m for m in usable if m.rows]
    if not usable:
        raise ValueError("no epochs with recorded teacher weights")
    series = {}
    for head in ("w_l", "w_f"):
        for t in range(M):
            series[f"{head}_{t + 1}"] = _mean_curve(usable, lambda r, h=head, t=t: getattr(r, h)[t])
    return line_chart(series, title, "epoch", "mean weight")


def write_report(runs: dict, out_dir) -> dict:
    """Write table.txt, table.csv, accuracy.svg and one weights_<label>.svg per
    weighted run label; returns the written paths by role."""
    out = Path(out_dir)
    rows = summarize(runs)
    written = {"table_txt": out / "table.txt", "table_csv": out / "table.csv", "accuracy_svg": out / "accuracy.svg"}
    written["table_txt"].write_text(table_text(rows), encoding="utf-8")
    written["table_csv"].write_text(table_csv(rows), encoding="utf-8")
    written["accuracy_svg"].write_text(accuracy_svg(runs), encoding="utf-8")
    for label, group in sorted(runs.items()):
        if any(r.w_l is not None for m in group for r in m.rows):
            path = out / f"weights_{label}.svg"
            path.write_text(weight_svg(group, f"Mean teacher weights ({label})"), encoding="utf-8")
            written[f"weights_{label}"] = path
    return written
