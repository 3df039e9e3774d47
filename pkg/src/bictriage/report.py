"""CSV and SVG output for rolling evaluation runs."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
import platform
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .metrics import METRIC_NAMES, ConfusionCounts, compute_metrics

CSV_HEADER = ("date", "method", "tp", "tn", "fp", "fn") + METRIC_NAMES
METHOD_COLORS = {"mp1": "#1f77b4", "mp2": "#d62728", "nb": "#2ca02c", "lr": "#9467bd"}
METHOD_LABELS = {"mp1": "Max Precision 1", "mp2": "Max Precision 2", "nb": "Naive Bayes", "lr": "Logistic Regression"}


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def csv_rows(report) -> list[tuple]:
    rows = []
    for day in report.days:
        for method in report.methods:
            c = day.counts[method]
            m = day.metrics[method]
            rows.append((day.day.isoformat(), method, c.tp, c.tn, c.fp, c.fn) + tuple(getattr(m, n) for n in METRIC_NAMES))
    return rows


def to_csv(rows: Sequence[tuple]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow(list(r[:6]) + [_fmt(v) for v in r[6:]])
    return buf.getvalue().encode("utf-8")


def emit_csv(report) -> bytes:
    """One row per (day, method); undefined metrics are empty fields."""
    return to_csv(csv_rows(report))


def read_csv(data: bytes | str) -> list[tuple[dt.date, str, ConfusionCounts]]:
    """Parse a report CSV back into (date, method, counts) rows."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    reader = csv.reader(io.StringIO(data))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_HEADER:
        raise ValueError("not a report CSV: unexpected header")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(CSV_HEADER):
            raise ValueError(f"line {lineno}: expected {len(CSV_HEADER)} fields")
        counts = ConfusionCounts(*(int(v) for v in row[2:6]))
        out.append((dt.date.fromisoformat(row[0]), row[1], counts))
    return out


# -- SVG -----------------------------------------------------------------------

_W, _H = 960, 420
_PAD_L, _PAD_R, _PAD_T, _PAD_B = 64, 180, 40, 56


def _svg_open(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{escape(title)}</text>',
    ]


def _y_axis(lo: float, hi: float, ticks: int = 5) -> list[str]:
    out = []
    plot_h = _H - _PAD_T - _PAD_B
    for i in range(ticks + 1):
        v = lo + (hi - lo) * i / ticks
        y = _H - _PAD_B - plot_h * i / ticks
        out.append(f'<line x1="{_PAD_L}" y1="{y:.2f}" x2="{_W - _PAD_R}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(
            f'<text x="{_PAD_L - 6}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.3f}</text>'
        )
    out.append(f'<line x1="{_PAD_L}" y1="{_PAD_T}" x2="{_PAD_L}" y2="{_H - _PAD_B}" stroke="black"/>')
    out.append(f'<line x1="{_PAD_L}" y1="{_H - _PAD_B}" x2="{_W - _PAD_R}" y2="{_H - _PAD_B}" stroke="black"/>')
    return out


def _legend(methods: Sequence[str]) -> list[str]:
    out = []
    x = _W - _PAD_R + 16
    for i, m in enumerate(methods):
        y = _PAD_T + 18 * i + 8
        color = METHOD_COLORS.get(m, "#444")
        out.append(f'<rect x="{x}" y="{y - 8}" width="12" height="12" fill="{color}"/>')
        out.append(
            f'<text x="{x + 18}" y="{y + 2}" font-family="sans-serif" font-size="12">{escape(METHOD_LABELS.get(m, m))}</text>'
        )
    return out


def accuracy_svg(dates: Sequence[dt.date], series: Mapping[str, Sequence[float | None]]) -> str:
    """Line chart of daily accuracy, one polyline per method."""
    methods = list(series)
    values = [v for s in series.values() for v in s if v is not None]
    lo = min(values, default=0.0)
    lo = max(0.0, np.floor(lo * 20) / 20) if values else 0.0
    lo = min(lo, 0.9)
    hi = 1.0
    plot_w = _W - _PAD_L - _PAD_R
    plot_h = _H - _PAD_T - _PAD_B
    n = len(dates)

    def xy(i: int, v: float) -> str:
        x = _PAD_L + (plot_w * i / (n - 1) if n > 1 else plot_w / 2)
        y = _H - _PAD_B - plot_h * (v - lo) / (hi - lo)
        return f"{x:.2f},{y:.2f}"

    out = _svg_open("Daily accuracy")
    out += _y_axis(lo, hi)
    for i, d in enumerate(dates):
        if n <= 12 or i % max(1, n // 12) == 0 or i == n - 1:
            x = _PAD_L + (plot_w * i / (n - 1) if n > 1 else plot_w / 2)
            out.append(
                f'<text x="{x:.2f}" y="{_H - _PAD_B + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{d.isoformat()}</text>'
            )
    for m in methods:
        pts = " ".join(xy(i, v) for i, v in enumerate(series[m]) if v is not None)
        color = METHOD_COLORS.get(m, "#444")
        out.append(f'<polyline data-method="{escape(m)}" fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
    out += _legend(methods)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def averages_svg(macro: Mapping[str, Mapping[str, float | None]]) -> str:
    """Grouped bar chart of macro-averaged metrics per method."""
    methods = list(macro)
    plot_w = _W - _PAD_L - _PAD_R
    plot_h = _H - _PAD_T - _PAD_B
    group_w = plot_w / len(METRIC_NAMES)
    bar_w = group_w * 0.8 / max(1, len(methods))
    out = _svg_open("Average metrics")
    out += _y_axis(0.0, 1.0)
    for g, name in enumerate(METRIC_NAMES):
        gx = _PAD_L + g * group_w + group_w * 0.1
        out.append(
            f'<text x="{gx + group_w * 0.4:.2f}" y="{_H - _PAD_B + 16}" text-anchor="middle" font-family="sans-serif" font-size="12">{name.upper()}</text>'
        )
        for k, m in enumerate(methods):
            v = macro[m].get(name)
            if v is None:
                continue
            h = plot_h * v
            x = gx + k * bar_w
            color = METHOD_COLORS.get(m, "#444")
            out.append(
                f'<rect data-method="{escape(m)}" data-metric="{name}" x="{x:.2f}" y="{_H - _PAD_B - h:.2f}" '
                f'width="{bar_w * 0.9:.2f}" height="{h:.2f}" fill="{color}"><title>{v:.4f}</title></rect>'
            )
    out += _legend(methods)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def report_series(report) -> tuple[list[dt.date], dict[str, list[float | None]]]:
    dates = [d.day for d in report.days]
    return dates, {m: [d.metrics[m].acc for d in report.days] for m in report.methods}


def environment_stamp() -> dict:
    import scipy

    return {
        "package_version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


def run_json(report, config: dict) -> str:
    doc = {
        "config": config,
        "environment": environment_stamp(),
        "macro_averages": report.macro_averages,
        "pooled_metrics": {k: v.as_dict() for k, v in report.pooled_metrics.items()},
        "pooled_counts": {k: asdict(v) for k, v in report.pooled_counts.items()},
        "days": [
            {
                "date": d.day.isoformat(),
                "train_size": d.train_size,
                "test_size": d.test_size,
                "empty_bics": d.empty_bics_count,
                "details": d.details,
                "train_time": d.train_time,
                "classify_time": d.classify_time,
            }
            for d in report.days
        ],
    }
    return json.dumps(doc, indent=1) + "\n"


def write_results(report, out_dir: str | Path, config: dict) -> dict[str, Path]:
    """Write report.csv, accuracy.svg, averages.svg and run.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dates, series = report_series(report)
    paths = {
        "report.csv": out / "report.csv",
        "accuracy.svg": out / "accuracy.svg",
        "averages.svg": out / "averages.svg",
        "run.json": out / "run.json",
    }
    paths["report.csv"].write_bytes(emit_csv(report))
    paths["accuracy.svg"].write_text(accuracy_svg(dates, series), encoding="utf-8")
    paths["averages.svg"].write_text(averages_svg(report.macro_averages), encoding="utf-8")
    paths["run.json"].write_text(run_json(report, config), encoding="utf-8")
    return paths


def summarize_csv(rows: Sequence[tuple[dt.date, str, ConfusionCounts]]):
    """Rebuild per-method daily metrics and averages from parsed CSV rows."""
    methods: list[str] = []
    for _, m, _ in rows:
        if m not in methods:
            methods.append(m)
    dates = sorted({d for d, _, _ in rows})
    by_key = {(d, m): c for d, m, c in rows}
    series = {m: [compute_metrics(by_key[(d, m)]).acc if (d, m) in by_key else None for d in dates] for m in methods}
    macro: dict[str, dict[str, float | None]] = {}
    pooled: dict[str, dict[str, float | None]] = {}
    for m in methods:
        counts = [c for (d, mm), c in by_key.items() if mm == m]
        total = ConfusionCounts()
        for c in counts:
            total = total + c
        pooled[m] = compute_metrics(total).as_dict()
        macro[m] = {}
        for name in METRIC_NAMES:
            vals = [getattr(compute_metrics(by_key[(d, m)]), name) for d in dates if (d, m) in by_key]
            vals = [v for v in vals if v is not None]
            macro[m][name] = math.fsum(vals) / len(vals) if vals else None
    return dates, series, macro, pooled
