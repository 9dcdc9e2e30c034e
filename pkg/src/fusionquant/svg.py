"""Minimal SVG line chart (polylines plus labelled axes)."""
from __future__ import annotations

from html import escape
from pathlib import Path
from typing import Sequence

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def line_chart(
    dates: Sequence,
    series: dict[str, Sequence[float]],
    title: str = "",
    x_label: str = "date",
    y_label: str = "value",
    width: int = 800,
    height: int = 400,
) -> str:
    left, right, top, bottom = 90, 20, 40, 60
    pw, ph = width - left - right, height - top - bottom
    values = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    lo, hi = float(np.nanmin(values)), float(np.nanmax(values))
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    n = len(dates)

    def xy(i, v):
        x = left + (pw * i / max(n - 1, 1))
        y = top + ph * (1.0 - (v - lo) / (hi - lo))
        return f"{x:.2f},{y:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{width / 2}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{left + pw / 2}" y="{height - 15}" text-anchor="middle" font-size="13">{escape(x_label)}</text>',
        f'<text x="20" y="{top + ph / 2}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 20 {top + ph / 2})">{escape(y_label)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        v = lo + frac * (hi - lo)
        y = top + ph * (1.0 - frac)
        parts.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end" font-size="11">{v:,.0f}</text>')
    if n:
        for i, anchor in ((0, "start"), (n - 1, "end")):
            x = left + pw * i / max(n - 1, 1)
            parts.append(f'<text x="{x:.2f}" y="{top + ph + 18}" text-anchor="{anchor}" font-size="11">'
                         f"{escape(str(dates[i]))}</text>")
    for k, (name, vals) in enumerate(series.items()):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(xy(i, v) for i, v in enumerate(np.asarray(vals, dtype=float)))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{left + 10}" y="{top + 16 + 16 * k}" font-size="12" fill="{color}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_line_chart(path: str | Path, dates, series, **kwargs) -> None:
    Path(path).write_text(line_chart(dates, series, **kwargs))
