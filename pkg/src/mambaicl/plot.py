"""Deterministic SVG line chart of sweep results, written by hand."""

from __future__ import annotations

from collections import defaultdict
from xml.sax.saxutils import escape

from .errors import ValidationError
from .results import ResultRow

WIDTH, HEIGHT = 640, 420
MARGIN = {"left": 70, "right": 150, "top": 30, "bottom": 55}
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


def _num(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def render_svg(rows: list[ResultRow]) -> str:
    """One polyline per model with std_err bars; models are drawn in sorted order."""
    if not rows:
        raise ValidationError("no rows to plot")
    series: dict[str, list[ResultRow]] = defaultdict(list)
    for row in rows:
        series[row.model].append(row)
    xs = [r.n_context for r in rows]
    lows = [r.mean_err - r.std_err for r in rows]
    highs = [r.mean_err + r.std_err for r in rows]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(0.0, min(lows)), max(highs)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y1 = y0 + 1.0
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return MARGIN["top"] + (1 - (y - y0) / (y1 - y0)) * ph

    metric = rows[0].metric
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<g stroke="black" stroke-width="1">'
        f'<line x1="{_num(sx(x0))}" y1="{_num(sy(y0))}" x2="{_num(sx(x1))}" y2="{_num(sy(y0))}"/>'
        f'<line x1="{_num(sx(x0))}" y1="{_num(sy(y0))}" x2="{_num(sx(x0))}" y2="{_num(sy(y1))}"/></g>',
    ]
    for t in _ticks(x0, x1):
        out.append(
            f'<text x="{_num(sx(t))}" y="{_num(sy(y0) + 18)}" font-size="11" text-anchor="middle">{t:g}</text>'
        )
    for t in _ticks(y0, y1):
        out.append(f'<text x="{_num(sx(x0) - 6)}" y="{_num(sy(t) + 4)}" font-size="11" text-anchor="end">{t:.3g}</text>')
    out.append(
        f'<text x="{_num(MARGIN["left"] + pw / 2)}" y="{HEIGHT - 12}" font-size="13" text-anchor="middle">'
        "context length N</text>"
    )
    out.append(
        f'<text x="16" y="{_num(MARGIN["top"] + ph / 2)}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {_num(MARGIN["top"] + ph / 2)})">mean {escape(metric)} error</text>'
    )
    for i, model in enumerate(sorted(series)):
        color = PALETTE[i % len(PALETTE)]
        pts = sorted(series[model], key=lambda r: r.n_context)
        out.append(f'<g class="series" data-model="{escape(model)}" stroke="{color}" fill="none">')
        for r in pts:
            x = _num(sx(r.n_context))
            out.append(
                f'<line class="errbar" x1="{x}" y1="{_num(sy(r.mean_err - r.std_err))}" '
                f'x2="{x}" y2="{_num(sy(r.mean_err + r.std_err))}" stroke-width="0.8"/>'
            )
        coords = " ".join(f"{_num(sx(r.n_context))},{_num(sy(r.mean_err))}" for r in pts)
        out.append(f'<polyline points="{coords}" stroke-width="1.8"/>')
        out.append("</g>")
        ly = MARGIN["top"] + 10 + 18 * i
        lx = WIDTH - MARGIN["right"] + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}" font-size="12">{escape(model)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
