"""Dependency-free SVG line charts for sweep curves."""

from __future__ import annotations

import math
from html import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def line_chart_svg(series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
                   width: int = 480, height: int = 320, logx: bool = False) -> str:
    """``series`` maps a label to ``(xs, ys)``; returns the SVG document as text."""
    pad_l, pad_r, pad_t, pad_b = 60, 110, 30, 45
    tx = (lambda x: math.log10(x)) if logx else (lambda x: x)
    xs = [tx(x) for pts in series.values() for x in pts[0]]
    ys = [y for pts in series.values() for y in pts[1]]
    if not xs:
        raise ValueError("nothing to plot")
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(x):
        return pad_l + (tx(x) - x0) / (x1 - x0) * pw

    def py(y):
        return pad_t + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
           f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<text x="{pad_l + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="14" y="{pad_t + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 14 {pad_t + ph / 2:.1f})">{escape(ylabel)}</text>',
           f'<text x="{pad_l - 4}" y="{pad_t + 4}" text-anchor="end">{y1:.3g}</text>',
           f'<text x="{pad_l - 4}" y="{pad_t + ph}" text-anchor="end">{y0:.3g}</text>']
    for label, (sx, sy) in series.items():
        for x in sx:
            out.append(f'<text x="{px(x):.1f}" y="{pad_t + ph + 14}" text-anchor="middle">{x:g}</text>')
        break
    for i, (label, (sx, sy)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(sx, sy))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in zip(sx, sy):
            out.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="2.5" fill="{color}"/>')
        ly = pad_t + 12 + 16 * i
        out.append(f'<line x1="{width - pad_r + 8}" y1="{ly - 4}" x2="{width - pad_r + 24}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{width - pad_r + 28}" y="{ly}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
