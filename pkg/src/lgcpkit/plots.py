"""Minimal static SVG line plots (fixed 800x600 viewBox, paths only)."""
from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 800, 600
MARGIN = 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#7f7f7f", "#9467bd", "#ff7f0e")


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    color: str | None = None
    dashed: bool = False


def _path(xs, ys):
    parts = []
    pen_up = True
    for x, y in zip(xs, ys):
        if not (np.isfinite(x) and np.isfinite(y)):
            pen_up = True
            continue
        parts.append(f"{'M' if pen_up else 'L'}{x:.2f},{y:.2f}")
        pen_up = False
    return " ".join(parts)


def line_plot_svg(series, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    series = list(series)
    xs = np.concatenate([np.asarray(s.x, float) for s in series])
    ys = np.concatenate([np.asarray(s.y, float) for s in series])
    ok = np.isfinite(xs) & np.isfinite(ys)
    x0, x1 = (xs[ok].min(), xs[ok].max()) if ok.any() else (0.0, 1.0)
    y0, y1 = (ys[ok].min(), ys[ok].max()) if ok.any() else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(v):
        return MARGIN + (np.asarray(v, float) - x0) / (x1 - x0) * (WIDTH - 2 * MARGIN)

    def sy(v):
        return HEIGHT - MARGIN - (np.asarray(v, float) - y0) / (y1 - y0) * (HEIGHT - 2 * MARGIN)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<path d="M{MARGIN},{MARGIN} L{MARGIN},{HEIGHT - MARGIN} L{WIDTH - MARGIN},{HEIGHT - MARGIN}" '
           'fill="none" stroke="black"/>']
    for k, s in enumerate(series):
        color = s.color or COLORS[k % len(COLORS)]
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        out.append(f'<path d="{_path(sx(s.x), sy(s.y))}" fill="none" stroke="{color}"{dash}>'
                   f"<title>{escape(s.label)}</title></path>")
    if title:
        out.append(f"<title>{escape(title)}</title>")
    out.append(f"<desc>{escape(f'x: {xlabel} [{x0:.4g}, {x1:.4g}]; y: {ylabel} [{y0:.4g}, {y1:.4g}]')}</desc>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, series, **kw) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(line_plot_svg(series, **kw))
