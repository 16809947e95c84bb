"""Minimal deterministic SVG line charts (no plotting dependency).

Byte-stable output: fixed palette, fixed layout, trimmed float formatting.
"""

from __future__ import annotations

import numpy as np

WIDTH, HEIGHT = 860, 460
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 36, 46
PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


class _Mapper:
    def __init__(self, x_range, y_range):
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0

    def x(self, v):
        frac = (v - self.x0) / (self.x1 - self.x0)
        return MARGIN_L + frac * (WIDTH - MARGIN_L - MARGIN_R)

    def y(self, v):
        frac = (v - self.y0) / (self.y1 - self.y0)
        return HEIGHT - MARGIN_B - frac * (HEIGHT - MARGIN_T - MARGIN_B)


def line_chart(path, title: str, x_label: str, y_label: str,
               series: list[dict], band: dict | None = None) -> None:
    """Write an overlay line chart.

    series: [{'name', 'x', 'y'}, ...]; band: {'x', 'lo', 'hi', 'name'}
    drawn as a filled polygon behind the lines.
    """
    xs = np.concatenate([np.asarray(s["x"], dtype=float) for s in series])
    ys = np.concatenate([np.asarray(s["y"], dtype=float) for s in series])
    if band is not None:
        ys = np.concatenate([ys, np.asarray(band["lo"]), np.asarray(band["hi"])])
    pad = 0.05 * (ys.max() - ys.min() + 1e-12)
    mapper = _Mapper((xs.min(), xs.max()), (ys.min() - pad, ys.max() + pad))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]
    # axes and ticks
    ax0, ax1 = mapper.x(mapper.x0), mapper.x(mapper.x1)
    ay0, ay1 = mapper.y(mapper.y0), mapper.y(mapper.y1)
    parts.append(f'<line x1="{_fmt(ax0)}" y1="{_fmt(ay0)}" x2="{_fmt(ax1)}" '
                 f'y2="{_fmt(ay0)}" stroke="black"/>')
    parts.append(f'<line x1="{_fmt(ax0)}" y1="{_fmt(ay0)}" x2="{_fmt(ax0)}" '
                 f'y2="{_fmt(ay1)}" stroke="black"/>')
    for tick in _ticks(mapper.x0, mapper.x1):
        px = mapper.x(tick)
        parts.append(f'<line x1="{_fmt(px)}" y1="{_fmt(ay0)}" x2="{_fmt(px)}" '
                     f'y2="{_fmt(ay0 + 5)}" stroke="black"/>')
        parts.append(f'<text x="{_fmt(px)}" y="{_fmt(ay0 + 18)}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{_fmt(tick)}</text>')
    for tick in _ticks(mapper.y0, mapper.y1):
        py = mapper.y(tick)
        parts.append(f'<line x1="{_fmt(ax0 - 5)}" y1="{_fmt(py)}" '
                     f'x2="{_fmt(ax0)}" y2="{_fmt(py)}" stroke="black"/>')
        parts.append(f'<text x="{_fmt(ax0 - 8)}" y="{_fmt(py + 4)}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{_fmt(tick)}</text>')
    parts.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 8}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12">{x_label}</text>')
    parts.append(f'<text x="16" y="{HEIGHT / 2}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 16 {HEIGHT / 2})">{y_label}</text>')

    if band is not None:
        bx = np.asarray(band["x"], dtype=float)
        lo = np.asarray(band["lo"], dtype=float)
        hi = np.asarray(band["hi"], dtype=float)
        points = []
        for xv, yv in zip(bx, hi):
            points.append(f"{_fmt(mapper.x(xv))},{_fmt(mapper.y(yv))}")
        for xv, yv in zip(bx[::-1], lo[::-1]):
            points.append(f"{_fmt(mapper.x(xv))},{_fmt(mapper.y(yv))}")
        parts.append(f'<polygon points="{" ".join(points)}" fill="#ffbb78" '
                     f'fill-opacity="0.5" stroke="none"/>')

    legend_y = MARGIN_T + 4
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(
            f"{_fmt(mapper.x(xv))},{_fmt(mapper.y(yv))}"
            for xv, yv in zip(np.asarray(s["x"], dtype=float),
                              np.asarray(s["y"], dtype=float)))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.2"/>')
        lx = WIDTH - MARGIN_R - 150
        parts.append(f'<line x1="{lx}" y1="{legend_y}" x2="{lx + 24}" '
                     f'y2="{legend_y}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 30}" y="{legend_y + 4}" '
                     f'font-family="sans-serif" font-size="11">{s["name"]}</text>')
        legend_y += 16
    if band is not None:
        lx = WIDTH - MARGIN_R - 150
        parts.append(f'<rect x="{lx}" y="{legend_y - 6}" width="24" height="10" '
                     f'fill="#ffbb78" fill-opacity="0.5"/>')
        parts.append(f'<text x="{lx + 30}" y="{legend_y + 4}" '
                     f'font-family="sans-serif" font-size="11">'
                     f'{band.get("name", "band")}</text>')
    parts.append("</svg>")
    from pathlib import Path

    Path(path).write_text("\n".join(parts) + "\n")
