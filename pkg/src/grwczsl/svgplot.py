"""Minimal SVG line and scatter charts for run summaries."""
from __future__ import annotations

from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 480, 320
MARGIN = 50


def _scale(values, lo, hi, out_lo, out_hi):
    values = np.asarray(values, dtype=np.float64)
    span = hi - lo if hi > lo else 1.0
    return out_lo + (values - lo) / span * (out_hi - out_lo)


def _bounds(v):
    v = np.asarray(v, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


class _Canvas:
    def __init__(self, x, y, title, xlabel, ylabel, ylim=None):
        self.xlo, self.xhi = _bounds(x)
        self.ylo, self.yhi = ylim if ylim is not None else _bounds(y)
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
            f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN / 2}" '
            f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
            f'<line x1="{MARGIN}" y1="{MARGIN / 2}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" '
            f'stroke="black"/>',
            f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" text-anchor="middle" '
            f'font-size="12">{escape(xlabel)}</text>',
            f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>',
        ]
        for val, px in ((self.xlo, MARGIN), (self.xhi, WIDTH - MARGIN / 2)):
            self.parts.append(f'<text x="{px}" y="{HEIGHT - MARGIN + 15}" text-anchor="middle" '
                              f'font-size="10">{val:.3g}</text>')
        for val, py in ((self.ylo, HEIGHT - MARGIN), (self.yhi, MARGIN / 2)):
            self.parts.append(f'<text x="{MARGIN - 4}" y="{py + 4}" text-anchor="end" '
                              f'font-size="10">{val:.3g}</text>')

    def px(self, x, y):
        return (_scale(x, self.xlo, self.xhi, MARGIN, WIDTH - MARGIN / 2),
                _scale(y, self.ylo, self.yhi, HEIGHT - MARGIN, MARGIN / 2))

    def polyline(self, x, y, color):
        X, Y = self.px(x, y)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(X, Y))
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')

    def points(self, x, y, color, r=3):
        X, Y = self.px(x, y)
        for a, b in zip(X, Y):
            self.parts.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="{r}" fill="{color}"/>')

    def render(self):
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def line_chart(x: Sequence[float], y: Sequence[float], title, xlabel, ylabel,
               ylim=(0.0, 1.0)) -> str:
    c = _Canvas(x, y, title, xlabel, ylabel, ylim)
    c.polyline(x, y, "steelblue")
    c.points(x, y, "steelblue")
    return c.render()


def fit_line(x, y):
    """Least-squares ``(slope, intercept)``."""
    slope, intercept = np.polyfit(np.asarray(x, float), np.asarray(y, float), 1)
    return float(slope), float(intercept)


def pearson(x, y) -> Optional[float]:
    """Pearson correlation, or ``None`` when either series is constant or too short."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def scatter_with_fit(x, y, title, xlabel, ylabel) -> str:
    c = _Canvas(x, y, title, xlabel, ylabel)
    c.points(x, y, "darkorange")
    if len(x) >= 2 and np.ptp(np.asarray(x, float)) > 0:
        slope, icpt = fit_line(x, y)
        xs = np.array([c.xlo, c.xhi])
        c.polyline(xs, np.clip(slope * xs + icpt, c.ylo, c.yhi), "black")
    return c.render()
