"""Minimal hand-written SVG line charts for reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 720, 400
MARGIN = 60
COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    dashed: bool = False


@dataclass
class Chart:
    title: str
    xlabel: str
    ylabel: str
    log_y: bool = False
    series: list[Series] = field(default_factory=list)
    markers: list[tuple[float, str]] = field(default_factory=list)  # (x, colour) vertical ticks

    def render(self) -> str:
        xs = [s.x for s in self.series if len(s.x)]
        ys = [self._ty(s.y) for s in self.series if len(s.y)]
        if not xs:
            return self._frame([], 0, 1, 0, 1)
        x0 = min(float(np.min(x)) for x in xs)
        x1 = max(float(np.max(x)) for x in xs)
        finite = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.array([])
        y0, y1 = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
        if x1 <= x0:
            x1 = x0 + 1.0
        if y1 <= y0:
            y1 = y0 + 1.0
        body = []
        for i, s in enumerate(self.series):
            body.append(self._polyline(s, i, x0, x1, y0, y1))
        for x, colour in self.markers:
            px = self._px(x, x0, x1)
            body.append(f'<line x1="{px:.2f}" y1="{HEIGHT - MARGIN}" x2="{px:.2f}" y2="{HEIGHT - MARGIN + 6}" '
                        f'stroke="{colour}" stroke-width="1"/>')
        return self._frame(body, x0, x1, y0, y1)

    def _ty(self, y):
        y = np.asarray(y, dtype=float)
        if not self.log_y:
            return y
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(y > 0, np.log10(y), np.nan)

    @staticmethod
    def _px(x, x0, x1):
        return MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2 * MARGIN)

    @staticmethod
    def _py(y, y0, y1):
        return HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2 * MARGIN)

    def _polyline(self, s: Series, i, x0, x1, y0, y1) -> str:
        ty = self._ty(s.y)
        # thin out long series so files stay small
        step = max(1, len(s.x) // 4000)
        pts = []
        for x, y in zip(s.x[::step], ty[::step]):
            if math.isfinite(y):
                pts.append(f"{self._px(x, x0, x1):.2f},{self._py(y, y0, y1):.2f}")
        dash = ' stroke-dasharray="6 4"' if s.dashed else ""
        colour = COLOURS[i % len(COLOURS)]
        return f'<polyline fill="none" stroke="{colour}" stroke-width="1.2"{dash} points="{" ".join(pts)}"/>'

    def _frame(self, body, x0, x1, y0, y1) -> str:
        ylab = f"log10 {self.ylabel}" if self.log_y else self.ylabel
        legend = "".join(
            f'<text x="{WIDTH - MARGIN - 150}" y="{MARGIN + 16 * i}" fill="{COLOURS[i % len(COLOURS)]}" '
            f'font-size="12">{escape(s.label)}</text>'
            for i, s in enumerate(self.series)
        )
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">\n'
            f'<rect width="100%" height="100%" fill="white"/>\n'
            f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="15">{escape(self.title)}</text>\n'
            f'<rect x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" height="{HEIGHT - 2 * MARGIN}" '
            f'fill="none" stroke="black"/>\n'
            f'<text x="{WIDTH / 2}" y="{HEIGHT - 15}" text-anchor="middle" font-size="12">{escape(self.xlabel)}</text>\n'
            f'<text x="15" y="{HEIGHT / 2}" font-size="12" transform="rotate(-90 15 {HEIGHT / 2})" '
            f'text-anchor="middle">{escape(ylab)}</text>\n'
            f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 20}" font-size="10">{x0:.4g}</text>\n'
            f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 20}" font-size="10" text-anchor="end">{x1:.4g}</text>\n'
            f'<text x="{MARGIN - 4}" y="{HEIGHT - MARGIN}" font-size="10" text-anchor="end">{y0:.3g}</text>\n'
            f'<text x="{MARGIN - 4}" y="{MARGIN + 10}" font-size="10" text-anchor="end">{y1:.3g}</text>\n'
            + "\n".join(body) + "\n" + legend + "\n</svg>\n"
        )
