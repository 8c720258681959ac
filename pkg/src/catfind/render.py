"""Deterministic SVG plots of traced branches and census grids.

Output depends only on the inputs and options: fixed palette, fixed number
formatting, no timestamps or random ids, so identical inputs give
byte-identical files.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["Series", "Marker", "branch_svg", "census_svg"]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
CELL_COLOURS = ("#f7fbff", "#deebf7", "#c6dbef", "#9ecae1", "#6baed6", "#4292c6", "#2171b5", "#08519c",
                "#08306b")

WIDTH, HEIGHT = 520, 400
LEFT, RIGHT, TOP, BOTTOM = 64, 20, 28, 48


@dataclass(frozen=True)
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class Marker:
    label: str
    x: float
    y: float


def _f(v: float) -> str:
    return f"{v:.2f}"


def _tick(v: float) -> str:
    s = f"{v:.3g}"
    return "0" if s in ("-0", "0") else s


def _range(values: Sequence[np.ndarray]) -> tuple[float, float]:
    finite = [v[np.isfinite(v)] for v in values if len(v)]
    finite = [v for v in finite if len(v)]
    if not finite:
        return 0.0, 1.0
    lo = float(min(v.min() for v in finite))
    hi = float(max(v.max() for v in finite))
    if hi - lo < 1e-12 * max(1.0, abs(lo), abs(hi)):
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.04 * (hi - lo)
    return lo - pad, hi + pad


class _Frame:
    def __init__(self, xr: tuple[float, float], yr: tuple[float, float]):
        self.xr, self.yr = xr, yr
        self.w = WIDTH - LEFT - RIGHT
        self.h = HEIGHT - TOP - BOTTOM

    def px(self, x: float) -> float:
        return LEFT + (x - self.xr[0]) / (self.xr[1] - self.xr[0]) * self.w

    def py(self, y: float) -> float:
        return TOP + (self.yr[1] - y) / (self.yr[1] - self.yr[0]) * self.h

    def axes(self, xlabel: str, ylabel: str, title: str) -> list[str]:
        out = [f'<rect x="{LEFT}" y="{TOP}" width="{self.w}" height="{self.h}" fill="none" stroke="#000"/>']
        for v in np.linspace(self.xr[0], self.xr[1], 5):
            x = self.px(v)
            out.append(f'<line x1="{_f(x)}" y1="{TOP + self.h}" x2="{_f(x)}" y2="{TOP + self.h + 4}" stroke="#000"/>')
            out.append(f'<text x="{_f(x)}" y="{TOP + self.h + 16}" text-anchor="middle">{escape(_tick(v))}</text>')
        for v in np.linspace(self.yr[0], self.yr[1], 5):
            y = self.py(v)
            out.append(f'<line x1="{LEFT - 4}" y1="{_f(y)}" x2="{LEFT}" y2="{_f(y)}" stroke="#000"/>')
            out.append(f'<text x="{LEFT - 6}" y="{_f(y + 4)}" text-anchor="end">{escape(_tick(v))}</text>')
        out.append(f'<text x="{_f(LEFT + self.w / 2)}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>')
        out.append(f'<text x="14" y="{_f(TOP + self.h / 2)}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {_f(TOP + self.h / 2)})">{escape(ylabel)}</text>')
        if title:
            out.append(f'<text x="{_f(LEFT + self.w / 2)}" y="18" text-anchor="middle">{escape(title)}</text>')
        return out


def _document(body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">')
    return "\n".join([head, f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#fff"/>', *body, "</svg>"]) + "\n"


def branch_svg(series: Sequence[Series], markers: Sequence[Marker] = (), xlabel: str = "", ylabel: str = "",
               title: str = "") -> str:
    """Polylines for branches, circles for events.  Non-finite points break a line."""
    xr = _range([s.x for s in series] + [np.array([m.x for m in markers])])
    yr = _range([s.y for s in series] + [np.array([m.y for m in markers])])
    fr = _Frame(xr, yr)
    body = fr.axes(xlabel, ylabel, title)
    for k, s in enumerate(series):
        colour = PALETTE[k % len(PALETTE)]
        runs, cur = [], []
        for x, y in zip(s.x, s.y):
            if np.isfinite(x) and np.isfinite(y):
                cur.append(f"{_f(fr.px(x))},{_f(fr.py(y))}")
            elif cur:
                runs.append(cur)
                cur = []
        if cur:
            runs.append(cur)
        for run in runs:
            body.append(f'<polyline points="{" ".join(run)}" fill="none" stroke="{colour}" stroke-width="1.5">'
                        f'<title>{escape(s.label)}</title></polyline>')
    for m in markers:
        x, y = fr.px(m.x), fr.py(m.y)
        body.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="4" fill="#000"><title>{escape(m.label)}</title></circle>')
        body.append(f'<text x="{_f(x + 6)}" y="{_f(y - 6)}">{escape(m.label)}</text>')
    return _document(body)


def census_svg(row_axis: np.ndarray, col_axis: np.ndarray, counts: np.ndarray, row_label: str = "",
               col_label: str = "", title: str = "") -> str:
    """Cells coloured by critical-point count, rows on the horizontal axis.

    ``counts[i, j]`` is drawn at (row_axis[i], col_axis[j]); cells are
    labelled with their count when large enough to read.
    """
    row_axis = np.asarray(row_axis, dtype=float)
    col_axis = np.asarray(col_axis, dtype=float)

    def edges(a: np.ndarray) -> tuple[float, float, float]:
        if len(a) == 0:
            return 0.0, 1.0, 1.0
        w = float(a[1] - a[0]) if len(a) > 1 else 1.0
        return float(a[0] - w / 2), float(a[-1] + w / 2), w

    x0, x1, wx = edges(row_axis)
    y0, y1, wy = edges(col_axis)
    fr = _Frame((x0, x1), (y0, y1))
    body = fr.axes(row_label, col_label, title)
    cw, ch = fr.w * wx / (x1 - x0), fr.h * wy / (y1 - y0)
    for i, a in enumerate(row_axis):
        for j, b in enumerate(col_axis):
            c = int(counts[i, j])
            colour = CELL_COLOURS[min(c, len(CELL_COLOURS) - 1)]
            x, y = fr.px(a - wx / 2), fr.py(b + wy / 2)
            body.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(cw)}" height="{_f(ch)}" fill="{colour}"/>')
            if cw >= 12 and ch >= 12:
                ink = "#fff" if c >= 5 else "#000"
                body.append(f'<text x="{_f(x + cw / 2)}" y="{_f(y + ch / 2 + 4)}" text-anchor="middle" '
                            f'fill="{ink}">{c}</text>')
    return _document(body)
