"""Minimal deterministic SVG plots for the profile and the path panels."""
from __future__ import annotations

import math

import numpy as np

FONT = 'font-family="sans-serif" font-size="11"'


def _f(v):
    return f"{v:.3f}"


def _polyline(xs, ys, stroke="black", width=1.0, extra=""):
    pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{stroke}" stroke-width="{width}" {extra}points="{pts}"/>'


def _text(x, y, s, anchor="middle"):
    return f'<text x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}" {FONT}>{s}</text>'


def _document(width, height, body):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>"]) + "\n"


def _decimate(n, limit):
    if n <= limit:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, limit).round().astype(int))


class _Axes:
    def __init__(self, x0, y0, w, h, xlim, ylim):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xlim, self.ylim = xlim, ylim

    def X(self, x):
        a, b = self.xlim
        return self.x0 + (np.asarray(x) - a) / (b - a) * self.w

    def Y(self, y):
        a, b = self.ylim
        return self.y0 + self.h - (np.asarray(y) - a) / (b - a) * self.h

    def frame(self):
        return f'<rect x="{_f(self.x0)}" y="{_f(self.y0)}" width="{_f(self.w)}" height="{_f(self.h)}" fill="none" stroke="black"/>'


def _nice_limits(vals):
    lo, hi = float(np.min(vals)), float(np.max(vals))
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _pi_ticks(lo, hi):
    k0 = math.ceil(lo / (math.pi / 4) - 1e-9)
    k1 = math.floor(hi / (math.pi / 4) + 1e-9)
    return [k * math.pi / 4 for k in range(k0, k1 + 1)]


def profile_figure(theta, g, lap, maxima=(), support=None, title="") -> str:
    """Two stacked panels: g(theta) and (1+alpha)^2 g + g'' against theta/pi."""
    W, H = 640, 520
    body = []
    if title:
        body.append(_text(W / 2, 18, title))
    xlim = (float(theta[0]), float(theta[-1]))
    panels = [(g, "g", 40), (lap, "(1+alpha)^2 g + g''", 290)]
    for vals, label, top in panels:
        ax = _Axes(70, top, 540, 190, xlim, _nice_limits(vals))
        body.append(ax.frame())
        if ax.ylim[0] < 0 < ax.ylim[1]:
            body.append(_polyline(ax.X(xlim), ax.Y([0, 0]), stroke="#999999", width=0.8))
        for m in maxima:
            body.append(_polyline(ax.X([m, m]), ax.Y(ax.ylim), stroke="red", width=0.8,
                                  extra='stroke-dasharray="4,3" '))
        body.append(_polyline(ax.X(theta), ax.Y(vals), stroke="black", width=1.2))
        for t in _pi_ticks(*xlim):
            x = float(ax.X(t))
            body.append(f'<line x1="{_f(x)}" y1="{_f(top + 190)}" x2="{_f(x)}" y2="{_f(top + 195)}" stroke="black"/>')
            body.append(_text(x, top + 208, f"{t / math.pi:.2f}"))
        for v in ax.ylim:
            body.append(_text(64, float(ax.Y(v)) + 4, f"{v:.3g}", anchor="end"))
        body.append(_text(340, top - 6, label))
    body.append(_text(340, H - 6, "theta / pi"))
    return _document(W, H, body)


def paths_figure(panels, rays, radius, limit=1500) -> str:
    """Grid of square panels, one per epsilon: thin simulated paths and thick red rays.

    ``panels`` is a list of ``(epsilon, [xy arrays])``; ``rays`` are angles.
    """
    n = len(panels)
    cols = 2 if n > 1 else 1
    rows = max(1, math.ceil(n / cols))
    side, gap = 300, 30
    W = cols * side + (cols + 1) * gap
    H = rows * (side + gap) + gap
    body = []
    lim = (-1.05 * radius, 1.05 * radius)
    for k, (eps, paths) in enumerate(panels):
        r, c = divmod(k, cols)
        ax = _Axes(gap + c * (side + gap), gap + r * (side + gap), side, side, lim, lim)
        body.append(ax.frame())
        for a in rays:
            body.append(_polyline(ax.X([0, radius * math.cos(a)]), ax.Y([0, radius * math.sin(a)]),
                                  stroke="red", width=4.0, extra='stroke-opacity="0.6" '))
        for xy in paths:
            idx = _decimate(len(xy), limit)
            body.append(_polyline(ax.X(xy[idx, 0]), ax.Y(xy[idx, 1]), width=0.6))
        body.append(_text(ax.x0 + side / 2, ax.y0 - 8, f"eps = {eps:g}"))
    return _document(W, H, body)
