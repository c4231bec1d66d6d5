"""Minimal deterministic SVG line charts."""

from __future__ import annotations

from typing import Mapping

import numpy as np
from numpy.typing import ArrayLike

WIDTH, HEIGHT = 800, 400
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 70, 110, 30, 40
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
MAX_POINTS = 2000


def _num(x: float) -> str:
    return format(float(x), ".2f")


def _tick(x: float) -> str:
    s = format(float(x), ".4g")
    return "0" if s == "-0" else s


def line_chart(
    x: ArrayLike,
    series: Mapping[str, ArrayLike],
    title: str = "",
    x_label: str = "t",
    n_ticks: int = 5,
) -> str:
    """Render each named series against ``x`` as a polyline on linear axes.

    Long series are thinned to at most 2000 evenly strided points (the last
    point is always kept).
    """
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    for k, v in ys.items():
        if v.shape != x.shape:
            raise ValueError(f"series {k!r} has shape {v.shape}, expected {x.shape}")
    if x.size == 0:
        raise ValueError("nothing to plot")

    stride = max(1, -(-x.size // MAX_POINTS))
    idx = np.arange(0, x.size, stride)
    if idx[-1] != x.size - 1:
        idx = np.append(idx, x.size - 1)

    x0, x1 = float(x.min()), float(x.max())
    finite = [v[np.isfinite(v)] for v in ys.values()]
    vals = np.concatenate(finite) if finite else np.zeros(1)
    y0, y1 = (float(vals.min()), float(vals.max())) if vals.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def px(v):
        return MARGIN_LEFT + (v - x0) / (x1 - x0) * pw

    def py(v):
        return MARGIN_TOP + (y1 - v) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" '
        'fill="none" stroke="black" stroke-width="1"/>',
    ]
    if title:
        out.append(
            f'<text x="{WIDTH / 2:.1f}" y="{MARGIN_TOP - 10}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{_escape(title)}</text>'
        )
    for v in np.linspace(x0, x1, n_ticks):
        X = px(v)
        out.append(
            f'<line x1="{_num(X)}" y1="{MARGIN_TOP + ph}" x2="{_num(X)}" '
            f'y2="{MARGIN_TOP + ph + 5}" stroke="black"/>'
        )
        out.append(
            f'<text x="{_num(X)}" y="{MARGIN_TOP + ph + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{_tick(v)}</text>'
        )
    for v in np.linspace(y0, y1, n_ticks):
        Y = py(v)
        out.append(
            f'<line x1="{MARGIN_LEFT - 5}" y1="{_num(Y)}" x2="{MARGIN_LEFT}" '
            f'y2="{_num(Y)}" stroke="black"/>'
        )
        out.append(
            f'<text x="{MARGIN_LEFT - 8}" y="{_num(Y + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{_tick(v)}</text>'
        )
    out.append(
        f'<text x="{MARGIN_LEFT + pw / 2:.1f}" y="{HEIGHT - 6}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{_escape(x_label)}</text>'
    )
    for k, (name, v) in enumerate(ys.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(
            f"{_num(px(x[i]))},{_num(py(v[i]))}" for i in idx if np.isfinite(v[i])
        )
        out.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'
        )
        ly = MARGIN_TOP + 15 + 18 * k
        lx = MARGIN_LEFT + pw + 10
        out.append(
            f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{lx + 25}" y="{ly + 4}" font-family="sans-serif" '
            f'font-size="12">{_escape(name)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
