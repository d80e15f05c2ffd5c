"""Minimal SVG line plots, so the CLI has no plotting dependency.

The CSV files are the canonical output; these plots are a convenience.
"""

import math

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
W, H = 640, 400
ML, MR, MT, MB = 70, 20, 40, 50


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step) + 1)]


def _fmt(v):
    return format(v, ".4g")


def line_plot(path, x, series, *, title="", xlabel="", ylabel="", logx=False):
    """Write an SVG with one polyline per entry of ``series`` (label -> y array)."""
    x = np.asarray(x, dtype=float)
    xs = np.log10(x) if logx else x
    keep = np.isfinite(xs)
    ys_all = [np.asarray(y, dtype=float)[keep] for y in series.values()]
    xs = xs[keep]
    finite = np.concatenate([y[np.isfinite(y)] for y in ys_all]) if ys_all else np.array([0.0])
    if finite.size == 0:
        finite = np.array([0.0])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(finite.min()), float(finite.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return ML + (v - x0) / (x1 - x0) * (W - ML - MR)

    def py(v):
        return H - MB - (v - y0) / (y1 - y0) * (H - MT - MB)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">',
        f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="black"/>',
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle">{xlabel}</text>',
        f'<text x="15" y="{H / 2}" text-anchor="middle" transform="rotate(-90 15 {H / 2})">{ylabel}</text>',
    ]
    for t in _ticks(x0, x1):
        label = _fmt(10**t) if logx else _fmt(t)
        out.append(f'<line x1="{px(t):.1f}" y1="{H - MB}" x2="{px(t):.1f}" y2="{H - MB + 4}" stroke="black"/>')
        out.append(f'<text x="{px(t):.1f}" y="{H - MB + 16}" text-anchor="middle">{label}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{ML - 4}" y1="{py(t):.1f}" x2="{ML}" y2="{py(t):.1f}" stroke="black"/>')
        out.append(f'<text x="{ML - 6}" y="{py(t) + 4:.1f}" text-anchor="end">{_fmt(t)}</text>')
    for i, (label, y) in enumerate(zip(series, ys_all)):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs, y) if math.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        ly = MT + 14 + 14 * i
        out.append(f'<line x1="{W - MR - 120}" y1="{ly - 4}" x2="{W - MR - 100}" y2="{ly - 4}" stroke="{color}"/>')
        out.append(f'<text x="{W - MR - 95}" y="{ly}">{label}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
