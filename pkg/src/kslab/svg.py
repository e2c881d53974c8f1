"""Minimal SVG output: line plots and heat strips, written as plain text."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H = 560, 360
PAD_L, PAD_R, PAD_T, PAD_B = 64, 140, 36, 48


def _fmt(v):
    return f"{v:.4g}"


def _frame(title, xlabel, ylabel):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{PAD_L + (W - PAD_L - PAD_R) / 2:.1f}" y="{H - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{H / 2:.1f}" text-anchor="middle" transform="rotate(-90 14 {H / 2:.1f})">{escape(ylabel)}</text>',
    ]


def line_plot(path, series, title="", xlabel="x", ylabel="y", logy=False):
    """``series``: list of (label, xs, ys).  Writes an SVG file and returns its path."""
    xs_all = np.concatenate([np.asarray(s[1], float) for s in series])
    ys_all = np.concatenate([np.asarray(s[2], float) for s in series])
    if logy:
        ys_all = np.log10(np.maximum(np.abs(ys_all), 1e-300))
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = float(ys_all.min()), float(ys_all.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = W - PAD_L - PAD_R, H - PAD_T - PAD_B

    def X(v):
        return PAD_L + (v - x0) / (x1 - x0) * pw

    def Y(v):
        return PAD_T + ph - (v - y0) / (y1 - y0) * ph

    out = _frame(title, xlabel, ("log10 " if logy else "") + ylabel)
    out.append(f'<rect x="{PAD_L}" y="{PAD_T}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{PAD_L - 6}" y="{Y(v) + 4:.1f}" text-anchor="end">{_fmt(v)}</text>')
    for v in np.linspace(x0, x1, 5):
        out.append(f'<text x="{X(v):.1f}" y="{PAD_T + ph + 16}" text-anchor="middle">{_fmt(v)}</text>')
    for i, (label, xs, ys) in enumerate(series):
        ys = np.asarray(ys, float)
        if logy:
            ys = np.log10(np.maximum(np.abs(ys), 1e-300))
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(np.asarray(xs, float), ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"/>')
        for a, b in zip(np.asarray(xs, float), ys):
            out.append(f'<circle cx="{X(a):.2f}" cy="{Y(b):.2f}" r="2.5" fill="{color}"/>')
        ly = PAD_T + 14 + 16 * i
        out.append(f'<line x1="{W - PAD_R + 10}" y1="{ly}" x2="{W - PAD_R + 28}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - PAD_R + 32}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
    return path


def heat_strip(path, times, x, weights, title="filter density", cells=None):
    """Rows are time snapshots, columns grid points; colour encodes weight / dx."""
    weights = np.asarray(weights, float)
    nt, nx = weights.shape
    if cells is not None and nt > cells:
        keep = np.unique(np.linspace(0, nt - 1, cells).round().astype(int))
        weights, times = weights[keep], np.asarray(times)[keep]
        nt = weights.shape[0]
    pw, ph = W - PAD_L - PAD_R, H - PAD_T - PAD_B
    cw, ch = pw / nx, ph / nt
    vmax = float(weights.max()) or 1.0
    out = _frame(title, "x", "t")
    for i in range(nt):
        for j in range(nx):
            s = weights[i, j] / vmax
            r = int(255 * (1 - 0.15 * s))
            g = int(255 * (1 - 0.75 * s))
            b = int(255 * (1 - 0.95 * s))
            out.append(
                f'<rect x="{PAD_L + j * cw:.2f}" y="{PAD_T + i * ch:.2f}" width="{cw + 0.05:.2f}" height="{ch + 0.05:.2f}" fill="rgb({r},{g},{b})"/>'
            )
    out.append(f'<text x="{PAD_L - 6}" y="{PAD_T + 10}" text-anchor="end">{_fmt(float(times[0]))}</text>')
    out.append(f'<text x="{PAD_L - 6}" y="{PAD_T + ph}" text-anchor="end">{_fmt(float(times[-1]))}</text>')
    out.append(f'<text x="{PAD_L}" y="{PAD_T + ph + 16}" text-anchor="middle">{_fmt(float(x[0]))}</text>')
    out.append(f'<text x="{PAD_L + pw}" y="{PAD_T + ph + 16}" text-anchor="middle">{_fmt(float(x[-1]))}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
    return path
