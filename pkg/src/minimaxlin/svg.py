"""Tiny dependency-free SVG line/band plots for the batch commands."""

from __future__ import annotations

import math

_W, _H = 720, 480
_ML, _MR, _MT, _MB = 70, 20, 30, 50


def _ticks(lo, hi, n=6):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * max(abs(hi), 1.0):
        out.append(round(v, 12))
        v += step
    return out


def line_plot(x, series, title="", xlabel="", ylabel=""):
    """Render polylines and shaded bands over a shared x axis.

    ``series`` is a list of dicts: {"y": values, "label": str, "color": str}
    for lines, plus optional {"y2": values} to draw a band between y and y2.
    Returns the SVG document as a string.
    """
    xs = [float(v) for v in x]
    ys_all = []
    for s in series:
        ys_all.extend(float(v) for v in s["y"])
        if "y2" in s and s["y2"] is not None:
            ys_all.extend(float(v) for v in s["y2"])
    xlo, xhi = min(xs), max(xs)
    ylo, yhi = min(ys_all), max(ys_all)
    if xhi <= xlo:
        xhi = xlo + 1.0
    pad = 0.05 * (yhi - ylo or 1.0)
    ylo, yhi = ylo - pad, yhi + pad
    iw, ih = _W - _ML - _MR, _H - _MT - _MB

    def px(v):
        return _ML + (v - xlo) / (xhi - xlo) * iw

    def py(v):
        return _MT + (yhi - v) / (yhi - ylo) * ih

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{_W / 2:.1f}" y="18" text-anchor="middle" '
                     f'font-size="14">{title}</text>')
    for tv in _ticks(xlo, xhi):
        if tv < xlo - 1e-12 or tv > xhi + 1e-12:
            continue
        xx = px(tv)
        parts.append(f'<line x1="{xx:.2f}" y1="{_MT}" x2="{xx:.2f}" '
                     f'y2="{_H - _MB}" stroke="#eeeeee"/>')
        parts.append(f'<text x="{xx:.2f}" y="{_H - _MB + 16}" '
                     f'text-anchor="middle">{tv:.6g}</text>')
    for tv in _ticks(ylo, yhi):
        yy = py(tv)
        parts.append(f'<line x1="{_ML}" y1="{yy:.2f}" x2="{_W - _MR}" '
                     f'y2="{yy:.2f}" stroke="#eeeeee"/>')
        parts.append(f'<text x="{_ML - 6}" y="{yy + 4:.2f}" '
                     f'text-anchor="end">{tv:.6g}</text>')
    parts.append(f'<rect x="{_ML}" y="{_MT}" width="{iw}" height="{ih}" '
                 f'fill="none" stroke="#333333"/>')
    for s in series:
        color = s.get("color", "#1f77b4")
        if "y2" in s and s["y2"] is not None:
            top = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs, s["y"]))
            bot = " ".join(f"{px(a):.2f},{py(b):.2f}"
                           for a, b in zip(reversed(xs), reversed(list(s["y2"]))))
            parts.append(f'<polygon points="{top} {bot}" fill="{color}" '
                         f'fill-opacity="0.15" stroke="none"/>')
        else:
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs, s["y"]))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                         f'stroke-width="1.5"/>')
    if xlabel:
        parts.append(f'<text x="{_W / 2:.1f}" y="{_H - 12}" '
                     f'text-anchor="middle">{xlabel}</text>')
    if ylabel:
        parts.append(f'<text x="16" y="{_H / 2:.1f}" text-anchor="middle" '
                     f'transform="rotate(-90 16 {_H / 2:.1f})">{ylabel}</text>')
    legend_y = _MT + 14
    for s in series:
        if s.get("label"):
            color = s.get("color", "#1f77b4")
            parts.append(f'<line x1="{_W - _MR - 150}" y1="{legend_y - 4}" '
                         f'x2="{_W - _MR - 125}" y2="{legend_y - 4}" '
                         f'stroke="{color}" stroke-width="2"/>')
            parts.append(f'<text x="{_W - _MR - 118}" y="{legend_y}">{s["label"]}</text>')
            legend_y += 16
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
