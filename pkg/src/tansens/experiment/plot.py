"""Minimal SVG line plots of gap and (display-scaled) sensitivity norm.

Scaling only happens here; the CSV always holds raw norm values.
"""

import math

import numpy as np

from .correlate import read_correlation_csv

WIDTH, HEIGHT, PAD = 640, 360, 48
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
          "#bcbd22", "#17becf")


def display_divisor(norm_max, gap_max):
    """Power of ten ``10^k`` with ``norm_max / 10^k`` in ``(0.1, 1] * gap_max``.

    Returns 1 when either series is identically zero.
    """
    norm_max, gap_max = abs(norm_max), abs(gap_max)
    if norm_max == 0 or gap_max == 0:
        return 1.0
    return 10.0 ** math.ceil(math.log10(norm_max / gap_max))


def _polyline(xs, ys, x_range, y_range, color, dash=False):
    x0, x1 = x_range
    y0, y1 = y_range
    sx = (WIDTH - 2 * PAD) / ((x1 - x0) or 1.0)
    sy = (HEIGHT - 2 * PAD) / ((y1 - y0) or 1.0)
    pts = " ".join(f"{PAD + (x - x0) * sx:.2f},{HEIGHT - PAD - (y - y0) * sy:.2f}" for x, y in zip(xs, ys))
    extra = ' stroke-dasharray="6,4"' if dash else ""
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{extra} points="{pts}"/>'


def render_svg(t, classes, cols, divisor=None):
    lines = []
    legend = []
    series = []
    for c in classes:
        gap = cols[f"gap_{c}"]
        norm = cols[f"ts_norm_{c}"]
        d = divisor or display_divisor(float(np.max(np.abs(norm))), float(np.max(np.abs(gap))))
        series.append((c, gap, norm / d, d))
    ys = np.concatenate([np.concatenate([g, n]) for _, g, n, _ in series])
    y_range = (float(ys.min()), float(ys.max()))
    if y_range[0] == y_range[1]:
        y_range = (y_range[0] - 1.0, y_range[1] + 1.0)
    x_range = (float(t.min()), float(t.max()))
    for j, (c, gap, scaled, d) in enumerate(series):
        color = COLORS[j % len(COLORS)]
        lines.append(_polyline(t, gap, x_range, y_range, color))
        lines.append(_polyline(t, scaled, x_range, y_range, color, dash=True))
        legend.append(f"class {c}: gap (solid), sensitivity norm / {d:.0e} (dashed)")
    text = [f'<text x="{PAD}" y="{18 + 14 * i}" font-size="11" font-family="sans-serif">{s}</text>'
            for i, s in enumerate(legend)]
    axis = (f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>'
            f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>'
            f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 12}" font-size="11" font-family="sans-serif">checkpoint</text>')
    body = "\n".join([axis] + lines + text)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">\n{body}\n</svg>\n')


def emit_plot(csv_path, svg_path, divisor=None):
    t, classes, cols = read_correlation_csv(csv_path)
    if t.size == 0:
        raise ValueError("malformed correlation CSV: no rows")
    svg = render_svg(t, classes, cols, divisor)
    with open(svg_path, "w", encoding="utf-8") as fh:
        fh.write(svg)
    return svg
