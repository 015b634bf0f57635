"""Minimal deterministic SVG line plots and heatmaps.

Numbers are written with fixed precision so regenerated figures are
byte-identical.
"""

from __future__ import annotations

from html import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _f(v: float) -> str:
    return f"{v:.2f}"


def _tick(v: float) -> str:
    return f"{v:.3g}"


def line_plot(series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
              width: int = 480, height: int = 320, ylim=(0.0, 1.0)) -> str:
    """``series`` maps a legend label to ``(xs, ys)``; insertion order sets colours."""
    left, right, top, bottom = 56, 16, 28, 44
    pw, ph = width - left - right, height - top - bottom
    xs_all = [x for xs, _ in series.values() for x in xs]
    x0, x1 = (min(xs_all), max(xs_all)) if xs_all else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    y0, y1 = ylim

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for i in range(5):
        yv = y0 + (y1 - y0) * i / 4
        xv = x0 + (x1 - x0) * i / 4
        out.append(f'<line x1="{left}" y1="{_f(py(yv))}" x2="{left + pw}" y2="{_f(py(yv))}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 4}" y="{_f(py(yv) + 4)}" text-anchor="end">{_tick(yv)}</text>')
        out.append(f'<text x="{_f(px(xv))}" y="{top + ph + 14}" text-anchor="middle">{_tick(xv)}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, (xs, ys)) in enumerate(series.items()):
        colour = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_f(px(x))},{_f(py(y))}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 12 + 14 * i
        out.append(f'<line x1="{left + pw - 110}" y1="{ly}" x2="{left + pw - 94}" y2="{ly}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 90}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _shade(v: float) -> str:
    # white (0) to dark blue (1)
    v = min(max(v, 0.0), 1.0)
    r = round(255 - 222 * v)
    g = round(255 - 153 * v)
    b = round(255 - 75 * v)
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(matrix, row_labels, col_labels, title: str = "", cell: int = 56) -> str:
    """Rows are sources, columns targets; each cell is annotated with its value."""
    rows, cols = len(row_labels), len(col_labels)
    left, top = 130, 110
    width, height = left + cols * cell + 16, top + rows * cell + 16
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>']
    for j, name in enumerate(col_labels):
        cx = left + j * cell + cell / 2
        out.append(f'<text x="{cx:.1f}" y="{top - 6}" text-anchor="start" '
                   f'transform="rotate(-45 {cx:.1f} {top - 6})">{escape(str(name))}</text>')
    for i, name in enumerate(row_labels):
        out.append(f'<text x="{left - 6}" y="{top + i * cell + cell / 2 + 4:.1f}" '
                   f'text-anchor="end">{escape(str(name))}</text>')
        for j in range(cols):
            v = float(matrix[i][j])
            colour = "white" if v > 0.55 else "black"
            x, y = left + j * cell, top + i * cell
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{_shade(v)}" stroke="white"/>')
            out.append(f'<text x="{x + cell / 2:.1f}" y="{y + cell / 2 + 4:.1f}" text-anchor="middle" '
                       f'fill="{colour}">{v:.3f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
