"""Self-contained SVG line plots."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def _fmt(v: float) -> str:
    return repr(float(v))


def line_plot(series: dict, path, title: str = "", xlabel: str = "x",
              ylabel: str = "y", width: int = 720, height: int = 440) -> Path:
    """One ``<polyline>`` per series. Each polyline carries its raw data in
    ``data-x`` / ``data-y`` attributes so values survive the pixel mapping."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pts = [p for s in series.values() for p in s]
    left, right, top, bottom = 70, 190, 40, 50
    pw, ph = width - left - right, height - top - bottom
    if pts:
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts if p[1] == p[1]]
        x0, x1 = min(xs), max(xs)
        y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="14">'
           f'{escape(title)}</text>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
           f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle" '
           f'font-size="12">{escape(xlabel)}</text>',
           f'<text x="16" y="{top + ph / 2}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 16 {top + ph / 2})">{escape(ylabel)}</text>']
    for i in range(5):
        yv = y0 + (y1 - y0) * i / 4
        xv = x0 + (x1 - x0) * i / 4
        out.append(f'<text x="{left - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end" '
                   f'font-size="10">{yv:.3g}</text>')
        out.append(f'<text x="{sx(xv):.1f}" y="{top + ph + 16}" text-anchor="middle" '
                   f'font-size="10">{xv:.3g}</text>')
    for i, (name, data) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.3f},{sy(y):.3f}" for x, y in data)
        out.append(
            f'<polyline class="series" data-series="{escape(name, {chr(34): "&quot;"})}" '
            f'data-x="{" ".join(_fmt(x) for x, _ in data)}" '
            f'data-y="{" ".join(_fmt(y) for _, y in data)}" points="{coords}" '
            f'fill="none" stroke="{color}" stroke-width="2"/>')
        ly = top + 14 * i + 6
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly + 4}" font-size="10">'
                   f'{escape(name)}</text>')
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return path
