"""Minimal SVG line/scatter charts; enough for the diagnostic panels."""

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 420, 320
MARGIN = (50, 20, 30, 45)  # left, right, top, bottom
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd")


def _ticks(lo, hi, n=5):
    return np.linspace(lo, hi, n)


def _range(values):
    vals = np.concatenate([np.ravel(v) for v in values if np.size(v)]) if values else np.zeros(1)
    vals = vals[np.isfinite(vals)]
    if len(vals) == 0:
        return 0.0, 1.0
    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


class Chart:
    """Accumulates series, then renders with shared linear axes."""

    def __init__(self, title, xlabel, ylabel):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.series = []
        self.markers = []

    def line(self, x, y, color=None, label=None):
        self.series.append(("line", np.asarray(x, float), np.asarray(y, float), None, color, label))
        return self

    def scatter(self, x, y, color=None, label=None, radius=1.5):
        self.series.append(("scatter", np.asarray(x, float), np.asarray(y, float), radius, color, label))
        return self

    def band(self, x, lo, hi, color=None, label=None):
        self.series.append(("band", np.asarray(x, float), np.stack([lo, hi]).astype(float), None, color, label))
        return self

    def vline(self, x, color="#000000", label=None):
        self.markers.append((float(x), color, label))
        return self

    def render(self):
        xs = [s[1] for s in self.series] + [np.array([m[0] for m in self.markers])]
        ys = [s[2] for s in self.series]
        x0, x1 = _range(xs)
        y0, y1 = _range(ys)
        left, right, top, bottom = MARGIN
        pw, ph = WIDTH - left - right, HEIGHT - top - bottom

        def px(x):
            return left + (np.asarray(x) - x0) / (x1 - x0) * pw

        def py(y):
            return top + (1.0 - (np.asarray(y) - y0) / (y1 - y0)) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
               f'font-family="sans-serif" font-size="10">',
               f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
               f'<text x="{WIDTH / 2:.1f}" y="15" text-anchor="middle" font-size="12">{escape(self.title)}</text>',
               f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
        for t in _ticks(x0, x1):
            out.append(f'<text x="{px(t):.1f}" y="{top + ph + 12}" text-anchor="middle">{t:.3g}</text>')
        for t in _ticks(y0, y1):
            out.append(f'<text x="{left - 4}" y="{py(t) + 3:.1f}" text-anchor="end">{t:.3g}</text>')
        out.append(f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text x="12" y="{top + ph / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 12 {top + ph / 2:.1f})">{escape(self.ylabel)}</text>')
        legend = []
        for k, (kind, x, y, radius, color, label) in enumerate(self.series):
            color = color or COLORS[k % len(COLORS)]
            if kind == "line":
                pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px(x), py(y)) if np.isfinite(b))
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            elif kind == "band":
                upper = [f"{a:.2f},{b:.2f}" for a, b in zip(px(x), py(y[1]))]
                lower = [f"{a:.2f},{b:.2f}" for a, b in zip(px(x[::-1]), py(y[0][::-1]))]
                out.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.25" stroke="none"/>')
            else:
                for a, b in zip(px(x), py(y)):
                    if np.isfinite(a) and np.isfinite(b):
                        out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="{radius}" fill="{color}" fill-opacity="0.6"/>')
            if label:
                legend.append((label, color))
        for x, color, label in self.markers:
            out.append(f'<line x1="{px(x):.2f}" y1="{top}" x2="{px(x):.2f}" y2="{top + ph}" '
                       f'stroke="{color}" stroke-dasharray="4 3"/>')
            if label:
                legend.append((label, color))
        for k, (label, color) in enumerate(legend):
            y = top + 12 + 12 * k
            out.append(f'<rect x="{left + 6}" y="{y - 7}" width="8" height="8" fill="{color}"/>')
            out.append(f'<text x="{left + 18}" y="{y}">{escape(label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.render())
