"""Dependency-free SVG line plots (deterministic output, no timestamps)."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22"]
TRUTH_COLOR = "#d62728"


def _thin(x: np.ndarray, y: np.ndarray, max_points: int):
    if len(x) <= max_points:
        return x, y
    idx = np.linspace(0, len(x) - 1, max_points).round().astype(int)
    return x[idx], y[idx]


def line_plot(series, path, title: str = "", xlabel: str = "", ylabel: str = "",
              width: int = 800, height: int = 360, max_points: int = 2000) -> str:
    """Write an SVG with one ``<path class="series">`` per ``(label, x, y, color)``."""
    pad_l, pad_r, pad_t, pad_b = 60, 140, 30, 40
    xs = [np.asarray(s[1], float) for s in series]
    ys = [np.asarray(s[2], float) for s in series]
    xmin = min(float(x.min()) for x in xs)
    xmax = max(float(x.max()) for x in xs)
    ymin = min(float(y.min()) for y in ys)
    ymax = max(float(y.max()) for y in ys)
    if xmax == xmin:
        xmax = xmin + 1
    if ymax == ymin:
        ymin, ymax = ymin - 0.5, ymax + 0.5
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(v):
        return pad_l + (v - xmin) / (xmax - xmin) * pw

    def py(v):
        return pad_t + (1 - (v - ymin) / (ymax - ymin)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<text x="{pad_l + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
           f'<text x="14" y="{pad_t + ph / 2:.1f}" font-size="12" transform="rotate(-90 14 {pad_t + ph / 2:.1f})" '
           f'text-anchor="middle">{escape(ylabel)}</text>']
    for v in (ymin, ymax):
        out.append(f'<text x="{pad_l - 4}" y="{py(v) + 4:.1f}" text-anchor="end" font-size="10">{v:.3g}</text>')
    for v in (xmin, xmax):
        out.append(f'<text x="{px(v):.1f}" y="{pad_t + ph + 14}" text-anchor="middle" font-size="10">{v:.6g}</text>')
    for i, ((label, _, _, color), x, y) in enumerate(zip(series, xs, ys)):
        x, y = _thin(x, y, max_points)
        d = "M" + " L".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        out.append(f'<path class="series" data-label="{escape(label)}" d="{d}" fill="none" '
                   f'stroke="{color}" stroke-width="1"/>')
        ly = pad_t + 14 + 16 * i
        out.append(f'<line x1="{width - pad_r + 10}" y1="{ly - 4}" x2="{width - pad_r + 30}" y2="{ly - 4}" '
                   f'stroke="{color}"/>')
        out.append(f'<text x="{width - pad_r + 34}" y="{ly}" font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    Path(path).write_text(text)
    return text


def overlay_plot(s_values: np.ndarray, time_offset: int, truth, path, max_points: int = 2000) -> str:
    """Class probabilities against the true envelope."""
    K, T = s_values.shape
    t = np.arange(T) + time_offset
    series = [(f"class {k}", t, s_values[k], COLORS[k % len(COLORS)]) for k in range(K)]
    if truth is not None:
        truth = np.asarray(truth, float)
        series.append(("truth", t, truth[time_offset:time_offset + T], TRUTH_COLOR))
    return line_plot(series, path, "Coarse-grained classes vs envelope", "t", "probability", max_points=max_points)


def training_curve(log, path) -> str:
    ep = np.array([r.epoch for r in log.records], float)
    series = [("train Q", ep, np.array([r.train_q for r in log.records]), COLORS[0])]
    if log.records and log.records[0].test_q is not None:
        series.append(("test Q", ep, np.array([r.test_q for r in log.records]), COLORS[1]))
    return line_plot(series, path, "Training curve", "epoch", "Q")
