"""Run artifacts: native SVG line plots, run manifests, summaries."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__


def _nice_ticks(lo: float, hi: float, n: int = 5):
    if not math.isfinite(lo) or not math.isfinite(hi):
        return [0.0]
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * step:
        ticks.append(t)
        t += step
    return ticks or [lo]


def write_svg_lines(path: str, title: str, xlabel: str, ylabel: str, series,
                    width: int = 640, height: int = 420, log_y: bool = False) -> None:
    """Minimal dependency-free line plot.

    series: iterable of (label, xs, ys).
    """
    margin_l, margin_r, margin_t, margin_b = 70, 20, 40, 50
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b

    all_x = np.concatenate([np.asarray(xs, dtype=float) for _, xs, _ in series])
    all_y = np.concatenate([np.asarray(ys, dtype=float) for _, _, ys in series])
    finite_y = all_y[np.isfinite(all_y)]
    if log_y:
        finite_y = finite_y[finite_y > 0]
    if len(finite_y) == 0:
        finite_y = np.array([0.0, 1.0])
    x_lo, x_hi = float(all_x.min()), float(all_x.max())
    y_lo, y_hi = float(finite_y.min()), float(finite_y.max())
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + max(1e-12, abs(y_lo) * 1e-6)
    if log_y:
        y_lo, y_hi = math.log10(y_lo), math.log10(y_hi)

    def sx(x):
        return margin_l + plot_w * (x - x_lo) / (x_hi - x_lo)

    def sy(y):
        if log_y:
            y = math.log10(y) if y > 0 else y_lo
        return margin_t + plot_h * (1.0 - (y - y_lo) / (y_hi - y_lo))

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="24" text-anchor="middle" font-size="16" '
        f'font-family="sans-serif">{title}</text>',
    ]
    parts.append(
        f'<rect x="{margin_l}" y="{margin_t}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#444"/>'
    )
    for t in _nice_ticks(x_lo, x_hi):
        parts.append(
            f'<line x1="{sx(t):.1f}" y1="{margin_t + plot_h}" x2="{sx(t):.1f}" '
            f'y2="{margin_t + plot_h + 5}" stroke="#444"/>'
            f'<text x="{sx(t):.1f}" y="{margin_t + plot_h + 18}" text-anchor="middle" '
            f'font-size="10" font-family="sans-serif">{t:g}</text>'
        )
    y_ticks = _nice_ticks(y_lo, y_hi)
    for t in y_ticks:
        value = 10.0**t if log_y else t
        ypix = margin_t + plot_h * (1.0 - (t - y_lo) / (y_hi - y_lo))
        parts.append(
            f'<line x1="{margin_l - 5}" y1="{ypix:.1f}" x2="{margin_l}" y2="{ypix:.1f}" '
            f'stroke="#444"/>'
            f'<text x="{margin_l - 8}" y="{ypix + 3:.1f}" text-anchor="end" font-size="10" '
            f'font-family="sans-serif">{value:.4g}</text>'
        )
    parts.append(
        f'<text x="{margin_l + plot_w / 2}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12" font-family="sans-serif">{xlabel}</text>'
    )
    parts.append(
        f'<text x="18" y="{margin_t + plot_h / 2}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif" transform="rotate(-90 18 {margin_t + plot_h / 2})">'
        f"{ylabel}</text>"
    )
    for idx, (label, xs, ys) in enumerate(series):
        color = colors[idx % len(colors)]
        points = []
        for x, y in zip(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)):
            if not math.isfinite(y) or (log_y and y <= 0):
                continue
            points.append(f"{sx(x):.2f},{sy(y):.2f}")
        parts.append(
            f'<polyline points="{" ".join(points)}" fill="none" stroke="{color}" '
            'stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{margin_l + 8}" y="{margin_t + 16 + 14 * idx}" font-size="11" '
            f'font-family="sans-serif" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))


@dataclass
class RunManifest:
    """Provenance record written into every output directory."""

    config_path: str
    config_sha256: str
    mesh_sha256: str
    tool_version: str = __version__
    seed: int | None = None
    threads: int | None = None
    wall_clock: dict = field(default_factory=dict)

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "config_path": self.config_path,
                    "config_sha256": self.config_sha256,
                    "mesh_sha256": self.mesh_sha256,
                    "tool_version": self.tool_version,
                    "seed": self.seed,
                    "threads": self.threads,
                    "wall_clock_seconds": self.wall_clock,
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
