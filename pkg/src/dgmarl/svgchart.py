"""Dependency-free deterministic SVG line charts."""

from __future__ import annotations

import math

from .errors import ConfigError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#17becf", "#7f7f7f")

_MARGIN = (70.0, 20.0, 40.0, 50.0)  # left, right, top, bottom


def _nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _decade_ticks(lo: float, hi: float) -> list[float]:
    ticks = []
    e = math.floor(math.log10(lo))
    while 10.0 ** e <= hi * 1.0000001:
        if 10.0 ** e >= lo * 0.9999999:
            ticks.append(10.0 ** e)
        e += 1
    return ticks or [lo, hi]


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def line_chart(series, title: str = "", x_label: str = "", y_label: str = "",
               log_x: bool = False, log_y: bool = False, width: int = 800,
               height: int = 480, footer: str | None = None) -> str:
    """Render labelled (xs, ys) series to an SVG document string.

    series: list of (label, xs, ys). Output is a pure function of the inputs.
    """
    if not series:
        raise ConfigError("line_chart needs at least one series")
    ml, mr, mt, mb = _MARGIN
    plot_w, plot_h = width - ml - mr, height - mt - mb
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if not xs_all:
        raise ConfigError("line_chart: series contain no points")
    for vals, flag, axis in ((xs_all, log_x, "x"), (ys_all, log_y, "y")):
        if flag and min(vals) <= 0:
            raise ConfigError(f"log-{axis} axis requires positive values")

    def span(vals, log):
        lo, hi = min(vals), max(vals)
        if log:
            return lo, hi if hi > lo else lo * 10.0
        if hi == lo:
            return lo - 1.0, hi + 1.0
        return lo, hi

    x_lo, x_hi = span(xs_all, log_x)
    y_lo, y_hi = span(ys_all, log_y)

    def sx(x: float) -> float:
        if log_x:
            f = (math.log10(x) - math.log10(x_lo)) / (math.log10(x_hi) - math.log10(x_lo))
        else:
            f = (x - x_lo) / (x_hi - x_lo)
        return ml + f * plot_w

    def sy(y: float) -> float:
        if log_y:
            f = (math.log10(y) - math.log10(y_lo)) / (math.log10(y_hi) - math.log10(y_lo))
        else:
            f = (y - y_lo) / (y_hi - y_lo)
        return mt + (1.0 - f) * plot_h

    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="16">{_esc(title)}</text>')
    # axes box
    out.append(f'<rect x="{ml:.1f}" y="{mt:.1f}" width="{plot_w:.1f}" height="{plot_h:.1f}" '
               f'fill="none" stroke="#333" stroke-width="1"/>')
    x_ticks = _decade_ticks(x_lo, x_hi) if log_x else _nice_ticks(x_lo, x_hi)
    y_ticks = _decade_ticks(y_lo, y_hi) if log_y else _nice_ticks(y_lo, y_hi)
    for t in x_ticks:
        px = sx(t)
        out.append(f'<line x1="{px:.2f}" y1="{mt + plot_h:.2f}" x2="{px:.2f}" '
                   f'y2="{mt + plot_h + 5:.2f}" stroke="#333"/>')
        out.append(f'<text x="{px:.2f}" y="{mt + plot_h + 18:.2f}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{_fmt(t)}</text>')
    for t in y_ticks:
        py = sy(t)
        out.append(f'<line x1="{ml - 5:.2f}" y1="{py:.2f}" x2="{ml:.2f}" y2="{py:.2f}" '
                   f'stroke="#333"/>')
        out.append(f'<text x="{ml - 8:.2f}" y="{py + 4:.2f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{_fmt(t)}</text>')
    if x_label:
        out.append(f'<text x="{ml + plot_w / 2:.1f}" y="{height - 10}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="13">{_esc(x_label)}</text>')
    if y_label:
        out.append(f'<text x="18" y="{mt + plot_h / 2:.1f}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="13" '
                   f'transform="rotate(-90 18 {mt + plot_h / 2:.1f})">{_esc(y_label)}</text>')
    for idx, (label, xs, ys) in enumerate(series):
        color = PALETTE[idx % len(PALETTE)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="1.8"/>')
        if len(xs) == 1:
            out.append(f'<circle cx="{sx(xs[0]):.2f}" cy="{sy(ys[0]):.2f}" r="3.5" '
                       f'fill="{color}"/>')
        ly = mt + 16 + 16 * idx
        lx = ml + plot_w - 150
        out.append(f'<line x1="{lx:.1f}" y1="{ly - 4:.1f}" x2="{lx + 22:.1f}" '
                   f'y2="{ly - 4:.1f}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 28:.1f}" y="{ly:.1f}" font-family="sans-serif" '
                   f'font-size="12">{_esc(label)}</text>')
    out.append("</svg>")
    if footer:
        out.append(f"<!-- {_esc(footer)} -->")
    return "\n".join(out) + "\n"


def _esc(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace("--", "- -"))


def moving_average(values, window: int):
    """Trailing-window mean (window clipped at the series start)."""
    out = []
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        chunk = values[lo:i + 1]
        out.append(sum(chunk) / len(chunk))
    return out
