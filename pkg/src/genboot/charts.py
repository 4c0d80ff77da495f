"""Minimal deterministic SVG charts: line series, quantile bands, bar groups.

The emitter writes every coordinate with fixed formatting and no timestamps
or random ids, so identical inputs produce byte-identical files. That keeps
chart output inside the reproducibility guarantees of the experiment runner.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["Series", "Band", "BarGroup", "ChartError", "emit_chart"]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class ChartError(ValueError):
    pass


@dataclass
class Series:
    name: str
    x: np.ndarray
    y: np.ndarray
    color: str | None = None
    dashed: bool = False
    markers: bool = False


@dataclass
class Band:
    """Shaded ribbon between two quantile curves (lo <= hi everywhere)."""

    name: str
    x: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    color: str | None = None


@dataclass
class BarGroup:
    name: str
    x: np.ndarray
    height: np.ndarray
    color: str | None = None


def _fmt(v: float) -> str:
    return format(float(v), ".4f")


def _nice_ticks(lo: float, hi: float, target: int = 6):
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ChartError("non-finite axis range")
    if lo == hi:
        lo, hi = lo - 1.0, hi + 1.0
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1.0, 2.0, 2.5, 5.0, 10.0) if m * mag >= raw)
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + step * 1e-9:
        ticks.append(0.0 if abs(t) < step * 1e-9 else t)
        t += step
    return ticks


def _check_series(s) -> None:
    x = np.asarray(s.x, dtype=np.float64)
    if isinstance(s, Band):
        lo = np.asarray(s.lo, dtype=np.float64)
        hi = np.asarray(s.hi, dtype=np.float64)
        if not (len(x) == len(lo) == len(hi)):
            raise ChartError(f"band '{s.name}': x/lo/hi lengths differ")
        if len(x) == 0:
            raise ChartError(f"band '{s.name}' is empty")
        bad = np.nonzero(lo > hi)[0]
        if bad.size:
            raise ChartError(
                f"band '{s.name}': lower quantile exceeds upper at index {int(bad[0])}"
            )
    else:
        y = np.asarray(s.height if isinstance(s, BarGroup) else s.y, dtype=np.float64)
        if len(x) != len(y):
            raise ChartError(f"series '{s.name}': x and y lengths differ")
        if len(x) == 0:
            raise ChartError(f"series '{s.name}' is empty")


def emit_chart(
    file,
    title: str,
    xlabel: str,
    ylabel: str,
    series: list | None = None,
    bands: list | None = None,
    bars: list | None = None,
    width: int = 800,
    height: int = 480,
    meta: dict | None = None,
    ylim: tuple | None = None,
) -> None:
    """Write a self-contained SVG chart; raises ChartError on bad input."""
    series = list(series or [])
    bands = list(bands or [])
    bars = list(bars or [])
    if not (series or bands or bars):
        raise ChartError("nothing to plot: no series, bands, or bars")
    for s in series + bands + bars:
        _check_series(s)

    xs = np.concatenate([np.asarray(s.x, dtype=np.float64) for s in series + bands + bars])
    ys = []
    for s in series:
        ys.append(np.asarray(s.y, dtype=np.float64))
    for b in bands:
        ys.append(np.asarray(b.lo, dtype=np.float64))
        ys.append(np.asarray(b.hi, dtype=np.float64))
    for g in bars:
        ys.append(np.asarray(g.height, dtype=np.float64))
        ys.append(np.zeros(1))
    yall = np.concatenate(ys)
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(yall))):
        raise ChartError("non-finite data values")

    x0, x1 = float(xs.min()), float(xs.max())
    if ylim is not None:
        y0, y1 = float(ylim[0]), float(ylim[1])
    else:
        y0, y1 = float(yall.min()), float(yall.max())
    if x0 == x1:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y0 == y1:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    ml, mr, mt, mb = 62, 16, 34, 48
    pw, ph = width - ml - mr, height - mt - mb

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + (y1 - v) / (y1 - y0) * ph

    out = []
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">'
    )
    if meta is not None:
        out.append(f"<!-- provenance: {escape(json.dumps(meta, sort_keys=True))} -->")
    out.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    out.append(
        f'<text x="{width // 2}" y="20" text-anchor="middle" font-size="15">{escape(title)}</text>'
    )

    # axes, ticks, grid
    for t in _nice_ticks(x0, x1):
        if not x0 <= t <= x1:
            continue
        xp = _fmt(px(t))
        out.append(
            f'<line x1="{xp}" y1="{mt}" x2="{xp}" y2="{mt + ph}" stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{xp}" y="{mt + ph + 16}" text-anchor="middle" font-size="11">{format(t, ".6g")}</text>'
        )
    for t in _nice_ticks(y0, y1):
        if not y0 <= t <= y1:
            continue
        yp = _fmt(py(t))
        out.append(
            f'<line x1="{ml}" y1="{yp}" x2="{ml + pw}" y2="{yp}" stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{ml - 6}" y="{yp}" text-anchor="end" dominant-baseline="middle" '
            f'font-size="11">{format(t, ".6g")}</text>'
        )
    out.append(
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333333"/>'
    )
    out.append(
        f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{escape(ylabel)}</text>'
    )

    legend = []
    color_i = 0

    def next_color(given):
        nonlocal color_i
        if given:
            return given
        c = PALETTE[color_i % len(PALETTE)]
        color_i += 1
        return c

    for b in bands:
        c = next_color(b.color)
        x = np.asarray(b.x, dtype=np.float64)
        pts = [f"{_fmt(px(xv))},{_fmt(py(yv))}" for xv, yv in zip(x, b.hi)]
        pts += [f"{_fmt(px(xv))},{_fmt(py(yv))}" for xv, yv in zip(x[::-1], np.asarray(b.lo)[::-1])]
        out.append(
            f'<polygon points="{" ".join(pts)}" fill="{c}" fill-opacity="0.18" stroke="none"/>'
        )
        legend.append((b.name, c, "band"))

    for g in bars:
        c = next_color(g.color)
        x = np.asarray(g.x, dtype=np.float64)
        bw = 0.8 * pw / max(len(x), 1) / max(len(bars), 1)
        for k, (xv, hv) in enumerate(zip(x, g.height)):
            left = px(xv) - bw * len(bars) / 2 + bw * bars.index(g)
            top = py(max(hv, 0.0))
            h = abs(py(hv) - py(0.0))
            out.append(
                f'<rect x="{_fmt(left)}" y="{_fmt(top)}" width="{_fmt(bw)}" '
                f'height="{_fmt(h)}" fill="{c}" fill-opacity="0.8"/>'
            )
        legend.append((g.name, c, "bar"))

    for s in series:
        c = next_color(s.color)
        pts = " ".join(
            f"{_fmt(px(xv))},{_fmt(py(yv))}" for xv, yv in zip(s.x, s.y)
        )
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.6"{dash}/>'
        )
        if s.markers:
            for xv, yv in zip(s.x, s.y):
                out.append(
                    f'<circle cx="{_fmt(px(xv))}" cy="{_fmt(py(yv))}" r="2.6" fill="{c}"/>'
                )
        legend.append((s.name, c, "dashed" if s.dashed else "line"))

    lx, ly = ml + pw - 150, mt + 8
    for i, (name, c, kind) in enumerate(legend):
        yy = ly + 16 * i
        if kind == "band":
            out.append(
                f'<rect x="{lx}" y="{yy}" width="14" height="9" fill="{c}" fill-opacity="0.25"/>'
            )
        elif kind == "bar":
            out.append(f'<rect x="{lx}" y="{yy}" width="14" height="9" fill="{c}"/>')
        else:
            dash = ' stroke-dasharray="6,4"' if kind == "dashed" else ""
            out.append(
                f'<line x1="{lx}" y1="{yy + 5}" x2="{lx + 14}" y2="{yy + 5}" '
                f'stroke="{c}" stroke-width="1.6"{dash}/>'
            )
        out.append(
            f'<text x="{lx + 19}" y="{yy + 9}" font-size="11">{escape(name)}</text>'
        )

    out.append("</svg>")
    with open(file, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
