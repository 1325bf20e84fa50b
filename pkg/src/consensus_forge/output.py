"""Trace files: CSV columns and a self-contained SVG error chart."""

from __future__ import annotations

import csv
import math
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["csv_header", "write_csv", "write_svg", "render_svg"]

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]
_MAX_POINTS = 1500


def csv_header(followers):
    return (["t"] + [f"err_{i}" for i in followers] + [f"relerr_{i}" for i in followers])


def write_csv(trace, path):
    """One row per sample: time, absolute then relative error per follower."""
    errs, rels = trace.errors, trace.rel_errors
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(csv_header(trace.followers))
        for k, t in enumerate(trace.times):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in errs[k]] + [repr(float(v)) for v in rels[k]])


def _decades(lo, hi):
    a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
    if a == b:
        b += 1
    return a, b


def render_svg(trace, title="State errors ||x_i - x_0||", width=800, height=480):
    """SVG text: one polyline per follower error, log-scaled vertical axis."""
    left, right, top, bottom = 80, 130, 40, 50
    pw, ph = width - left - right, height - top - bottom
    times = np.asarray(trace.times, float)
    errs = np.asarray(trace.errors, float)
    t_hi = float(times[-1]) if times.size and times[-1] > 0 else 1.0

    positive = errs[errs > 0] if errs.size else np.zeros(0)
    if positive.size:
        lo_exp, hi_exp = _decades(float(positive.min()), float(positive.max()))
    else:
        lo_exp, hi_exp = -3, 1
    floor = 10.0 ** lo_exp

    def sx(t):
        return left + pw * t / t_hi

    def sy(v):
        e = math.log10(max(v, floor))
        return top + ph * (hi_exp - e) / (hi_exp - lo_exp)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + pw / 2}" y="{top - 15}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    step = max(1, (hi_exp - lo_exp) // 10)
    for e in range(lo_exp, hi_exp + 1, step):
        y = sy(10.0 ** e)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">1e{e}</text>')
    for k in range(6):
        t = t_hi * k / 5
        x = sx(t)
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 18}" text-anchor="middle">{t:g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">t</text>')

    stride = max(1, int(math.ceil(times.size / _MAX_POINTS)))
    idx = np.arange(0, times.size, stride)
    if times.size and idx[-1] != times.size - 1:
        idx = np.append(idx, times.size - 1)
    for c, follower in enumerate(trace.followers):
        color = _PALETTE[c % len(_PALETTE)]
        if times.size:
            pts = " ".join(f"{sx(times[k]):.2f},{sy(errs[k, c]):.2f}" for k in idx)
            out.append(f'<polyline data-follower="{follower}" fill="none" stroke="{color}" '
                       f'stroke-width="1.5" points="{pts}"/>')
        ly = top + 10 + 18 * c
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 38}" y="{ly + 4}">follower {follower}</text>')
    if getattr(trace, "diverged", False):
        out.append(f'<text x="{left + 8}" y="{top + 16}" fill="#d62728">diverged: run stopped at guard</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(trace, path, **kw):
    with open(path, "w") as fh:
        fh.write(render_svg(trace, **kw))
