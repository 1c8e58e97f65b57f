"""Tiny dependency-free SVG writers (branch fans, convergence plots)."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

_W, _H, _PAD = 480, 320, 48
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b")


def _scale(values, lo_px, hi_px, log=False):
    v = np.log10(values) if log else np.asarray(values, float)
    lo, hi = float(np.min(v)), float(np.max(v))
    if hi - lo < 1e-300:
        lo, hi = lo - 0.5, hi + 0.5
    return lo_px + (v - lo) / (hi - lo) * (hi_px - lo_px), (lo, hi)


def _frame(title, xlabel, ylabel, meta):
    head = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}">']
    for k, v in (meta or {}).items():
        head.append(f"<!-- {escape(str(k))}={escape(str(v))} -->")
    head += [f'<rect x="{_PAD}" y="{_PAD / 2}" width="{_W - 1.5 * _PAD}" '
             f'height="{_H - 1.5 * _PAD}" fill="none" stroke="#444"/>',
             f'<text x="{_W / 2}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>',
             f'<text x="{_W / 2}" y="{_H - 8}" text-anchor="middle" font-size="11">'
             f'{escape(xlabel)}</text>',
             f'<text x="12" y="{_H / 2}" font-size="11" transform="rotate(-90 12 {_H / 2})" '
             f'text-anchor="middle">{escape(ylabel)}</text>']
    return head


def _polyline(xs, ys, color, marker=True):
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    out = [f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>']
    if marker:
        out += [f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{color}"/>' for x, y in zip(xs, ys)]
    return out


def branch_fan_svg(t, lam, title="eigenvalue branches", meta=None) -> str:
    """lambda_k(t) polylines; ``lam`` has one column per branch."""
    t = np.asarray(t, float)
    lam = np.atleast_2d(np.asarray(lam, float))
    if lam.shape[0] != len(t):
        lam = lam.T
    x, (t0, t1) = _scale(t, _PAD, _W - _PAD / 2)
    y, (l0, l1) = _scale(lam.ravel(), _H - _PAD, _PAD / 2)
    y = y.reshape(lam.shape)
    out = _frame(title, "t", "lambda", meta)
    for k in range(lam.shape[1]):
        out += _polyline(x, y[:, k], _COLORS[k % len(_COLORS)])
    out += [f'<text x="{_PAD}" y="{_H - _PAD + 14}" font-size="10">{t0:.3g}</text>',
            f'<text x="{_W - _PAD}" y="{_H - _PAD + 14}" font-size="10">{t1:.3g}</text>',
            f'<text x="4" y="{_H - _PAD}" font-size="10">{l0:.6g}</text>',
            f'<text x="4" y="{_PAD / 2 + 10}" font-size="10">{l1:.6g}</text>',
            "</svg>"]
    return "\n".join(out) + "\n"


def convergence_svg(h, errors, labels=None, title="convergence", meta=None) -> str:
    """log-log error curves; ``errors`` has one column per series."""
    h = np.asarray(h, float)
    err = np.atleast_2d(np.asarray(errors, float))
    if err.shape[0] != len(h):
        err = err.T
    err = np.maximum(err, 1e-300)
    x, _ = _scale(h, _PAD, _W - _PAD / 2, log=True)
    y, (e0, e1) = _scale(err.ravel(), _H - _PAD, _PAD / 2, log=True)
    y = y.reshape(err.shape)
    out = _frame(title, "h (log)", "error (log)", meta)
    for k in range(err.shape[1]):
        color = _COLORS[k % len(_COLORS)]
        out += _polyline(x, y[:, k], color)
        if labels:
            out.append(f'<text x="{_W - 1.5 * _PAD}" y="{_PAD + 12 * k}" font-size="10" '
                       f'fill="{color}">{escape(str(labels[k]))}</text>')
    out += [f'<text x="4" y="{_H - _PAD}" font-size="10">1e{e0:.1f}</text>',
            f'<text x="4" y="{_PAD / 2 + 10}" font-size="10">1e{e1:.1f}</text>', "</svg>"]
    return "\n".join(out) + "\n"
