"""Minimal static SVG line plots."""
from __future__ import annotations

import math
from html import escape
from typing import Sequence


def line_svg(ys: Sequence[float], title: str = "", width: int = 480, height: int = 240) -> str:
    pad = 36
    finite = [y for y in ys if math.isfinite(y)]
    lo, hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if hi == lo:
        hi = lo + 1.0
    n = max(len(ys) - 1, 1)

    def xy(i: int, y: float) -> str:
        x = pad + (width - 2 * pad) * i / n
        v = height - pad - (height - 2 * pad) * (y - lo) / (hi - lo)
        return f"{x:.2f},{v:.2f}"

    pts = " ".join(xy(i, y) for i, y in enumerate(ys) if math.isfinite(y))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<rect width="100%" height="100%" fill="white"/>'
        f'<text x="{pad}" y="20" font-size="12">{escape(title)}</text>'
        f'<text x="4" y="{pad}" font-size="10">{hi:.3g}</text>'
        f'<text x="4" y="{height - pad}" font-size="10">{lo:.3g}</text>'
        f'<polyline fill="none" stroke="black" stroke-width="1" points="{pts}"/>'
        "</svg>\n"
    )
