"""CSV and minimal SVG writers.  Files are written only after all rows are computed."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
        lines.append(",".join(fmt(v) for v in row))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _scale(lo, hi, size, pad=20):
    span = hi - lo if hi > lo else 1.0
    return lambda v: pad + (v - lo) / span * (size - 2 * pad)


def svg_scatter(path: Path, panels: Sequence[tuple[str, np.ndarray]], size: int = 240) -> Path:
    """One square panel per ``(title, points)``; points are (n, 2)."""
    allp = np.concatenate([p for _, p in panels]) if panels else np.zeros((1, 2))
    lo = float(np.min(allp)) if allp.size else 0.0
    hi = float(np.max(allp)) if allp.size else 1.0
    sx = _scale(lo, hi, size)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size * len(panels)}" height="{size + 20}">'
    ]
    for i, (title, pts) in enumerate(panels):
        ox = i * size
        parts.append(f'<g transform="translate({ox},20)">')
        parts.append(f'<rect x="0" y="0" width="{size}" height="{size}" fill="none" stroke="#999"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{size - sx(y):.2f}" r="0.8" fill="{_PALETTE[0]}"/>')
        parts.append("</g>")
        parts.append(f'<text x="{ox + 6}" y="14" font-size="11">{title}</text>')
    parts.append("</svg>")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts) + "\n")
    return path


def svg_lines(path: Path, x: Sequence[float], series: dict[str, Sequence[float]], width=360, height=240) -> Path:
    xs = np.asarray(x, dtype=float)
    ys = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    finite = ys[np.isfinite(ys)]
    ylo, yhi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    fx = _scale(float(xs.min()), float(xs.max()), width)
    fy = _scale(ylo, yhi, height)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    parts.append(f'<rect x="0" y="0" width="{width}" height="{height}" fill="none" stroke="#999"/>')
    for i, (name, vals) in enumerate(series.items()):
        colour = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(
            f"{fx(a):.2f},{height - fy(b):.2f}" for a, b in zip(xs, vals) if math.isfinite(b)
        )
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{colour}"/>')
        parts.append(f'<text x="8" y="{14 + 12 * i}" font-size="11" fill="{colour}">{name}</text>')
    parts.append("</svg>")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts) + "\n")
    return path
