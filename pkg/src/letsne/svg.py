"""Minimal deterministic SVG output for scatter plots and region maps."""

from __future__ import annotations

import numpy as np

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939",
)
MARGIN = 0.05


def viewport_map(points, width, height, margin=MARGIN):
    """Linear map of the bounding box onto the canvas minus ``margin`` per side.

    The y axis is flipped so larger values are drawn higher. A degenerate
    axis (zero extent) maps to the canvas centre.
    """
    pts = np.asarray(points, dtype=np.float64)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = hi - lo
    size = np.array([width, height], dtype=np.float64)
    inner = size * (1.0 - 2.0 * margin)
    frac = np.where(span > 0, (pts - lo) / np.where(span > 0, span, 1.0), 0.5)
    out = margin * size + frac * inner
    out[:, 1] = height - out[:, 1]
    return out


def _ramp(values):
    v = np.asarray(values, dtype=np.float64)
    span = v.max() - v.min()
    t = (v - v.min()) / span if span > 0 else np.full(v.shape, 0.5)
    r = np.round(255 * t).astype(int)
    b = np.round(255 * (1 - t)).astype(int)
    return [f"#{ri:02x}40{bi:02x}" for ri, bi in zip(r, b)]


def scatter_svg(points, colors=None, continuous=False, width=600, height=600, radius=2.5):
    """One ``<circle>`` per row of a 2-column ``points`` array."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("nothing to plot")
    if pts.shape[1] == 1:
        pts = np.column_stack([pts[:, 0], np.zeros(pts.shape[0])])
    xy = viewport_map(pts[:, :2], width, height)
    if colors is None:
        fills = [PALETTE[0]] * len(xy)
    elif continuous:
        fills = _ramp(colors)
    else:
        fills = [PALETTE[int(c) % len(PALETTE)] if c >= 0 else "#cccccc" for c in colors]
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for (x, y), fill in zip(xy, fills):
        lines.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="{radius}" fill="{fill}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def regions_svg(ids, cell=8):
    """Each region drawn as one flat-coloured path made of its pixel squares."""
    ids = np.asarray(ids)
    h, w = ids.shape
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * cell}" height="{h * cell}" '
        f'viewBox="0 0 {w} {h}" shape-rendering="crispEdges">'
    ]
    for rid in np.unique(ids):
        rows, cols = np.nonzero(ids == rid)
        d = "".join(f"M{c} {r}h1v1h-1z" for r, c in zip(rows, cols))
        lines.append(f'<path d="{d}" fill="{PALETTE[int(rid) % len(PALETTE)]}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
