"""Superpixel partitions of image grids.

A :class:`RegionMap` is a partition of an ``h x w`` grid into 4-connected
regions labelled ``0..R-1``. :func:`slic` produces one, :func:`merge_regions`
coarsens it, and region maps can also be round-tripped through CSV so that
segmentations made elsewhere can be imported.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

_FOUR = ndimage.generate_binary_structure(2, 1)


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RegionMap:
    ids: np.ndarray  # (h, w) int64

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.ndim != 2:
            raise SegmentationError("region ids must form a 2-D grid")
        object.__setattr__(self, "ids", ids)

    @property
    def height(self):
        return self.ids.shape[0]

    @property
    def width(self):
        return self.ids.shape[1]

    @property
    def n_regions(self):
        return int(self.ids.max()) + 1 if self.ids.size else 0

    def flat(self):
        return self.ids.ravel()


def relabel(ids):
    """Renumber ids to ``0..R-1`` preserving their sorted order."""
    _, inv = np.unique(ids, return_inverse=True)
    return inv.reshape(np.shape(ids)).astype(np.int64)


def relabel_by_appearance(ids):
    """Renumber ids to ``0..R-1`` in row-major order of first appearance."""
    flat = np.asarray(ids).ravel()
    _, first = np.unique(flat, return_index=True)
    order = np.argsort(first, kind="stable")
    lookup = {int(flat[first[o]]): i for i, o in enumerate(order)}
    return np.array([lookup[int(v)] for v in flat], dtype=np.int64).reshape(np.shape(ids))


def disconnected_regions(ids):
    """Region ids whose pixels do not form a single 4-connected component."""
    bad = []
    for rid in np.unique(ids):
        _, count = ndimage.label(ids == rid, structure=_FOUR)
        if count > 1:
            bad.append(int(rid))
    return bad


def check_partition(regions):
    """Raise unless ids are contiguous, nonempty and each region 4-connected."""
    ids = regions.ids
    present = np.unique(ids)
    if present.size == 0 or present[0] != 0 or present[-1] != present.size - 1:
        raise SegmentationError("region ids are not contiguous from 0")
    bad = disconnected_regions(ids)
    if bad:
        raise SegmentationError(f"region {bad[0]} is not 4-connected")


def _adjacent_pairs(ids):
    pairs = set()
    for a, b in ((ids[:, :-1], ids[:, 1:]), (ids[:-1, :], ids[1:, :])):
        diff = a != b
        for u, v in zip(a[diff].ravel(), b[diff].ravel()):
            pairs.add((int(min(u, v)), int(max(u, v))))
    return pairs


def enforce_connectivity(ids):
    """Split every label into 4-connected components and absorb orphans.

    For each original label the largest component keeps it; the others are
    orphans, merged (smallest first) into their largest adjacent component.
    """
    ids = np.asarray(ids)
    comp = np.full(ids.shape, -1, dtype=np.int64)
    owner_label = []
    next_id = 0
    for lab in np.unique(ids):
        lab_comp, count = ndimage.label(ids == lab, structure=_FOUR)
        for c in range(1, count + 1):
            comp[lab_comp == c] = next_id
            owner_label.append(int(lab))
            next_id += 1
    sizes = np.bincount(comp.ravel(), minlength=next_id)
    keep = {}
    for cid, lab in enumerate(owner_label):
        if lab not in keep or sizes[cid] > sizes[keep[lab]]:
            keep[lab] = cid
    orphans = [c for c in range(next_id) if keep[owner_label[c]] != c]
    if not orphans:
        return relabel_by_appearance(ids)

    parent = np.arange(next_id)

    def root(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    neighbours = {c: set() for c in range(next_id)}
    for u, v in _adjacent_pairs(comp):
        neighbours[u].add(v)
        neighbours[v].add(u)
    size = sizes.astype(np.int64).copy()
    for c in sorted(orphans, key=lambda c: (sizes[c], c)):
        rc = root(c)
        cands = {root(v) for v in neighbours[c]} - {rc}
        if not cands:
            continue
        target = max(sorted(cands), key=lambda r: size[r])
        parent[rc] = target
        size[target] += size[rc]
    merged = np.array([root(c) for c in range(next_id)])[comp]
    return relabel_by_appearance(merged)


def rescale_channels(image):
    """Min-max scale each channel of an ``(h, w, c)`` image to [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    lo = img.min(axis=(0, 1))
    span = img.max(axis=(0, 1)) - lo
    span = np.where(span > 0, span, 1.0)
    return (img - lo) / span


def _seed_grid(h, w, target):
    ny = max(1, min(h, round(math.sqrt(target * h / w))))
    nx = max(1, min(w, round(target / ny)))
    ys = (np.arange(ny) + 0.5) * h / ny - 0.5
    xs = (np.arange(nx) + 0.5) * w / nx - 0.5
    cy, cx = np.meshgrid(ys, xs, indexing="ij")
    return cy.ravel(), cx.ravel()


def slic(image, target_regions=256, compactness=10.0, iters=10):
    """SLIC superpixels: k-means in joint colour/position space.

    Seeds start on a regular grid with spacing ``S = sqrt(h*w/target)``.
    Each pixel joins the centre within ``S`` rows and columns that minimises
    ``d_color + (compactness / S) * d_xy``; a final pass makes every region
    4-connected. ``image`` is ``(h, w)`` or ``(h, w, c)`` with channels
    already scaled to [0, 1].
    """
    if target_regions < 1:
        raise SegmentationError("target_regions must be >= 1")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    if target_regions > h * w:
        raise SegmentationError(f"target_regions={target_regions} exceeds {h * w} pixels")
    step = math.sqrt(h * w / target_regions)
    cy, cx = _seed_grid(h, w, target_regions)
    py, px = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    py, px = py.ravel(), px.ravel()
    colors = img.reshape(-1, c)
    ccol = colors[np.round(cy).astype(int) * w + np.round(cx).astype(int)].copy()
    weight = compactness / step

    assign = np.zeros(h * w, dtype=np.int64)
    for _ in range(max(int(iters), 1)):
        dy = py[:, None] - cy[None, :]
        dx = px[:, None] - cx[None, :]
        d_xy = np.sqrt(dy * dy + dx * dx)
        d_col = np.sqrt(((colors[:, None, :] - ccol[None, :, :]) ** 2).sum(axis=2))
        dist = d_col + weight * d_xy
        # search window: centres within S along each axis
        inside = (np.abs(dy) <= step) & (np.abs(dx) <= step)
        windowed = np.where(inside, dist, np.inf)
        stranded = ~inside.any(axis=1)
        windowed[stranded] = dist[stranded]
        new = np.argmin(windowed, axis=1)
        counts = np.bincount(new, minlength=cy.size)
        live = counts > 0
        for arr, src in ((cy, py), (cx, px)):
            s = np.bincount(new, weights=src, minlength=cy.size)
            arr[live] = s[live] / counts[live]
        for ch in range(c):
            s = np.bincount(new, weights=colors[:, ch], minlength=cy.size)
            ccol[live, ch] = s[live] / counts[live]
        if np.array_equal(new, assign):
            break
        assign = new
    return RegionMap(enforce_connectivity(assign.reshape(h, w)))


def region_means(regions, image):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    flat = img.reshape(-1, img.shape[2])
    ids = regions.flat()
    counts = np.bincount(ids, minlength=regions.n_regions).astype(np.float64)
    sums = np.stack([np.bincount(ids, weights=flat[:, ch], minlength=regions.n_regions)
                     for ch in range(flat.shape[1])], axis=1)
    return sums / counts[:, None], counts


def merge_regions(regions, image, threshold):
    """Greedily fuse the closest adjacent pair while its mean distance < threshold."""
    if threshold < 0:
        raise SegmentationError("threshold must be >= 0")
    means, counts = region_means(regions, image)
    means = {i: means[i] for i in range(len(counts))}
    counts = {i: counts[i] for i in range(len(counts))}
    pairs = _adjacent_pairs(regions.ids)
    nbrs = {i: set() for i in means}
    for u, v in pairs:
        nbrs[u].add(v)
        nbrs[v].add(u)
    parent = {i: i for i in means}
    while True:
        best = None
        for u in sorted(nbrs):
            for v in sorted(nbrs[u]):
                if v <= u:
                    continue
                dist = float(np.linalg.norm(means[u] - means[v]))
                if best is None or dist < best[0]:
                    best = (dist, u, v)
        if best is None or not best[0] < threshold:
            break
        _, u, v = best
        total = counts[u] + counts[v]
        means[u] = (means[u] * counts[u] + means[v] * counts[v]) / total
        counts[u] = total
        for x in nbrs.pop(v):
            nbrs[x].discard(v)
            if x != u:
                nbrs[x].add(u)
                nbrs[u].add(x)
        nbrs[u].discard(u)
        del means[v], counts[v]
        parent[v] = u

    def root(i):
        while parent[i] != i:
            i = parent[i]
        return i

    lookup = np.array([root(i) for i in range(len(parent))])
    return RegionMap(relabel_by_appearance(lookup[regions.ids]))


def save_region_map(regions, path):
    with Path(path).open("w", newline="") as fh:
        for row in regions.ids:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def load_region_map(path):
    """Read a CSV grid of integer region ids.

    Non-contiguous ids are renumbered (sorted order kept); a region whose
    pixels are not 4-connected is rejected.
    """
    rows = []
    with Path(path).open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([int(v) for v in row])
            except ValueError:
                raise SegmentationError(f"{path}:{lineno}: non-integer region id") from None
    if not rows:
        raise SegmentationError(f"{path}: empty region map")
    if len({len(r) for r in rows}) != 1:
        raise SegmentationError(f"{path}: ragged rows")
    ids = np.array(rows, dtype=np.int64)
    bad = disconnected_regions(ids)
    if bad:
        raise SegmentationError(f"{path}: region {bad[0]} is not 4-connected")
    return RegionMap(relabel(ids))
