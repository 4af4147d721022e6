"""Neighbourhood graphs: top-k, class-label and region adjacency."""

from __future__ import annotations

from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

MODES = ("knn", "label", "region")


class GraphError(ValueError):
    pass


class SparseAdjacency:
    """Symmetric 0/1 adjacency with an empty diagonal.

    Label and region graphs are unions of cliques; they are stored as a
    per-node group id and only materialised to a sparse matrix on demand.
    """

    def __init__(self, n, mode, matrix=None, groups=None):
        if mode not in MODES:
            raise GraphError(f"unknown adjacency mode {mode!r}")
        if (matrix is None) == (groups is None):
            raise GraphError("give exactly one of matrix or groups")
        self.n = int(n)
        self.mode = mode
        if groups is not None:
            groups = np.asarray(groups, dtype=np.int64)
            if groups.shape != (self.n,):
                raise GraphError("groups length must equal n")
        self.groups = groups
        if matrix is not None:
            matrix = sparse.csr_array(matrix, dtype=np.int8)
            matrix.setdiag(0)
            matrix.eliminate_zeros()
            matrix.sort_indices()
            self.__dict__["matrix"] = matrix

    @cached_property
    def matrix(self):
        g = self.groups
        order = np.argsort(g, kind="stable")
        rows, cols = [], []
        bounds = np.flatnonzero(np.diff(g[order])) + 1
        for members in np.split(order, bounds):
            if members.size < 2:
                continue
            r, c = np.meshgrid(members, members, indexing="ij")
            keep = r != c
            rows.append(r[keep])
            cols.append(c[keep])
        if rows:
            rows, cols = np.concatenate(rows), np.concatenate(cols)
        else:
            rows = cols = np.empty(0, dtype=np.int64)
        m = sparse.csr_array(
            (np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(self.n, self.n)
        )
        m.sort_indices()
        return m

    @property
    def edges(self):
        """Undirected edges as an ``(E, 2)`` array of ``i < j`` pairs, sorted."""
        coo = sparse.triu(self.matrix, k=1).tocoo()
        pairs = np.column_stack([coo.row, coo.col]).astype(np.int64)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return pairs[order]

    @property
    def n_edges(self):
        return self.matrix.nnz // 2

    def degree(self):
        return np.asarray(self.matrix.sum(axis=1)).ravel().astype(np.float64)

    def to_dense(self):
        if self.groups is not None:
            a = (self.groups[:, None] == self.groups[None, :]).astype(np.float64)
            np.fill_diagonal(a, 0.0)
            return a
        return self.matrix.toarray().astype(np.float64)

    def laplacian(self):
        """Dense ``D - A``."""
        a = self.to_dense()
        return np.diag(a.sum(axis=1)) - a

    def __repr__(self):
        return f"SparseAdjacency(n={self.n}, mode={self.mode!r}, edges={self.n_edges})"


def from_edges(n, edges, mode="knn"):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise GraphError("edge index out of range")
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    m = sparse.csr_array((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n, n))
    m.data[:] = 1
    return SparseAdjacency(n, mode, matrix=m)


def knn_indices(x, k, chunk=256):
    """Exact k nearest neighbours (self excluded), ties to the lower index."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = cdist(x[start:stop], x, "sqeuclidean")
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        # stable sort keeps the lower index first among equal distances
        out[start:stop] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def knn_adjacency(data, k):
    """Top-``k`` Euclidean neighbour graph, symmetrised by union."""
    x = getattr(data, "values", data)
    n = x.shape[0]
    if not 1 <= k < n:
        raise GraphError(f"k must satisfy 1 <= k < n={n}, got {k}")
    nbrs = knn_indices(x, k)
    rows = np.repeat(np.arange(n), k)
    cols = nbrs.ravel()
    m = sparse.csr_array(
        (np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n, n)
    )
    m = m + m.T
    m.data[:] = 1
    return SparseAdjacency(n, "knn", matrix=m)


def label_adjacency(labels):
    labels = np.asarray(labels, dtype=np.int64)
    if (labels < 0).any():
        raise GraphError(
            "label adjacency needs every sample labelled; drop unlabelled samples first"
        )
    return SparseAdjacency(labels.size, "label", groups=labels)


def region_adjacency(regions, n=None):
    ids = np.asarray(getattr(regions, "ids", regions), dtype=np.int64).ravel()
    if n is not None and ids.size != n:
        raise GraphError(f"region map covers {ids.size} pixels, data has {n} samples")
    return SparseAdjacency(ids.size, "region", groups=ids)


def restrict_to_batch(adj, batch):
    """Induced subgraph on ``batch``, nodes renumbered in batch order."""
    batch = np.asarray(batch, dtype=np.int64)
    if np.unique(batch).size != batch.size:
        raise GraphError("batch indices must be unique")
    if batch.size and (batch.min() < 0 or batch.max() >= adj.n):
        raise GraphError("batch index out of range")
    if adj.groups is not None:
        return SparseAdjacency(batch.size, adj.mode, groups=adj.groups[batch])
    sub = adj.matrix[batch][:, batch]
    return SparseAdjacency(batch.size, adj.mode, matrix=sub)


def laplacian_quadratic(adj, y):
    """``trace(Y^T L Y)``, i.e. the sum over undirected edges of ``|y_i - y_j|^2``."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != adj.n:
        raise GraphError(f"embedding has {y.shape[0]} rows, adjacency has {adj.n} nodes")
    if adj.groups is not None:
        # per clique: size * sum|y|^2 - |sum y|^2
        total = 0.0
        g = adj.groups
        for gid in np.unique(g):
            ym = y[g == gid]
            total += ym.shape[0] * np.sum(ym * ym) - np.sum(ym.sum(axis=0) ** 2)
        return max(float(total), 0.0)
    e = adj.edges
    if e.size == 0:
        return 0.0
    diff = y[e[:, 0]] - y[e[:, 1]]
    return float(np.sum(diff * diff))


def save_edges(adj, path):
    with Path(path).open("w") as fh:
        for i, j in adj.edges:
            fh.write(f"{i},{j}\n")


def load_edges(path, n, mode="knn"):
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            i, j = (int(v) for v in line.split(","))
        except ValueError:
            raise GraphError(f"{path}:{lineno}: expected 'i,j'") from None
        if i == j:
            raise GraphError(f"{path}:{lineno}: self loop")
        pairs.append((i, j))
    return from_edges(n, pairs, mode)
