"""Per-batch LEt-SNE losses, their gradients, and the mini-batch trainer.

The batch loss is

    (1/m) trace(Y^T L Y) + lam * (1/m) * sum_i KL_i

where ``KL_i`` is ``KL(p~_i || q_i)`` in visualization mode and
``KL(q_i || p~_i)`` in the labelled and region modes.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import affinity, graph, network
from .affinity import PROB_FLOOR

logger = logging.getLogger(__name__)

MODES = ("visualization", "labelled", "region")
MIN_BATCH = 4

_MODE_DEFAULTS = {
    "visualization": {"cf": 5.0},
    "labelled": {"cf": 200.0},
    "region": {"cf": 200.0},
}


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    mode: str = "visualization"
    perplexity: float = 30.0
    cf: float | None = None
    lam: float = 1.0
    k: int = 10
    batch_size: int = 256
    epochs: int = 50
    seed: int = 0
    dims: int = 2
    hidden: tuple[int, ...] = (256, 64)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.cf is None:
            self.cf = _MODE_DEFAULTS[self.mode]["cf"]
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.cf < 1:
            raise ConfigError("cf must be >= 1")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if self.batch_size < MIN_BATCH:
            raise ConfigError(f"batch_size must be >= {MIN_BATCH}")
        if self.dims < 1:
            raise ConfigError("dims must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.perplexity <= 1:
            raise ConfigError("perplexity must be > 1")
        if self.k < 1:
            raise ConfigError("k must be >= 1")

    @property
    def kl_direction(self):
        return "forward" if self.mode == "visualization" else "reverse"

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class EmbeddingResult:
    y: np.ndarray
    history: np.ndarray  # (epochs, 3): laplacian, kl, total
    config: TrainConfig
    extras: dict = field(default_factory=dict)


def kl_forward(p, q):
    """``sum_i sum_{j != i} p log(p / q)`` over floored, renormalised rows."""
    pf, qf = affinity.floor_rows(p), affinity.floor_rows(q)
    off = ~np.eye(pf.shape[0], dtype=bool)
    return float(np.sum(pf[off] * np.log(pf[off] / qf[off])))


def kl_reverse(q, p):
    """``sum_i sum_{j != i} q log(q / p)``; steep where ``p`` sits at the floor."""
    return kl_forward(q, p)


def _kl_terms(p_tilde, y, direction):
    """Summed KL over anchors and ``dKL/dY`` through the Student-t rows."""
    w = affinity.student_t_kernel(y)
    q = w / w.sum(axis=1, keepdims=True)
    pf = affinity.floor_rows(p_tilde)
    qf = affinity.floor_rows(q)
    off = ~np.eye(q.shape[0], dtype=bool)
    if direction == "forward":
        value = float(np.sum(pf[off] * np.log(pf[off] / qf[off])))
        # dKL_i / d(d_ij) with d_ij = |y_i - y_j|^2
        g = (pf - q) * w
    else:
        logs = np.where(off, np.log(np.where(off, qf, 1.0) / np.where(off, pf, 1.0)), 0.0)
        per_anchor = np.sum(q * logs, axis=1, keepdims=True)
        value = float(np.sum(qf[off] * np.log(qf[off] / pf[off])))
        g = -w * q * (logs - per_anchor)
    np.fill_diagonal(g, 0.0)
    s = g + g.T
    grad = 2.0 * (s.sum(axis=1)[:, None] * y - s @ y)
    return value, grad


def embedding_loss_and_grad(y, p_tilde, adj_dense, lam, direction):
    """Batch loss for a fixed embedding and its gradient w.r.t. ``y``.

    Returns ``(laplacian_term, kl_term, dL/dY)``, both terms already divided
    by the batch size and the KL term already multiplied by ``lam``.
    """
    y = np.asarray(y, dtype=np.float64)
    m = y.shape[0]
    a = np.asarray(adj_dense, dtype=np.float64)
    lap_y = a.sum(axis=1)[:, None] * y - a @ y
    lap = float(np.sum(y * lap_y)) / m
    grad = (2.0 / m) * lap_y
    kl = 0.0
    if lam > 0:
        kl_sum, kl_grad = _kl_terms(p_tilde, y, direction)
        kl = lam * kl_sum / m
        grad = grad + (lam / m) * kl_grad
    return lap, kl, grad


def batch_affinities(x, adj_batch, config):
    p = affinity.conditional_p(x, config.perplexity)
    return affinity.compress(p, adj_batch, config.cf)


def batch_loss_and_grad(model, x, adj_batch, config, p_tilde=None, update_stats=True):
    """Forward, loss, and backward for one mini-batch.

    Returns ``(components, dL/dY, grads)`` where ``components`` holds the
    ``laplacian``, ``kl`` and ``total`` loss terms.
    """
    if p_tilde is None:
        p_tilde = batch_affinities(x, adj_batch, config)
    y, cache = network.forward(model, x, mode="train", update_stats=update_stats)
    dense = adj_batch.to_dense() if hasattr(adj_batch, "to_dense") else adj_batch
    lap, kl, grad_y = embedding_loss_and_grad(
        y, p_tilde, dense, config.lam, config.kl_direction
    )
    total = lap + kl
    if not np.isfinite(total):
        raise network.TrainingError(f"non-finite loss (laplacian={lap}, kl={kl})")
    grads = network.backward(model, cache, grad_y)
    return {"laplacian": lap, "kl": kl, "total": total}, grad_y, grads


def build_adjacency(data, config, regions=None):
    """Adjacency and the index set trained on, according to ``config.mode``."""
    if config.mode == "visualization":
        if config.k >= data.n:
            raise ConfigError(f"k={config.k} must be below the sample count {data.n}")
        return graph.knn_adjacency(data.values, config.k), np.arange(data.n)
    if config.mode == "labelled":
        if data.labels is None:
            raise ConfigError("labelled mode needs labels")
        idx = np.flatnonzero(data.labelled_mask)
        if idx.size < MIN_BATCH:
            raise ConfigError(
                f"labelled mode needs at least {MIN_BATCH} labelled samples, found {idx.size}"
            )
        full = np.full(data.n, -1, dtype=np.int64)
        full[idx] = data.labels[idx]
        # unlabelled nodes get unique negative groups so they never connect
        full[full < 0] = -1 - np.arange(data.n - idx.size)
        return graph.SparseAdjacency(data.n, "label", groups=full), idx
    if regions is None:
        raise ConfigError("region mode needs a region map")
    return graph.region_adjacency(regions, n=data.n), np.arange(data.n)


def train(data, config, regions=None, adjacency=None, hook=None):
    """Fit the encoder with Adam over seeded mini-batches.

    ``hook``, if given, is called after every batch with a dict describing
    the step (epoch, batch, adjacency mode, KL direction, loss terms).
    Returns ``(model, EmbeddingResult)``; the embedding is the inference-mode
    projection of every sample, including unlabelled ones.
    """
    if adjacency is None:
        adjacency, train_idx = build_adjacency(data, config, regions)
    else:
        train_idx = (np.flatnonzero(data.labelled_mask)
                     if config.mode == "labelled" else np.arange(data.n))
    model = network.init_model(data.d, config.hidden, config.dims, seed=config.seed)
    opt = network.AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                            eps=config.adam_eps)
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        order = train_idx[rng.permutation(train_idx.size)]
        sums = np.zeros(3)
        n_batches = 0
        for b, start in enumerate(range(0, order.size, config.batch_size)):
            batch = order[start:start + config.batch_size]
            if batch.size < MIN_BATCH:
                continue
            sub = graph.restrict_to_batch(adjacency, batch)
            try:
                parts, _, grads = batch_loss_and_grad(model, data.values[batch], sub, config)
                network.adam_step(model, grads, opt)
            except network.TrainingError as exc:
                raise network.TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
            sums += (parts["laplacian"], parts["kl"], parts["total"])
            n_batches += 1
            if hook is not None:
                hook({
                    "epoch": epoch,
                    "batch": b,
                    "adjacency_mode": sub.mode,
                    "kl_direction": config.kl_direction,
                    "size": batch.size,
                    **parts,
                })
        history.append(sums / max(n_batches, 1))
        logger.debug("epoch %d: %s", epoch, history[-1])
    y = network.project(model, data.values)
    hist = np.array(history).reshape(-1, 3)
    return model, EmbeddingResult(y=y, history=hist, config=config)
