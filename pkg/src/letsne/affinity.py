"""Conditional neighbour probabilities in input and embedding space.

All rows are conditional distributions: row ``i`` holds ``p_{j|i}`` (or
``q_{j|i}``) over ``j``, with a zero diagonal. Rows are plain ``(m, m)``
arrays; no symmetrisation into joint probabilities is performed.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.spatial.distance import pdist, squareform

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
SIGMA_BOUNDS = (1e-20, 1e20)
PERPLEXITY_TOL = 1e-5
MAX_SEARCH_STEPS = 100


class AffinityError(ValueError):
    pass


def squared_distances(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return squareform(pdist(x, "sqeuclidean"))


def _gaussian_rows(d2, sigma):
    """Normalised Gaussian kernel rows and their perplexities (base 2).

    ``d2`` is ``(r, k)`` with the anchor already removed; ``sigma`` is ``(r,)``.
    """
    p, h, _ = _kernel_entropy(d2, 1.0 / (2.0 * sigma**2))
    return p, np.exp2(h / np.log(2.0))


def _kernel_entropy(d2, beta):
    """Rows ``exp(-beta d2)`` normalised, their entropy (nats) and ``dH/dlog(beta)``."""
    shifted = d2 - d2.min(axis=1, keepdims=True)
    logits = -shifted * beta[:, None]
    w = np.exp(logits)
    z = w.sum(axis=1, keepdims=True)
    p = w / z
    mean = np.sum(p * shifted, axis=1)
    h = np.log(z[:, 0]) + beta * mean
    var = np.sum(p * (shifted - mean[:, None]) ** 2, axis=1)
    return p, h, -(beta**2) * var


def _calibrate(d2, perplexity):
    """Vectorised per-row search for sigma. Returns (sigma, perp, converged).

    Works on the precision ``beta = 1 / (2 sigma^2)`` in log space: Newton
    steps on the entropy, falling back to bracket bisection (or doubling /
    halving while a bracket end is still missing) whenever Newton would
    leave the bracket.
    """
    r = d2.shape[0]
    target = np.log(perplexity)
    u_min = -np.log(2.0) - 2.0 * np.log(SIGMA_BOUNDS[1])
    u_max = -np.log(2.0) - 2.0 * np.log(SIGMA_BOUNDS[0])
    log_lo = np.full(r, u_min)
    log_hi = np.full(r, u_max)
    have_lo = np.zeros(r, dtype=bool)
    have_hi = np.zeros(r, dtype=bool)
    # start at the typical neighbour distance so few expansions are needed
    n_pos = np.maximum((d2 > 0).sum(axis=1), 1)
    scale = d2.sum(axis=1) / n_pos
    u = -np.log(2.0 * np.where(scale > 0, scale, 1.0))
    done = np.zeros(r, dtype=bool)
    perp = np.zeros(r)
    active = np.arange(r)
    for _ in range(MAX_SEARCH_STEPS):
        ua = u[active]
        _, h, slope = _kernel_entropy(d2[active], np.exp(ua))
        perp[active] = np.exp(h)
        ok = np.abs(perp[active] - perplexity) <= PERPLEXITY_TOL
        done[active[ok]] = True
        keep = ~ok
        active, ua, h, slope = active[keep], ua[keep], h[keep], slope[keep]
        if active.size == 0:
            break
        # entropy falls as beta grows
        too_flat = h > target
        log_lo[active] = np.where(too_flat, ua, log_lo[active])
        log_hi[active] = np.where(too_flat, log_hi[active], ua)
        have_lo[active] |= too_flat
        have_hi[active] |= ~too_flat
        lo, hi = log_lo[active], log_hi[active]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            newton = ua - (h - target) / slope
        fallback = np.where(
            have_lo[active] & have_hi[active],
            0.5 * (lo + hi),
            np.where(too_flat, ua + np.log(2.0), ua - np.log(2.0)),
        )
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        u[active] = np.clip(np.where(inside, newton, fallback), u_min, u_max)
    sigma = np.sqrt(0.5 * np.exp(-u))
    return sigma, perp, done


def calibrate_sigma(distances_sq, perplexity):
    """Bandwidth whose Gaussian neighbour distribution has the target perplexity.

    ``distances_sq`` excludes the anchor. Returns ``(sigma, converged)``; an
    unattainable target leaves ``sigma`` at the best bracket end reached.
    """
    d2 = np.asarray(distances_sq, dtype=np.float64).ravel()
    if d2.size < 1:
        raise AffinityError("need at least one neighbour distance")
    if not np.any(d2 > 0):
        raise AffinityError("all neighbour distances are zero; sigma is undefined")
    sigma, perp, ok = _calibrate(d2[None, :], float(perplexity))
    if not ok[0]:
        logger.warning(
            "perplexity %.6g unattainable with %d neighbours (reached %.6g)",
            perplexity, d2.size, perp[0],
        )
    return float(sigma[0]), bool(ok[0])


def _off_diagonal(a):
    m = a.shape[0]
    return a[~np.eye(m, dtype=bool)].reshape(m, m - 1)


def _with_diagonal(rows):
    m = rows.shape[0]
    out = np.zeros((m, m))
    out[~np.eye(m, dtype=bool)] = rows.ravel()
    return out


def conditional_p(x, perplexity, return_sigma=False):
    """Gaussian conditionals ``p_{j|i}`` with per-anchor calibrated bandwidth.

    Rows whose neighbours all coincide with the anchor are uniform. Targets
    at or above ``m - 1`` cannot be met exactly; those rows end up near
    uniform.
    """
    x = np.asarray(x, dtype=np.float64)
    m = x.shape[0]
    if m < 2:
        raise AffinityError("conditional_p needs at least 2 samples")
    d2 = _off_diagonal(squared_distances(x))
    sigma = np.full(m, np.inf)
    rows = np.full((m, m - 1), 1.0 / (m - 1))
    live = np.any(d2 > 0, axis=1)
    if m > 2 and live.any():
        s, _, ok = _calibrate(d2[live], float(perplexity))
        if not ok.all():
            logger.debug("%d/%d rows missed the perplexity target", (~ok).sum(), m)
        sigma[live] = s
        rows[live], _ = _gaussian_rows(d2[live], s)
    p = _with_diagonal(rows)
    return (p, sigma) if return_sigma else p


def compress(p, adj, cf):
    """Multiply neighbour entries by ``cf`` and renormalise each row.

    ``adj`` is a :class:`~letsne.graph.SparseAdjacency` or a dense 0/1 mask.
    ``cf == 1`` returns the input unchanged.
    """
    if cf < 1:
        raise AffinityError(f"compression factor must be >= 1, got {cf}")
    p = np.asarray(p, dtype=np.float64)
    mask = adj.to_dense() if hasattr(adj, "to_dense") else np.asarray(adj, dtype=np.float64)
    if mask.shape != p.shape:
        raise AffinityError(f"adjacency shape {mask.shape} does not match rows {p.shape}")
    if cf == 1:
        return p
    w = p * ((cf - 1.0) * mask + 1.0)
    return w / w.sum(axis=1, keepdims=True)


def student_t_kernel(y):
    """Unnormalised ``(1 + |y_i - y_j|^2)^-1`` with zero diagonal."""
    w = 1.0 / (1.0 + squared_distances(y))
    np.fill_diagonal(w, 0.0)
    return w


def conditional_q(y):
    """Heavy-tailed (Cauchy) conditionals ``q_{j|i}`` in embedding space."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] < 2:
        raise AffinityError("conditional_q needs at least 2 samples")
    w = student_t_kernel(y)
    return w / w.sum(axis=1, keepdims=True)


def floor_rows(p, floor=PROB_FLOOR):
    """Clamp off-diagonal entries to ``floor`` and renormalise rows."""
    p = np.asarray(p, dtype=np.float64)
    off = ~np.eye(p.shape[0], dtype=bool)
    out = np.where(off, np.maximum(p, floor), 0.0)
    return out / out.sum(axis=1, keepdims=True)


def row_perplexity(p):
    """``2**H`` of each row (diagonal ignored), entropy in bits."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(p), 0.0)
    return np.exp2(-terms.sum(axis=1))
