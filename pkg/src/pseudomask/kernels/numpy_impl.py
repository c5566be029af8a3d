"""Pure-numpy reference implementations of the hot kernels."""

from __future__ import annotations

import numpy as np

# Half of the 8-neighborhood; each undirected edge is visited exactly once.
EDGE_DIRS = ((0, 1), (1, -1), (1, 0), (1, 1))


def _logsumexp(m: np.ndarray, axis: int) -> np.ndarray:
    mx = m.max(axis=axis)
    return mx + np.log(np.exp(m - np.expand_dims(mx, axis)).sum(axis=axis))


def sinkhorn_log(a: np.ndarray, log_r: np.ndarray, log_h: np.ndarray,
                 max_iter: int, tol: float):
    """Log-domain Sinkhorn scaling of the kernel exp(a) to the marginals.

    ``a`` is the (L, N) score matrix already divided by epsilon. Alternates
    log-sum-exp row and column updates until the max marginal violation of
    the implied plan drops to ``tol`` or ``max_iter`` is reached.

    Returns (log_q, n_iter, violation).
    """
    length, n = a.shape
    f = np.zeros(length)
    g = np.zeros(n)
    r = np.exp(log_r)
    h = np.exp(log_h)
    viol = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        f = log_r - _logsumexp(a + g[None, :], axis=1)
        g = log_h - _logsumexp(a + f[:, None], axis=0)
        q = np.exp(a + f[:, None] + g[None, :])
        viol = max(
            float(np.abs(q.sum(axis=1) - r).max()),
            float(np.abs(q.sum(axis=0) - h).max()),
        )
        if viol <= tol:
            break
    return a + f[:, None] + g[None, :], it, viol


def pairwise_edge_loss(pred: np.ndarray, sel: np.ndarray):
    """Sum of -log(p_i*p_j + (1-p_i)*(1-p_j)) over selected neighbor edges.

    ``sel[h, w, d]`` marks an edge from (h, w) toward EDGE_DIRS[d]; the
    caller guarantees marked neighbors are in bounds. Returns
    (loss_sum, edge_count, grad) with grad accumulated at both endpoints.
    """
    height, width = pred.shape
    grad = np.zeros_like(pred)
    loss = 0.0
    count = 0
    for d, (dy, dx) in enumerate(EDGE_DIRS):
        h0, h1 = 0, height - dy
        w0, w1 = (0, width - dx) if dx >= 0 else (-dx, width)
        src = (slice(h0, h1), slice(w0, w1))
        dst = (slice(h0 + dy, h1 + dy), slice(w0 + dx, w1 + dx))
        m = sel[src[0], src[1], d]
        if not m.any():
            continue
        p0 = pred[src]
        p1 = pred[dst]
        agree = p0 * p1 + (1.0 - p0) * (1.0 - p1)
        contrib = np.where(m, -np.log(agree), 0.0)
        loss += float(contrib.sum())
        count += int(m.sum())
        g0 = np.where(m, -(2.0 * p1 - 1.0) / agree, 0.0)
        g1 = np.where(m, -(2.0 * p0 - 1.0) / agree, 0.0)
        grad[src] += g0
        grad[dst] += g1
    return loss, count, grad
