"""Numba-compiled twins of the numpy kernels (same contracts, explicit loops)."""

from __future__ import annotations

import numpy as np
from numba import njit

# Mirrors numpy_impl.EDGE_DIRS; kept inline so the jitted code sees constants.
_DY = (0, 1, 1, 1)
_DX = (1, -1, 0, 1)


@njit(cache=True)
def _lse_rows(m):
    out = np.empty(m.shape[0])
    for i in range(m.shape[0]):
        mx = m[i, 0]
        for j in range(1, m.shape[1]):
            if m[i, j] > mx:
                mx = m[i, j]
        s = 0.0
        for j in range(m.shape[1]):
            s += np.exp(m[i, j] - mx)
        out[i] = mx + np.log(s)
    return out


@njit(cache=True)
def sinkhorn_log(a, log_r, log_h, max_iter, tol):
    length, n = a.shape
    f = np.zeros(length)
    g = np.zeros(n)
    r = np.exp(log_r)
    h = np.exp(log_h)
    viol = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        # row update: f = log_r - LSE_j(a + g)
        for i in range(length):
            mx = a[i, 0] + g[0]
            for j in range(1, n):
                v = a[i, j] + g[j]
                if v > mx:
                    mx = v
            s = 0.0
            for j in range(n):
                s += np.exp(a[i, j] + g[j] - mx)
            f[i] = log_r[i] - (mx + np.log(s))
        # column update: g = log_h - LSE_i(a + f)
        for j in range(n):
            mx = a[0, j] + f[0]
            for i in range(1, length):
                v = a[i, j] + f[i]
                if v > mx:
                    mx = v
            s = 0.0
            for i in range(length):
                s += np.exp(a[i, j] + f[i] - mx)
            g[j] = log_h[j] - (mx + np.log(s))
        # marginal violation of the implied plan
        viol = 0.0
        for j in range(n):
            cs = 0.0
            for i in range(length):
                cs += np.exp(a[i, j] + f[i] + g[j])
            d = abs(cs - h[j])
            if d > viol:
                viol = d
        for i in range(length):
            rs = 0.0
            for j in range(n):
                rs += np.exp(a[i, j] + f[i] + g[j])
            d = abs(rs - r[i])
            if d > viol:
                viol = d
        if viol <= tol:
            break
    log_q = np.empty_like(a)
    for i in range(length):
        for j in range(n):
            log_q[i, j] = a[i, j] + f[i] + g[j]
    return log_q, it, viol


@njit(cache=True)
def pairwise_edge_loss(pred, sel):
    height, width = pred.shape
    grad = np.zeros_like(pred)
    loss = 0.0
    count = 0
    for d in range(4):
        dy = _DY[d]
        dx = _DX[d]
        for h in range(height):
            hn = h + dy
            if hn < 0 or hn >= height:
                continue
            for w in range(width):
                wn = w + dx
                if wn < 0 or wn >= width:
                    continue
                if not sel[h, w, d]:
                    continue
                p0 = pred[h, w]
                p1 = pred[hn, wn]
                agree = p0 * p1 + (1.0 - p0) * (1.0 - p1)
                loss += -np.log(agree)
                count += 1
                grad[h, w] += -(2.0 * p1 - 1.0) / agree
                grad[hn, wn] += -(2.0 * p0 - 1.0) / agree
    return loss, count, grad
