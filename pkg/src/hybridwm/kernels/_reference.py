"""Pure numpy implementations of the numeric kernels.

Used when the compiled extension is unavailable or disabled with
``HYBRIDWM_PURE_PYTHON=1``. Signatures match ``_ckernels`` exactly.
"""

import numpy as np


def mlp_forward(x, w1, b1, w2, b2, w3, b3):
    """Two hidden ReLU layers; returns the (n, k) linear outputs."""
    h = np.maximum(x @ w1 + b1, 0.0)
    h = np.maximum(h @ w2 + b2, 0.0)
    return h @ w3 + b3


def pinball(q, y, tau):
    """Per-row mean pinball loss over the quantile grid and its gradient in ``q``.

    The gradient is of the per-row mean, not of the batch mean.
    """
    e = y[:, None] - q
    loss = np.maximum(tau * e, (tau - 1.0) * e).mean(axis=1)
    grad = np.where(e > 0, -tau, 1.0 - tau) / q.shape[1]
    return loss, grad


def quantile_sample(q, tau, u, lo, hi):
    """Invert the piecewise-linear CDF through sorted knots ``(tau, q[i])``.

    Flat outside the outer knots, then clipped to ``[lo, hi]``.
    """
    q = np.sort(q, axis=1)
    out = np.empty(q.shape[0])
    for i in range(q.shape[0]):
        out[i] = np.interp(u[i], tau, q[i])
    return np.clip(out, lo, hi)


def reachable(adj, src, dst):
    """True when ``dst`` can be reached from ``src`` along edges of ``adj``."""
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [src]
    while stack:
        v = stack.pop()
        if v == dst:
            return True
        if seen[v]:
            continue
        seen[v] = True
        stack.extend(int(w) for w in np.flatnonzero(adj[v]) if not seen[w])
    return False
