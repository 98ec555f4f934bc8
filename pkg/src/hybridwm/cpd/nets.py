"""Small two-hidden-layer networks trained with Adam."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import kernels

TAU = np.round(np.arange(0.05, 1.0, 0.1), 10)


@dataclass(frozen=True)
class FitConfig:
    hidden: int = 32
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0

    def to_json(self) -> dict:
        return dict(self.__dict__)


Params = list  # [w1, b1, w2, b2, w3, b3]


def init_params(d_in: int, d_out: int, hidden: int, rng: np.random.Generator) -> Params:
    """He-normal weights, zero biases."""
    return [
        rng.normal(0.0, np.sqrt(2.0 / d_in), (d_in, hidden)), np.zeros(hidden),
        rng.normal(0.0, np.sqrt(2.0 / hidden), (hidden, hidden)), np.zeros(hidden),
        rng.normal(0.0, np.sqrt(1.0 / hidden), (hidden, d_out)), np.zeros(d_out),
    ]


def forward(params: Params, x: np.ndarray) -> np.ndarray:
    return kernels.mlp_forward(np.ascontiguousarray(x, dtype=np.float64), *params)


def _forward_cache(params: Params, x: np.ndarray):
    w1, b1, w2, b2, w3, b3 = params
    z1 = x @ w1 + b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ w2 + b2
    h2 = np.maximum(z2, 0.0)
    return h2 @ w3 + b3, (x, z1, h1, z2, h2)


def _backward(params: Params, cache, gout: np.ndarray) -> Params:
    w1, b1, w2, b2, w3, b3 = params
    x, z1, h1, z2, h2 = cache
    gw3 = h2.T @ gout
    gb3 = gout.sum(axis=0)
    g2 = (gout @ w3.T) * (z2 > 0)
    gw2 = h1.T @ g2
    gb2 = g2.sum(axis=0)
    g1 = (g2 @ w2.T) * (z1 > 0)
    gw1 = x.T @ g1
    gb1 = g1.sum(axis=0)
    return [gw1, gb1, gw2, gb2, gw3, gb3]


# losses: (outputs, targets) -> (mean loss, d loss / d outputs)

def pinball_loss(out: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch mean of the per-row mean pinball loss over ``TAU``."""
    loss, grad = kernels.pinball(np.ascontiguousarray(out), np.ascontiguousarray(y, dtype=np.float64), TAU)
    n = out.shape[0]
    return float(loss.mean()), grad / n


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss(out: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of integer labels ``y`` under softmax(``out``)."""
    n = out.shape[0]
    z = out - out.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    idx = y.astype(int)
    loss = -logp[np.arange(n), idx].mean()
    g = np.exp(logp)
    g[np.arange(n), idx] -= 1.0
    return float(loss), g / n


def loss_and_grads(params: Params, x: np.ndarray, y: np.ndarray, loss_fn: Callable) -> tuple[float, Params]:
    out, cache = _forward_cache(params, x)
    loss, gout = loss_fn(out, y)
    return loss, _backward(params, cache, gout)


def _views(flat: np.ndarray, shapes) -> Params:
    out, i = [], 0
    for shp in shapes:
        n = int(np.prod(shp))
        out.append(flat[i:i + n].reshape(shp))
        i += n
    return out


def train(x: np.ndarray, y: np.ndarray, d_out: int, loss_fn: Callable, cfg: FitConfig,
          seed: int) -> tuple[Params, list[float]]:
    """Mini-batch Adam; returns parameters and the per-epoch mean training loss."""
    rng = np.random.default_rng(seed)
    init = init_params(x.shape[1], d_out, cfg.hidden, rng)
    shapes = [p.shape for p in init]
    theta = np.concatenate([p.ravel() for p in init])
    params = _views(theta, shapes)
    grad = np.empty_like(theta)
    gviews = _views(grad, shapes)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    n = x.shape[0]
    t = 0
    curve = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(params, x[idx], y[idx], loss_fn)
            for gv, g in zip(gviews, grads):
                gv[...] = g
            total += loss * len(idx)
            t += 1
            lr_t = cfg.lr * np.sqrt(1 - b2**t) / (1 - b1**t)
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad * grad
            theta -= lr_t * m / (np.sqrt(v) + eps)
        curve.append(total / n)
    return [p.copy() for p in params], curve
