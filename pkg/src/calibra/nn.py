"""A tiny fully-connected network on a flat parameter vector.

Hidden layers use ReLU followed by a symmetric saturating linear unit
(clamp to [-1, 1]); the output layer is linear and scalar. Parameters live
in one flat vector so the quasi-Newton optimizer can work on them directly.
"""

from __future__ import annotations

import numpy as np

DEFAULT_HIDDEN = (50, 10)


def layer_sizes(input_dim: int, hidden=DEFAULT_HIDDEN):
    return (int(input_dim), *hidden, 1)


def n_params(sizes) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def unpack(theta, sizes):
    """Split the flat vector into ``[(W, b), ...]`` views (no copies)."""
    out = []
    k = 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        W = theta[k:k + a * b].reshape(a, b)
        k += a * b
        out.append((W, theta[k:k + b]))
        k += b
    return out


def init_params(sizes, rng: np.random.Generator, zero_last: bool = False) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    parts = []
    n_layers = len(sizes) - 1
    for j, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(a)
        if zero_last and j == n_layers - 1:
            parts += [np.zeros(a * b), np.zeros(b)]
        else:
            parts += [rng.uniform(-bound, bound, a * b), rng.uniform(-bound, bound, b)]
    return np.concatenate(parts)


def _activation(j, n_hidden, z):
    # First hidden layer ReLU, every later hidden layer clamps to [-1, 1].
    return np.maximum(z, 0.0) if j == 0 else np.clip(z, -1.0, 1.0)


def _activation_grad(j, z):
    return (z > 0.0).astype(float) if j == 0 else (np.abs(z) < 1.0).astype(float)


def forward(theta, sizes, X, keep=False):
    layers = unpack(theta, sizes)
    h = X
    cache = [X]
    pre = []
    n_hidden = len(layers) - 1
    for j, (W, b) in enumerate(layers):
        z = h @ W + b
        if j < n_hidden:
            pre.append(z)
            h = _activation(j, n_hidden, z)
            cache.append(h)
        else:
            h = z
    out = h[:, 0]
    if keep:
        return out, (cache, pre)
    return out


def backward(theta, sizes, state, dout):
    """Gradient of ``sum(dout * output)`` w.r.t. the flat parameters."""
    cache, pre = state
    layers = unpack(theta, sizes)
    grads = []
    delta = np.asarray(dout, dtype=float)[:, None]
    for j in range(len(layers) - 1, -1, -1):
        W, _ = layers[j]
        h_in = cache[j]
        grads.append((h_in.T @ delta, delta.sum(axis=0)))
        if j > 0:
            delta = (delta @ W.T) * _activation_grad(j - 1, pre[j - 1])
    grads.reverse()
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])
