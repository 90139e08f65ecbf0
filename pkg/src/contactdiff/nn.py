"""Layer helpers on top of :mod:`contactdiff.autodiff`.

Layers are plain functions reading weights out of a ParameterStore by name
prefix, so a model is just a store plus a forward function.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor


def init_linear(store: ParameterStore, name: str, fan_in: int, fan_out: int,
                rng: np.random.Generator, scale: float = 1.0) -> None:
    std = scale / math.sqrt(fan_in)
    store.add(f"{name}.w", rng.normal(0.0, std, size=(fan_in, fan_out)))
    store.add(f"{name}.b", np.zeros(fan_out))


def linear(store: ParameterStore, name: str, x) -> Tensor:
    return ad.matmul(x, store[f"{name}.w"]) + store[f"{name}.b"]


def init_layer_norm(store: ParameterStore, name: str, dim: int) -> None:
    store.add(f"{name}.g", np.ones(dim))
    store.add(f"{name}.b", np.zeros(dim))


def layer_norm(store: ParameterStore, name: str, x) -> Tensor:
    return ad.layer_norm(x) * store[f"{name}.g"] + store[f"{name}.b"]


def init_mlp_block(store: ParameterStore, name: str, dim: int, hidden: int,
                   rng: np.random.Generator) -> None:
    init_layer_norm(store, f"{name}.ln", dim)
    init_linear(store, f"{name}.fc1", dim, hidden, rng)
    init_linear(store, f"{name}.fc2", hidden, dim, rng, scale=0.5)


def mlp_block(store: ParameterStore, name: str, x) -> Tensor:
    """Pre-norm residual MLP block."""
    h = layer_norm(store, f"{name}.ln", x)
    h = ad.gelu(linear(store, f"{name}.fc1", h))
    return x + linear(store, f"{name}.fc2", h)


def init_attention(store: ParameterStore, name: str, dim: int, rng: np.random.Generator) -> None:
    for part in ("q", "k", "v"):
        init_linear(store, f"{name}.{part}", dim, dim, rng)
    init_linear(store, f"{name}.o", dim, dim, rng, scale=0.5)


def attention(store: ParameterStore, name: str, x, ctx, heads: int) -> Tensor:
    """Multi-head attention of queries ``x`` (B, N, d) over context ``ctx`` (B, M, d)."""
    B, N, d = x.shape
    M = ctx.shape[1]
    dh = d // heads
    q = ad.transpose(ad.reshape(linear(store, f"{name}.q", x), (B, N, heads, dh)), (0, 2, 1, 3))
    k = ad.transpose(ad.reshape(linear(store, f"{name}.k", ctx), (B, M, heads, dh)), (0, 2, 3, 1))
    v = ad.transpose(ad.reshape(linear(store, f"{name}.v", ctx), (B, M, heads, dh)), (0, 2, 1, 3))
    w = ad.softmax(ad.matmul(q, k) * (1.0 / math.sqrt(dh)), axis=-1)
    out = ad.reshape(ad.transpose(ad.matmul(w, v), (0, 2, 1, 3)), (B, N, d))
    return linear(store, f"{name}.o", out)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits`` (B, K)."""
    logp = ad.log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return -ad.sum(logp * onehot) * (1.0 / len(labels))
