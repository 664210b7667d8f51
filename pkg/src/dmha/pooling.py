"""Utterance-level attention poolings behind one interface.

Three kinds: "attention" (single-head self attention), "mha" (self
multi-head attention, per-head softmax over time with 1/sqrt(d_h) logit
scale, heads concatenated) and "dmha" (a second, unscaled self attention
over the K head context vectors).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

POOLING_KINDS = ("attention", "mha", "dmha")


@dataclass
class PoolingParams:
    """Trainable attention vectors: u (dim D, head-partitioned) and, for
    double MHA, u_prime (dim D/K)."""

    u: Tensor
    num_heads: int
    u_prime: Tensor | None = None

    def __post_init__(self):
        d = self.u.shape[0]
        if d % self.num_heads != 0:
            raise ValueError(
                f"head count {self.num_heads} does not divide dim {d}")

    @property
    def dim(self) -> int:
        return self.u.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.num_heads


def init_params(dim: int, num_heads: int, kind: str, param_rng) -> PoolingParams:
    """Zero-mean normal init with std 1/sqrt(d_h) keeps initial logits O(1)."""
    if kind not in POOLING_KINDS:
        raise ValueError(f"unknown pooling kind {kind!r}")
    if kind == "attention" and num_heads != 1:
        raise ValueError("attention pooling is single-head")
    dh = dim // num_heads
    if dim % num_heads != 0:
        raise ValueError(f"head count {num_heads} does not divide dim {dim}")
    std = 1.0 / np.sqrt(dh)
    u = Tensor(param_rng("pool.u").normal(0.0, std, size=dim),
               requires_grad=True)
    up = None
    if kind == "dmha":
        up = Tensor(param_rng("pool.u_prime").normal(0.0, std, size=dh),
                    requires_grad=True)
    return PoolingParams(u=u, num_heads=num_heads, u_prime=up)


def pooled_dim(kind: str, dim: int, num_heads: int) -> int:
    """Output dimension of each pooling kind."""
    if dim % num_heads != 0:
        raise ValueError(f"head count {num_heads} does not divide dim {dim}")
    if kind in ("attention", "mha"):
        return dim
    if kind == "dmha":
        return dim // num_heads
    raise ValueError(f"unknown pooling kind {kind!r}")


def head_split(h, num_heads: int) -> Tensor:
    """(.., T, D) -> (.., T, K, D/K); head j gets the contiguous slice
    [j*D/K, (j+1)*D/K) of each time step."""
    h = h if isinstance(h, Tensor) else Tensor(h)
    d = h.shape[-1]
    if d % num_heads != 0:
        raise ValueError(f"head count {num_heads} does not divide dim {d}")
    return h.reshape(h.shape[:-1] + (num_heads, d // num_heads))


def _batched(h):
    h = h if isinstance(h, Tensor) else Tensor(h)
    squeeze = h.ndim == 2
    if squeeze:
        h = h.reshape((1,) + h.shape)
    return h, squeeze


def _head_contexts(h, params: PoolingParams):
    """Per-head attention over time.  h: (B, T, D).

    Returns (contexts (B, K, d_h), weights (B, T, K))."""
    B, T, D = h.shape
    K, dh = params.num_heads, params.head_dim
    if D != params.dim:
        raise ValueError(f"sequence dim {D} != parameter dim {params.dim}")
    hs = head_split(h, K)                                    # (B,T,K,dh)
    u = params.u.reshape((1, 1, K, dh))
    logits = ad.scale((hs * u).sum(axis=3), 1.0 / np.sqrt(dh))  # (B,T,K)
    w = ad.softmax(logits, axis=1)                           # (B,T,K)
    c = (hs * w.reshape((B, T, K, 1))).sum(axis=1)           # (B,K,dh)
    return c, w


def mha_pool(h, params: PoolingParams):
    """Self multi-head attention pooling: concat of head contexts (dim D).

    Returns (c, weights) with weights (T, K) columns summing to 1."""
    h, squeeze = _batched(h)
    B = h.shape[0]
    c, w = _head_contexts(h, params)
    c = c.reshape((B, params.dim))
    if squeeze:
        return c[0], w[0]
    return c, w


def self_attention_pool(h, params: PoolingParams):
    """Vanilla self attention: the K=1 case of mha_pool."""
    if params.num_heads != 1:
        raise ValueError("self_attention_pool requires K=1 parameters")
    return mha_pool(h, params)


def double_mha_pool(h, params: PoolingParams):
    """Double MHA: per-head contexts, then an unscaled self attention over
    the K head context vectors.

    Returns (c (dim D/K), weights (T, K), head_weights (K,))."""
    if params.u_prime is None:
        raise ValueError("double_mha_pool requires u_prime")
    h, squeeze = _batched(h)
    B = h.shape[0]
    K, dh = params.num_heads, params.head_dim
    c_heads, w = _head_contexts(h, params)                   # (B,K,dh)
    up = params.u_prime.reshape((1, 1, dh))
    head_logits = (c_heads * up).sum(axis=2)                 # (B,K), no sqrt scale
    wp = ad.softmax(head_logits, axis=1)                     # (B,K)
    c = (c_heads * wp.reshape((B, K, 1))).sum(axis=1)        # (B,dh)
    if squeeze:
        return c[0], w[0], wp[0]
    return c, w, wp


def pool(h, params: PoolingParams, kind: str):
    """Dispatch; returns (context, weights, head_weights-or-None)."""
    if kind == "attention":
        c, w = self_attention_pool(h, params)
        return c, w, None
    if kind == "mha":
        c, w = mha_pool(h, params)
        return c, w, None
    if kind == "dmha":
        return double_mha_pool(h, params)
    raise ValueError(f"unknown pooling kind {kind!r}")


def format_weights(w: np.ndarray, head_weights: np.ndarray | None) -> str:
    """Attention-weight dump: one line per time step (K columns), then for
    double MHA one line of K head weights."""
    lines = [" ".join(f"{v:.9f}" for v in row) for row in np.atleast_2d(w)]
    if head_weights is not None:
        lines.append(" ".join(f"{v:.9f}" for v in head_weights))
    return "\n".join(lines) + "\n"
