"""Prior-modulated single-head cross-attention.

Feature maps are flattened to HW x C token rows.  The query path is
elementwise-modulated by a prior map before the scaled dot product, so the
prior steers which spatial tokens attend where.  Softmax normalizes over
the key axis; attention rows are convex weights over V rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, matmul, reshape, softmax, transpose


@dataclass
class AttentionParams:
    """Square C->C projections for Q/K/V plus the learnable logit scale."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    gamma: Tensor

    def validate(self):
        for name, w in (("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v)):
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise ValueError(f"{name} must be square, got {w.shape}")
        g = float(self.gamma.data)
        if g == 0.0 or not np.isfinite(g):
            raise ValueError(f"gamma must be finite and nonzero, got {g}")

    def tensors(self, prefix):
        return {
            f"{prefix}.w_q": self.w_q,
            f"{prefix}.w_k": self.w_k,
            f"{prefix}.w_v": self.w_v,
            f"{prefix}.gamma": self.gamma,
        }


def qkv_project(feat, modulator, params):
    """Project a feature map to token matrices; Q gets the prior modulation.

    feat is H x W x C, modulator broadcasts against it (full map or 1 x 1 x C
    row).  Returns (Q, K, V), each HW x C.
    """
    feat = as_tensor(feat)
    params.validate()
    if feat.ndim != 3:
        raise ValueError(f"expected H x W x C features, got {feat.shape}")
    h, w, c = feat.shape
    if params.w_q.shape[0] != c:
        raise ValueError(f"projection width {params.w_q.shape[0]} != channels {c}")
    flat = reshape(feat, (h * w, c))
    q_map = reshape(matmul(flat, params.w_q), (h, w, c)) * modulator
    q = reshape(q_map, (h * w, c))
    k = matmul(flat, params.w_k)
    v = matmul(flat, params.w_v)
    return q, k, v


def cross_attention(q, k, v, gamma):
    """Softmax(Q K^T / gamma) applied to V; rows of the weight matrix sum to 1."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ValueError(f"token shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    gamma = as_tensor(gamma)
    if float(gamma.data) == 0.0:
        raise ValueError("gamma must be nonzero")
    logits = matmul(q, transpose(k)) / gamma
    attn = softmax(logits, axis=-1)
    return matmul(attn, v)


def modulated_attention(feat, modulator, params):
    """qkv_project + cross_attention, reshaped back to the feature-map layout."""
    h, w, c = feat.shape
    q, k, v = qkv_project(feat, modulator, params)
    out = cross_attention(q, k, v, params.gamma)
    return reshape(out, (h, w, c))
