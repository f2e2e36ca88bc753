"""Guided filtering and channel-wise DCT high-pass filtering.

``gfm`` is the learnable guided-filter fusion block: local linear
coefficients (A, B) are fitted between a guide map and a first feature map,
smoothed, and applied to a second feature map.  ``classical_guided_filter``
is the textbook single-image variant (guide and filtered signal share the
statistics).  The DCT ops implement an orthonormal DCT-II / DCT-III pair
along the channel axis, plus the spectral high-pass split built on it.

Everything here is built from tape primitives, so gradients flow through
all filters.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .kernels import box_mean_filter
from .tensor import Tensor, as_tensor, matmul, reshape

LUMA601 = (0.299, 0.587, 0.114)


# -- configs ------------------------------------------------------------------


@dataclass
class GfmConfig:
    """Guided-fusion settings: window radius, regularizer, optional per-channel
    affine transform (scale, shift) applied to the guide before statistics."""

    r: int = 1
    eps: float = 1e-4
    transform: tuple | None = None

    def validate(self):
        if self.r < 0:
            raise ValueError(f"radius must be >= 0, got {self.r}")
        if self.eps <= 0.0:
            raise ValueError(f"eps must be positive, got {self.eps}")


@dataclass
class HighPassConfig:
    """Channel length and first retained DCT frequency index."""

    n: int
    k_cutoff: int

    def validate(self):
        if self.n < 1:
            raise ValueError(f"channel length must be >= 1, got {self.n}")
        if not 0 <= self.k_cutoff <= self.n:
            raise ValueError(f"k_cutoff {self.k_cutoff} outside [0, {self.n}]")


@dataclass
class GfmResult:
    """Output plus the fitted and smoothed linear coefficients."""

    output: Tensor
    a: Tensor
    b: Tensor
    a_bar: Tensor
    b_bar: Tensor


# -- guided filtering ---------------------------------------------------------


def gfm_full(f_prime, f_dprime, p_map, cfg):
    """Guided fusion of two feature maps under a guide map.

    Window statistics of (guide, f_prime) give per-pixel linear coefficients
        A = cov(P, F') / (var(P) + eps),   B = mean(F') - A * mean(P),
    which are re-smoothed and applied to the second map:
        out = A_bar * F'' + B_bar.
    Returns the coefficients alongside the output.
    """
    f_prime, f_dprime, p_map = as_tensor(f_prime), as_tensor(f_dprime), as_tensor(p_map)
    cfg.validate()
    if f_prime.shape != f_dprime.shape or f_prime.shape != p_map.shape:
        raise ValueError(
            f"shape mismatch: f_prime {f_prime.shape}, f_dprime {f_dprime.shape}, p_map {p_map.shape}"
        )
    if cfg.transform is not None:
        scale, shift = cfg.transform
        p_map = p_map * scale + shift

    # Global precentering: identical statistics in exact arithmetic, but the
    # covariance of a constant guide cancels to ~0 instead of eps-amplified
    # rounding noise.
    c0 = p_map.mean()
    d0 = f_prime.mean()
    pc = p_map - c0
    fc = f_prime - d0
    mean_pc = box_mean_filter(pc, cfg.r)
    mean_fc = box_mean_filter(fc, cfg.r)
    var_p = box_mean_filter(pc * pc, cfg.r) - mean_pc * mean_pc
    cov_pf = box_mean_filter(pc * fc, cfg.r) - mean_pc * mean_fc

    a = cov_pf / (var_p + cfg.eps)
    b = (mean_fc + d0) - a * (mean_pc + c0)
    a_bar = box_mean_filter(a, cfg.r)
    b_bar = box_mean_filter(b, cfg.r)
    out = a_bar * f_dprime + b_bar
    return GfmResult(out, a, b, a_bar, b_bar)


def gfm(f_prime, f_dprime, p_map, cfg):
    """Guided fusion; see :func:`gfm_full` for the returned coefficients."""
    return gfm_full(f_prime, f_dprime, p_map, cfg).output


def _gray_reduce(guide):
    """Collapse a multi-channel guide to one channel (601 luma for RGB)."""
    if guide.ndim == 2:
        return guide.reshape(guide.shape + (1,))
    if guide.shape[2] == 1:
        return guide
    if guide.shape[2] == 3:
        w = Tensor(np.array(LUMA601).reshape(1, 1, 3))
        return (guide * w).sum(axis=2, keepdims=True)
    return guide.mean(axis=2, keepdims=True)


def classical_guided_filter(input_img, guide_img, r, eps):
    """Edge-preserving transfer of guide structure onto ``input_img``.

    A guide with matching channel count steers each channel separately (a
    shared luma guide cannot see isoluminant color edges and blurs them);
    otherwise the guide is gray-reduced and shared across input channels.
    This is the f_prime == f_dprime special case of :func:`gfm`.
    """
    input_img, guide_img = as_tensor(input_img), as_tensor(guide_img)
    if input_img.ndim == 2:
        input_img = input_img.reshape(input_img.shape + (1,))
    if input_img.shape[:2] != guide_img.shape[:2]:
        raise ValueError(
            f"spatial mismatch: input {input_img.shape[:2]}, guide {guide_img.shape[:2]}"
        )
    if guide_img.ndim == 3 and guide_img.shape[2] == input_img.shape[2]:
        p_map = guide_img
    else:
        guide = _gray_reduce(guide_img)
        ones = Tensor(np.ones((1, 1, input_img.shape[2])))
        p_map = guide * ones  # broadcast to input channel count
    return gfm(input_img, input_img, p_map, GfmConfig(r=r, eps=eps))


# -- channel DCT --------------------------------------------------------------


@lru_cache(maxsize=32)
def dct_matrix(n):
    """Orthonormal DCT-II matrix: row k is c_k * cos(pi/n * (i + 1/2) * k)."""
    if n < 1:
        raise ValueError(f"DCT length must be >= 1, got {n}")
    i = np.arange(n)
    k = np.arange(n)[:, None]
    mat = np.cos(np.pi / n * (i[None, :] + 0.5) * k)
    mat[0] *= np.sqrt(1.0 / n)
    mat[1:] *= np.sqrt(2.0 / n)
    mat.setflags(write=False)
    return mat


def _channel_matmul(x, mat):
    """Apply an N x N matrix along the last axis of ``x``."""
    n = x.shape[-1]
    flat = reshape(x, (-1, n)) if x.ndim != 2 else x
    out = matmul(flat, Tensor(mat.T))
    return reshape(out, x.shape) if x.ndim != 2 else out


def dct1d(x):
    """Orthonormal DCT-II along the last axis (an isometry)."""
    x = as_tensor(x)
    if x.shape[-1] < 1:
        raise ValueError("dct1d needs a non-empty last axis")
    return _channel_matmul(x, dct_matrix(x.shape[-1]))


def idct1d(x):
    """Inverse of :func:`dct1d` (orthonormal DCT-III)."""
    x = as_tensor(x)
    if x.shape[-1] < 1:
        raise ValueError("idct1d needs a non-empty last axis")
    return _channel_matmul(x, dct_matrix(x.shape[-1]).T)


def high_pass_dct(x, cfg):
    """Zero DCT coefficients below ``cfg.k_cutoff`` along the channel axis.

    Linear and idempotent; together with :func:`low_pass_dct` it partitions
    the spectrum exactly.
    """
    x = as_tensor(x)
    cfg.validate()
    if x.shape[-1] != cfg.n:
        raise ValueError(f"channel length {x.shape[-1]} != configured {cfg.n}")
    mask = np.ones(cfg.n)
    mask[: cfg.k_cutoff] = 0.0
    return idct1d(dct1d(x) * Tensor(mask))


def low_pass_dct(x, cfg):
    """Spectral complement of :func:`high_pass_dct`."""
    x = as_tensor(x)
    cfg.validate()
    if x.shape[-1] != cfg.n:
        raise ValueError(f"channel length {x.shape[-1]} != configured {cfg.n}")
    mask = np.zeros(cfg.n)
    mask[: cfg.k_cutoff] = 1.0
    return idct1d(dct1d(x) * Tensor(mask))
