"""Spatial kernels on H x W x C tensors: box mean filter, bicubic resize,
pixel shuffle, and strided convolution.

All kernels are registered on the autodiff tape with hand-derived adjoints
(the box filter and bicubic resize are linear, so their adjoints are exact
transposes; conv2d uses the usual im2col/col2im pair).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _record, as_tensor

# -- box mean filter ----------------------------------------------------------
# Running-sum implementation: O(HWC) regardless of radius.  Edge handling is
# replicate padding, so border means never darken toward zero.


def _window_sum(a, k, axis):
    """Valid-mode sliding sum of length ``k`` along ``axis`` via cumsum."""
    c = np.cumsum(a, axis=axis)
    zshape = list(a.shape)
    zshape[axis] = 1
    c = np.concatenate([np.zeros(zshape), c], axis=axis)
    lead = [slice(None)] * a.ndim
    lag = [slice(None)] * a.ndim
    lead[axis] = slice(k, None)
    lag[axis] = slice(0, c.shape[axis] - k)
    return c[tuple(lead)] - c[tuple(lag)]


def _box_mean_np(x, r):
    k = 2 * r + 1
    p = np.pad(x, ((r, r), (r, r), (0, 0)), mode="edge")
    s = _window_sum(p, k, axis=0)
    s = _window_sum(s, k, axis=1)
    return s / float(k * k)


def _fold_edge(z, r, axis):
    """Adjoint of replicate padding: collapse the 2r border rows onto the edges."""
    n = z.shape[axis] - 2 * r
    core = np.take(z, np.arange(r, r + n), axis=axis)
    out = core.copy()
    head = [slice(None)] * z.ndim
    head[axis] = slice(0, 1)
    tail = [slice(None)] * z.ndim
    tail[axis] = slice(n - 1, n)
    out[tuple(head)] += np.take(z, np.arange(0, r), axis=axis).sum(axis=axis, keepdims=True)
    out[tuple(tail)] += np.take(z, np.arange(r + n, 2 * r + n), axis=axis).sum(axis=axis, keepdims=True)
    return out


def _box_mean_adjoint(g, r):
    k = 2 * r + 1
    z = g / float(k * k)
    # adjoint of a valid window sum = full window sum of zero-padded adjoint
    for axis in (1, 0):
        pad = [(0, 0), (0, 0), (0, 0)]
        pad[axis] = (k - 1, k - 1)
        z = _window_sum(np.pad(z, pad), k, axis=axis)
    z = _fold_edge(z, r, axis=0)
    z = _fold_edge(z, r, axis=1)
    return z


def box_mean_filter(x, r):
    """Mean over the (2r+1)^2 window around each pixel, replicate-padded."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ValueError(f"box_mean_filter expects H x W x C, got shape {x.shape}")
    h, w, _ = x.shape
    if h < 1 or w < 1:
        raise ValueError("box_mean_filter needs positive spatial dims")
    r = int(r)
    if r < 0:
        raise ValueError(f"radius must be >= 0, got {r}")
    if 2 * r + 1 > 2 ** 20:
        raise ValueError(f"radius {r} exceeds representable window")
    if r == 0:
        return x * 1.0

    def vjp(g):
        x._accumulate(_box_mean_adjoint(g, r))

    return _record(_box_mean_np(x.data, r), "box_mean_filter", (x,), vjp)


# -- bicubic resize -----------------------------------------------------------
# Catmull-Rom kernel (a = -0.5), half-pixel-center coordinate mapping, source
# indices clamped to the image (edge replication).  scale=1 is the identity.

_CUBIC_A = -0.5


def _cubic_kernel(t):
    t = np.abs(t)
    a = _CUBIC_A
    w = np.where(
        t <= 1.0,
        (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0,
        np.where(t < 2.0, a * t**3 - 5.0 * a * t**2 + 8.0 * a * t - 4.0 * a, 0.0),
    )
    return w


def _resize_tables(n_in, n_out, scale):
    """Per-output 4-tap source indices and weights along one axis."""
    xs = (np.arange(n_out) + 0.5) / scale - 0.5
    i0 = np.floor(xs).astype(np.int64)
    frac = xs - i0
    offs = np.arange(-1, 3)
    idx = np.clip(i0[:, None] + offs[None, :], 0, n_in - 1)
    wts = _cubic_kernel(frac[:, None] - offs[None, :])
    return idx, wts


def _resize_axis_np(x, axis, idx, wts):
    gathered = np.take(x, idx, axis=axis)  # inserts a 4-tap dim after axis
    wshape = [1] * gathered.ndim
    wshape[axis] = wts.shape[0]
    wshape[axis + 1] = 4
    return np.sum(gathered * wts.reshape(wshape), axis=axis + 1)


def _resize_axis_adjoint(g, axis, n_in, idx, wts):
    shape = list(g.shape)
    shape[axis] = n_in
    out = np.zeros(shape)
    mov = np.moveaxis(g, axis, 0)
    dst = np.moveaxis(out, axis, 0)
    for j in range(4):
        np.add.at(dst, idx[:, j], mov * wts[:, j].reshape((-1,) + (1,) * (mov.ndim - 1)))
    return out


def output_size(n, scale):
    return int(round(n * scale))


def bicubic_resize_np(img, scale):
    """Plain-array bicubic resize; same taps as :func:`bicubic_resize`."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"bicubic_resize expects H x W x C, got shape {img.shape}")
    scale = float(scale)
    if scale <= 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    h, w, _ = img.shape
    ho, wo = output_size(h, scale), output_size(w, scale)
    if ho < 1 or wo < 1:
        raise ValueError(f"degenerate output size {ho}x{wo} for scale {scale}")
    idx0, wts0 = _resize_tables(h, ho, scale)
    idx1, wts1 = _resize_tables(w, wo, scale)
    y = _resize_axis_np(img, 0, idx0, wts0)
    return _resize_axis_np(y, 1, idx1, wts1)


def bicubic_resize(img, scale):
    """Resize H x W x C by ``scale`` in both spatial dims (Catmull-Rom taps)."""
    img = as_tensor(img)
    if img.ndim != 3:
        raise ValueError(f"bicubic_resize expects H x W x C, got shape {img.shape}")
    scale = float(scale)
    if scale <= 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    h, w, _ = img.shape
    ho, wo = output_size(h, scale), output_size(w, scale)
    if ho < 1 or wo < 1:
        raise ValueError(f"degenerate output size {ho}x{wo} for scale {scale}")
    idx0, wts0 = _resize_tables(h, ho, scale)
    idx1, wts1 = _resize_tables(w, wo, scale)

    def vjp(g):
        g = _resize_axis_adjoint(g, 1, w, idx1, wts1)
        g = _resize_axis_adjoint(g, 0, h, idx0, wts0)
        img._accumulate(g)

    y = _resize_axis_np(img.data, 0, idx0, wts0)
    y = _resize_axis_np(y, 1, idx1, wts1)
    return _record(y, "bicubic_resize", (img,), vjp)


# -- pixel shuffle ------------------------------------------------------------


def pixel_shuffle(x, s):
    """Rearrange H x W x (C*s^2) into sH x sW x C, channel-major sub-pixels."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ValueError(f"pixel_shuffle expects H x W x C, got shape {x.shape}")
    s = int(s)
    h, w, c_in = x.shape
    if s < 1:
        raise ValueError(f"scale must be >= 1, got {s}")
    if c_in % (s * s) != 0:
        raise ValueError(f"channels {c_in} not divisible by s^2={s * s}")
    if s == 1:
        return x * 1.0
    c = c_in // (s * s)
    # composition of shape primitives; adjoint comes from the tape
    y = x.reshape((h, w, c, s, s))
    y = y.transpose((0, 3, 1, 4, 2))
    return y.reshape((h * s, w * s, c))


def pixel_unshuffle(x, s):
    """Inverse rearrangement: sH x sW x C back to H x W x (C*s^2)."""
    x = as_tensor(x)
    s = int(s)
    hs, ws, c = x.shape
    if hs % s != 0 or ws % s != 0:
        raise ValueError(f"spatial dims {hs}x{ws} not divisible by {s}")
    if s == 1:
        return x * 1.0
    h, w = hs // s, ws // s
    y = x.reshape((h, s, w, s, c))
    y = y.transpose((0, 2, 4, 1, 3))
    return y.reshape((h, w, c * s * s))


# -- 2-D convolution ----------------------------------------------------------


def conv2d(x, w, b=None, stride=1, pad=0):
    """Correlate H x W x Cin with kh x kw x Cin x Cout (zero padding)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 4:
        raise ValueError("conv2d expects x: HxWxCin and w: khxkwxCinxCout")
    kh, kw, cin, cout = w.shape
    if x.shape[2] != cin:
        raise ValueError(f"channel mismatch: input {x.shape[2]}, weight {cin}")
    s = int(stride)
    p = int(pad)
    xp = np.pad(x.data, ((p, p), (p, p), (0, 0)))
    hp, wp, _ = xp.shape
    if hp < kh or wp < kw:
        raise ValueError("input smaller than kernel after padding")
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))[::s, ::s]  # Ho,Wo,Cin,kh,kw
    ho, wo = win.shape[0], win.shape[1]
    cols = win.transpose(0, 1, 3, 4, 2).reshape(ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    y = (cols @ wmat).reshape(ho, wo, cout)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        y = y + b.data
        parents.append(b)

    def vjp(g):
        gmat = g.reshape(ho * wo, cout)
        w._accumulate((cols.T @ gmat).reshape(w.data.shape))
        gcols = (gmat @ wmat.T).reshape(ho, wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for dy in range(kh):
            for dx in range(kw):
                gxp[dy : dy + ho * s : s, dx : dx + wo * s : s, :] += gcols[:, :, dy, dx, :]
        if p:
            gxp = gxp[p:-p, p:-p, :]
        x._accumulate(gxp)
        if b is not None:
            b._accumulate(g.sum(axis=(0, 1)))

    return _record(y, "conv2d", tuple(parents), vjp)
