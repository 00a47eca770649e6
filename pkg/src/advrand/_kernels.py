"""Hot numeric kernels: valid cross-correlation and the fused resize+pad stack.

Every kernel has a numba implementation and a pure-numpy implementation
with the same signature.  The numba path is used when numba imports and
``ADVRAND_NUMBA`` is not set to ``0``; set ``ADVRAND_NUMBA=0`` before
importing advrand to force the numpy path.

In numba mode the convolutions still go to numpy when the input has more
than ``SHALLOW_CHANNELS`` channels: there the einsum path reaches BLAS and
wins (see ``benchmarks/bench_kernels.py``).  Passing ``backend=`` forces
one path.

The two paths agree to rounding error but not bit-for-bit, so results are
only reproducible within one backend.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("ADVRAND_NUMBA", "1") != "0"
BACKEND = "numba" if USE_NUMBA else "numpy"
SHALLOW_CHANNELS = 4


def bilinear_taps(in_size: int, out_size: int):
    """Two-tap linear interpolation along one axis (half-pixel centres).

    Source coordinate is ``(dst + 0.5) * in_size / out_size - 0.5``, clamped
    at 0 below and at ``in_size - 1`` above.  Returns ``(lo, hi, frac)`` with
    ``value = (1 - frac) * src[lo] + frac * src[hi]``.
    """
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.maximum(src, 0.0)
    lo = np.minimum(np.floor(src).astype(np.int64), in_size - 1)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = np.where(lo == in_size - 1, 0.0, src - lo)
    return lo, hi, frac


def interp_matrix(in_size: int, out_size: int) -> np.ndarray:
    """Dense ``(out_size, in_size)`` matrix form of :func:`bilinear_taps`."""
    lo, hi, frac = bilinear_taps(in_size, out_size)
    a = np.zeros((out_size, in_size))
    rows = np.arange(out_size)
    np.add.at(a, (rows, lo), 1.0 - frac)
    np.add.at(a, (rows, hi), frac)
    return a


def pattern_tables(height: int, width: int, resize_to, pad_left, pad_top, flip):
    """Per-pattern tap tables consumed by the stack kernels.

    Rows are padded to the largest resize target; only the first
    ``resize_to[p]`` entries of row ``p`` are meaningful.
    """
    n = len(resize_to)
    size = int(max(resize_to))
    ylo = np.zeros((n, size), np.int64)
    yhi = np.zeros((n, size), np.int64)
    yf = np.zeros((n, size))
    xlo = np.zeros((n, size), np.int64)
    xhi = np.zeros((n, size), np.int64)
    xf = np.zeros((n, size))
    for p in range(n):
        r = int(resize_to[p])
        lo, hi, fr = bilinear_taps(height, r)
        ylo[p, :r], yhi[p, :r], yf[p, :r] = lo, hi, fr
        lo, hi, fr = bilinear_taps(width, r)
        if flip[p]:
            lo, hi = width - 1 - lo, width - 1 - hi
        xlo[p, :r], xhi[p, :r], xf[p, :r] = lo, hi, fr
    meta = np.stack(
        [np.asarray(resize_to, np.int64), np.asarray(pad_left, np.int64),
         np.asarray(pad_top, np.int64)], axis=1,
    )
    return meta, ylo, yhi, yf, xlo, xhi, xf


# ---------------------------------------------------------------- numpy path


def _conv2d_np(x, k, stride):
    kh, kw = k.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (N, Ho, Wo, Cin, kh, kw)
    return np.einsum("nhwcij,ijco->nhwo", win, k, optimize=True)


def _conv2d_grad_input_np(g, k, stride, in_shape):
    kh, kw = k.shape[:2]
    ho, wo = g.shape[1:3]
    dx = np.zeros(in_shape)
    for i in range(kh):
        for j in range(kw):
            dx[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += (
                g @ k[i, j].T
            )
    return dx


def _conv2d_grad_kernel_np(x, g, stride, k_shape):
    kh, kw = k_shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    return np.einsum("nhwcij,nhwo->ijco", win, g, optimize=True)


def _stack_np(x, meta, ylo, yhi, yf, xlo, xhi, xf, target):
    h, w, c = x.shape
    out = np.zeros((len(meta), target, target, c))
    for p in range(len(meta)):
        r, left, top = meta[p]
        ay = np.zeros((r, h))
        ax = np.zeros((r, w))
        rows = np.arange(r)
        np.add.at(ay, (rows, ylo[p, :r]), 1.0 - yf[p, :r])
        np.add.at(ay, (rows, yhi[p, :r]), yf[p, :r])
        np.add.at(ax, (rows, xlo[p, :r]), 1.0 - xf[p, :r])
        np.add.at(ax, (rows, xhi[p, :r]), xf[p, :r])
        out[p, top:top + r, left:left + r, :] = np.einsum("ip,pqc,jq->ijc", ay, x, ax)
    return out


def _stack_grad_np(g, meta, ylo, yhi, yf, xlo, xhi, xf, height, width):
    c = g.shape[3]
    dx = np.zeros((height, width, c))
    for p in range(len(meta)):
        r, left, top = meta[p]
        ay = np.zeros((r, height))
        ax = np.zeros((r, width))
        rows = np.arange(r)
        np.add.at(ay, (rows, ylo[p, :r]), 1.0 - yf[p, :r])
        np.add.at(ay, (rows, yhi[p, :r]), yf[p, :r])
        np.add.at(ax, (rows, xlo[p, :r]), 1.0 - xf[p, :r])
        np.add.at(ax, (rows, xhi[p, :r]), xf[p, :r])
        dx += np.einsum("ijc,ip,jq->pqc", g[p, top:top + r, left:left + r, :], ay, ax)
    return dx


# ---------------------------------------------------------------- numba path

if _HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _conv2d_nb(x, k, stride):
        n, h, w, cin = x.shape
        kh, kw, _, cout = k.shape
        ho = (h - kh) // stride + 1
        wo = (w - kw) // stride + 1
        out = np.zeros((n, ho, wo, cout))
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    for di in range(kh):
                        for dj in range(kw):
                            for ci in range(cin):
                                v = x[b, i * stride + di, j * stride + dj, ci]
                                for co in range(cout):
                                    out[b, i, j, co] += v * k[di, dj, ci, co]
        return out

    @njit(cache=True, nogil=True)
    def _conv2d_grad_input_nb(g, k, stride, h, w):
        n, ho, wo, cout = g.shape
        kh, kw, cin, _ = k.shape
        dx = np.zeros((n, h, w, cin))
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    for di in range(kh):
                        for dj in range(kw):
                            for ci in range(cin):
                                acc = 0.0
                                for co in range(cout):
                                    acc += g[b, i, j, co] * k[di, dj, ci, co]
                                dx[b, i * stride + di, j * stride + dj, ci] += acc
        return dx

    @njit(cache=True, nogil=True)
    def _conv2d_grad_kernel_nb(x, g, stride, kh, kw):
        n, ho, wo, cout = g.shape
        cin = x.shape[3]
        dk = np.zeros((kh, kw, cin, cout))
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    for di in range(kh):
                        for dj in range(kw):
                            for ci in range(cin):
                                v = x[b, i * stride + di, j * stride + dj, ci]
                                for co in range(cout):
                                    dk[di, dj, ci, co] += v * g[b, i, j, co]
        return dk

    @njit(cache=True, nogil=True)
    def _stack_nb(x, meta, ylo, yhi, yf, xlo, xhi, xf, target):
        c = x.shape[2]
        npat = meta.shape[0]
        out = np.zeros((npat, target, target, c))
        for p in range(npat):
            r = meta[p, 0]
            left = meta[p, 1]
            top = meta[p, 2]
            for i in range(r):
                y0 = ylo[p, i]
                y1 = yhi[p, i]
                fy = yf[p, i]
                for j in range(r):
                    x0 = xlo[p, j]
                    x1 = xhi[p, j]
                    fx = xf[p, j]
                    for ch in range(c):
                        top_row = (1.0 - fx) * x[y0, x0, ch] + fx * x[y0, x1, ch]
                        bot_row = (1.0 - fx) * x[y1, x0, ch] + fx * x[y1, x1, ch]
                        out[p, top + i, left + j, ch] = (1.0 - fy) * top_row + fy * bot_row
        return out

    @njit(cache=True, nogil=True)
    def _stack_grad_nb(g, meta, ylo, yhi, yf, xlo, xhi, xf, height, width):
        c = g.shape[3]
        npat = meta.shape[0]
        dx = np.zeros((height, width, c))
        for p in range(npat):
            r = meta[p, 0]
            left = meta[p, 1]
            top = meta[p, 2]
            for i in range(r):
                y0 = ylo[p, i]
                y1 = yhi[p, i]
                fy = yf[p, i]
                for j in range(r):
                    x0 = xlo[p, j]
                    x1 = xhi[p, j]
                    fx = xf[p, j]
                    for ch in range(c):
                        v = g[p, top + i, left + j, ch]
                        dx[y0, x0, ch] += (1.0 - fy) * (1.0 - fx) * v
                        dx[y0, x1, ch] += (1.0 - fy) * fx * v
                        dx[y1, x0, ch] += fy * (1.0 - fx) * v
                        dx[y1, x1, ch] += fy * fx * v
        return dx


# ---------------------------------------------------------------- dispatch


def _conv_numba(backend, in_channels: int) -> bool:
    if backend is not None:
        return backend == "numba"
    return BACKEND == "numba" and in_channels <= SHALLOW_CHANNELS


def conv2d(x, k, stride, backend=None):
    if _conv_numba(backend, x.shape[-1]):
        return _conv2d_nb(np.ascontiguousarray(x), np.ascontiguousarray(k), stride)
    return _conv2d_np(x, k, stride)


def conv2d_grad_input(g, k, stride, in_shape, backend=None):
    # numpy wins here at every batch size except 1, where the gap is noise
    if backend == "numba":
        return _conv2d_grad_input_nb(
            np.ascontiguousarray(g), np.ascontiguousarray(k), stride, in_shape[1], in_shape[2]
        )
    return _conv2d_grad_input_np(g, k, stride, in_shape)


def conv2d_grad_kernel(x, g, stride, k_shape, backend=None):
    if _conv_numba(backend, x.shape[-1]):
        return _conv2d_grad_kernel_nb(
            np.ascontiguousarray(x), np.ascontiguousarray(g), stride, k_shape[0], k_shape[1]
        )
    return _conv2d_grad_kernel_np(x, g, stride, k_shape)


def pattern_stack(x, tables, target, backend=None):
    if (backend or BACKEND) == "numba":
        return _stack_nb(np.ascontiguousarray(x), *tables, target)
    return _stack_np(x, *tables, target)


def pattern_stack_grad(g, tables, height, width, backend=None):
    if (backend or BACKEND) == "numba":
        return _stack_grad_nb(np.ascontiguousarray(g), *tables, height, width)
    return _stack_grad_np(g, *tables, height, width)
