"""Forward kernels on dense NCHW float32 arrays.

Tensors are plain ``numpy.ndarray`` objects of dtype float32 in C order.
Reductions accumulate in float64 and round once on output, so the result
of a kernel for one image never depends on what else is in the batch.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

DTYPE = np.float32
COL_BUDGET = 64 * 2**20  # bytes of float64 im2col columns per chunk


def as_tensor(x, ndim=4):
    """Return ``x`` as a C-contiguous float32 array with ``ndim`` axes."""
    t = np.ascontiguousarray(x, dtype=DTYPE)
    if t.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-D tensor, got shape {t.shape}")
    return t


def _out_size(size, k, s, p):
    return (size + 2 * p - k) // s + 1


def im2col(x, kh, kw, stride=1, padding=0):
    """Patches of ``x`` as (N, Ho*Wo, C*kh*kw) float64 columns."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    # (N, C, Ho, Wo, kh, kw) -> (N, Ho, Wo, C, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    return cols.astype(np.float64), ho, wo


def col2im(cols, shape, kh, kw, stride=1, padding=0):
    """Scatter-add (N, Ho*Wo, C*kh*kw) columns back onto an NCHW grid.

    Adjoint of :func:`im2col`. Returns float64.
    """
    n, c, h, w = shape
    ho, wo = _out_size(h, kh, stride, padding), _out_size(w, kw, stride, padding)
    cols = cols.reshape(n, ho, wo, c, kh, kw)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    # loop over kernel taps, each one a strided slice assignment
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


def conv2d(x, weights, bias=None, stride=1, padding=0):
    """2-D cross-correlation (no kernel flip).

    x: (N, Cin, H, W); weights: (Cout, Cin, Kh, Kw); bias: (Cout,) or None.
    """
    return np.ascontiguousarray(conv2d_f64(x, weights, bias, stride, padding), dtype=DTYPE)


def conv2d_f64(x, weights, bias=None, stride=1, padding=0):
    """:func:`conv2d` without the final rounding to float32."""
    x = np.asarray(x)
    weights = np.asarray(weights)
    if x.ndim != 4 or weights.ndim != 4:
        raise ShapeError(
            f"conv2d needs 4-D input and weights, got {x.shape} and {weights.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"bad stride/padding: stride={stride}, padding={padding}")
    n, c, h, w = x.shape
    cout, cin, kh, kw = weights.shape
    if c != cin:
        raise ShapeError(
            f"conv2d channel mismatch: input shape {x.shape}, weights shape {weights.shape}")
    ho, wo = _out_size(h, kh, stride, padding), _out_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d output would be empty: input shape {x.shape}, weights shape {weights.shape}")
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d bias shape {bias.shape} does not match Cout={cout}")
    wmat = weights.reshape(cout, -1).astype(np.float64).T
    out = np.empty((n, cout, ho, wo), dtype=np.float64)
    # bound the im2col buffer; images are independent so chunking is exact
    step = max(1, COL_BUDGET // (ho * wo * cin * kh * kw * 8))
    for i in range(0, n, step):
        cols, _, _ = im2col(x[i:i + step], kh, kw, stride, padding)
        part = np.matmul(cols, wmat)  # (n_chunk, Ho*Wo, Cout), one gemm per image
        if bias is not None:
            part += bias
        out[i:i + step] = part.transpose(0, 2, 1).reshape(-1, cout, ho, wo)
    return out


def conv2d_transpose_f64(y, weights, in_shape, stride=1, padding=0):
    """Adjoint of the bias-free :func:`conv2d` map, in float64.

    y: (N, Cout, Ho, Wo) -> (N, Cin, H, W) with (H, W) from ``in_shape``.
    """
    n, cout, ho, wo = y.shape
    _, cin, kh, kw = weights.shape
    wmat = np.asarray(weights, dtype=np.float64).reshape(cout, -1)
    cols = np.matmul(y.reshape(n, cout, ho * wo).transpose(0, 2, 1), wmat)
    return col2im(cols, (n, cin) + tuple(in_shape[-2:]), kh, kw, stride, padding)


def relu(x):
    return np.maximum(np.asarray(x, dtype=DTYPE), DTYPE(0))


def _windows(x, k, s, name):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{name} needs a 4-D input, got {x.shape}")
    if k < 1 or s < 1:
        raise ShapeError(f"{name}: bad window k={k}, s={s}")
    if k > x.shape[2] or k > x.shape[3]:
        raise ShapeError(f"{name}: window {k}x{k} larger than input {x.shape[2]}x{x.shape[3]}")
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]


def maxpool2d(x, k, s):
    """Max pooling without padding.

    Returns ``(values, argmax)`` where ``argmax[n, c, i, j]`` is the flat
    index ``row * W + col`` into the (H, W) plane of ``x[n, c]``. Ties go to
    the lowest flat index.
    """
    win = _windows(x, k, s, "maxpool2d")
    n, c, ho, wo = win.shape[:4]
    flat = win.reshape(n, c, ho, wo, k * k)
    local = np.argmax(flat, axis=-1)  # first occurrence on ties
    values = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    w = x.shape[3]
    rows = np.arange(ho)[:, None] * s + local // k
    cols = np.arange(wo)[None, :] * s + local % k
    return np.ascontiguousarray(values, dtype=DTYPE), (rows * w + cols).astype(np.int64)


def avgpool2d(x, k, s):
    win = _windows(x, k, s, "avgpool2d")
    return np.ascontiguousarray(win.mean(axis=(-2, -1), dtype=np.float64), dtype=DTYPE)


def dense(x, weights, bias=None):
    """Fully connected layer: ``x @ weights.T + bias``.

    x: (in,) or (N, in); weights: (out, in).
    """
    x = np.asarray(x)
    weights = np.asarray(weights)
    if weights.ndim != 2 or x.shape[-1] != weights.shape[1]:
        raise ShapeError(f"dense shape mismatch: input {x.shape}, weights {weights.shape}")
    out = np.matmul(x.astype(np.float64), weights.astype(np.float64).T)
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (weights.shape[0],):
            raise ShapeError(f"dense bias shape {bias.shape} does not match {weights.shape[0]} outputs")
        out = out + bias
    return out.astype(DTYPE)


def softmax(logits):
    """Softmax along the last axis, computed in float64."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def add(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return (a.astype(np.float64) + b).astype(DTYPE)


def flatten(x):
    x = np.asarray(x)
    return np.ascontiguousarray(x.reshape(x.shape[0], -1), dtype=DTYPE)
