"""Differentiable operations on :class:`~sparseodt.autodiff.tensor.Tensor`.

Image-like tensors use the layout ``[batch, channel, depth, width]``; the
depth axis is the A-line and the width axis is the B-line.  Convolutions are
cross-correlations with zero "same" padding and stride 1.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, get_default_dtype, make_result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=get_default_dtype()))


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make_result(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None,
        )

    return make_result(ad / bd, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return make_result(ad**p, (a,), lambda g: (g * p * ad ** (p - 1),))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(np.log(ad), (a,), lambda g: (g / ad,))


def abs(a: Tensor) -> Tensor:
    """|x|; the backward uses the subgradient 0 at exactly x == 0."""
    sgn = np.sign(a.data)
    return make_result(np.abs(a.data), (a,), lambda g: (g * sgn,))


def cos(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),))


def sin(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return make_result(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid(x)
    return make_result(x * s, (a,), lambda g: (g * s * (1.0 + x * (1.0 - s)),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0.0, x).astype(x.dtype, copy=False)
    return make_result(out, (a,), lambda g: (g * _sigmoid(x),))


def relu(a: Tensor) -> Tensor:
    x = a.data
    mask = x > 0
    return make_result(np.where(mask, x, 0.0).astype(x.dtype, copy=False), (a,), lambda g: (g * mask,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return make_result(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in axes]))
    return sum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, idx) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, idx, g) if _is_advanced(idx) else out.__setitem__(idx, g)
        return (out,)

    return make_result(a.data[idx], (a,), backward)


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def split(a: Tensor, sections: int, axis: int = 0) -> list[Tensor]:
    n = a.shape[axis] // sections
    sl = [slice(None)] * a.ndim
    parts = []
    for i in range(sections):
        sl[axis] = slice(i * n, (i + 1) * n)
        parts.append(getitem(a, tuple(sl)))
    return parts


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product ``[.., m, k] @ [.., k, n]``."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs at least 2-d operands")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad @ bd, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` over the last axis; ``w`` is ``[out, in]``."""
    y = matmul(x, transpose(w))
    return y if b is None else add(y, b)


# ---------------------------------------------------------------------------
# neural-network primitives


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; ties are harmless (equal logits give equal weight)."""
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (a,), backward)


def global_avg_pool(a: Tensor) -> Tensor:
    """Mean over depth and width, keeping singleton axes: ``[B,C,D,W] -> [B,C,1,1]``."""
    return mean(a, axis=(2, 3), keepdims=True)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the channel axis (axis 1) at every (depth, width) location."""
    xd = x.data
    c = xd.shape[1]
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    shape = (1, c) + (1,) * (xd.ndim - 2)
    gd, bd = gamma.data.reshape(shape), beta.data.reshape(shape)
    red = (0,) + tuple(range(2, xd.ndim))

    def backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            gx = inv * (
                dxhat
                - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            )
        gg = (g * xhat).sum(axis=red).reshape(gamma.shape) if gamma.requires_grad else None
        gb = g.sum(axis=red).reshape(beta.shape) if beta.requires_grad else None
        return gx, gg, gb

    return make_result(xhat * gd + bd, (x, gamma, beta), backward)


def _corr2d(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of padded ``[B,Cin,H',W']`` with ``[Cout,Cin,kh,kw]``."""
    kh, kw = w.shape[2:]
    if kh == 1 and kw == 1:
        out = np.tensordot(xp, w[:, :, 0, 0], axes=([1], [1]))
    else:
        cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))
        out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _pad_hw(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded stride-1 cross-correlation ``[B,Cin,D,W] * [Cout,Cin,kd,kw]``."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects 4-d input and weight")
    cout, cin, kh, kw = w.shape
    if x.shape[1] != cin:
        raise ValueError(f"input has {x.shape[1]} channels, weight expects {cin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d needs odd kernel sizes")
    ph, pw = kh // 2, kw // 2
    xp = _pad_hw(x.data, ph, pw)
    wd = w.data
    out = _corr2d(xp, wd)
    if bias is not None:
        out += bias.data.reshape(1, cout, 1, 1)
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            wt = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            gx = _corr2d(_pad_hw(g, ph, pw), wt)
        if w.requires_grad:
            if kh == 1 and kw == 1:
                gw = np.tensordot(g, xp, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
            else:
                cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))
                gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_result(out, parents, backward)


def depthwise_conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel same-padded cross-correlation with weight ``[C, kd, kw]``."""
    c, kh, kw = w.shape
    if x.shape[1] != c:
        raise ValueError(f"input has {x.shape[1]} channels, depthwise weight has {c}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("depthwise conv needs odd kernel sizes")
    ph, pw = kh // 2, kw // 2
    xp = _pad_hw(x.data, ph, pw)
    wd = w.data
    H, W = x.shape[2], x.shape[3]
    out = np.zeros(x.shape, dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += wd[None, :, i, j, None, None] * xp[:, :, i : i + H, j : j + W]
    if bias is not None:
        out += bias.data.reshape(1, c, 1, 1)
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(wd) if w.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                if gxp is not None:
                    gxp[:, :, i : i + H, j : j + W] += g * wd[None, :, i, j, None, None]
                if gw is not None:
                    gw[:, i, j] = (g * xp[:, :, i : i + H, j : j + W]).sum(axis=(0, 2, 3))
        gx = gxp[:, :, ph : ph + H, pw : pw + W] if gxp is not None else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_result(out, parents, backward)


def conv1d_depth(x: Tensor, w: Tensor, bias: Tensor | None = None, depthwise: bool = False) -> Tensor:
    """1-D convolution along the depth (A-line) axis.

    ``w`` is ``[Cout, Cin, k]``, or ``[C, k]`` when ``depthwise``.
    """
    if depthwise:
        return depthwise_conv2d(x, reshape(w, w.shape + (1,)), bias)
    return conv2d(x, reshape(w, w.shape + (1,)), bias)


def conv1d_bline(x: Tensor, w: Tensor, bias: Tensor | None = None, depthwise: bool = False) -> Tensor:
    """1-D convolution along the width (B-line) axis; weight layout as :func:`conv1d_depth`."""
    if depthwise:
        return depthwise_conv2d(x, reshape(w, w.shape[:1] + (1,) + w.shape[1:]), bias)
    return conv2d(x, reshape(w, w.shape[:2] + (1,) + w.shape[2:]), bias)


# ---------------------------------------------------------------------------
# B-line (last axis) difference / shift / shuffle


def _shift_fwd(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    out[..., 0] = x[..., 0]
    out[..., 1:] = x[..., :-1]
    return out


def _shift_adj(g: np.ndarray) -> np.ndarray:
    out = np.zeros_like(g)
    out[..., :-1] = g[..., 1:]
    out[..., 0] += g[..., 0]
    return out


def shift_b(x: Tensor) -> Tensor:
    """``out[..., j] = x[..., j-1]`` for ``j >= 1``; the first column is replicated."""
    return make_result(_shift_fwd(x.data), (x,), lambda g: (_shift_adj(g),))


def b_diff(x: Tensor) -> Tensor:
    """Replicate-padded first difference along the B-line: ``out[..., 0] = 0``."""
    xd = x.data
    return make_result(xd - _shift_fwd(xd), (x,), lambda g: (g - _shift_adj(g),))


def b_shuffle(x: Tensor, delta: int) -> Tensor:
    """Differentiable B-line shuffle, see :func:`sparseodt.sampling.b_shuffle`."""
    from ..sampling import b_shuffle as _fwd, b_unshuffle as _inv

    return make_result(_fwd(x.data, delta), (x,), lambda g: (_inv(g, delta),))
