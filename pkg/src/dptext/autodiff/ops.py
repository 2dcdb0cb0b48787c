"""Differentiable primitives.

Every function takes Tensors (or array-likes) and returns a Tensor whose
backward closure maps the output gradient to one gradient per parent.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import sparse

from .tensor import ConfigError, ShapeError, Tensor, as_tensor, make_node

INV_SIGMOID_EPS = 1e-6
_LOG_EPS = 1e-12


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return make_node(a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape),
                                _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data
    return make_node(out, (a, b),
                     lambda g: (_unbroadcast(g / b.data, a.shape),
                                _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,))


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    return make_node(a.data * factor, (a,), lambda g: (g * factor,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,))


def abs(a) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    return make_node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_node(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to stay finite for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def inverse_sigmoid(a, eps: float = INV_SIGMOID_EPS) -> Tensor:
    """logit(clamp(a, eps, 1 - eps)); zero gradient where the clamp is active."""
    a = as_tensor(a)
    x = np.clip(a.data, eps, 1.0 - eps)
    inside = (a.data >= eps) & (a.data <= 1.0 - eps)
    out = np.log(x) - np.log1p(-x)
    return make_node(out, (a,), lambda g: (g * inside / (x * (1.0 - x)),))


# -- shape manipulation ---------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError("broadcast_to", a.shape, tuple(shape)) from None
    return make_node(np.ascontiguousarray(out), (a,), lambda g: (_unbroadcast(g, a.shape),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)

    return make_node(np.array(out, copy=True), (a,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make_node(out, tensors, backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("stack", *(t.shape for t in tensors)) from None

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_node(out, tensors, backward)


# -- reductions -------------------------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- linear algebra -----------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(out, (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """x @ weight.T + bias with weight shaped [out, in]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError("linear", x.shape, weight.shape)
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError("linear", weight.shape, bias.shape, detail="bias")
        out = out + bias.data
        parents.append(bias)
    out = out.reshape(lead + (weight.shape[0],))

    def backward(g):
        g2 = g.reshape(-1, weight.shape[0])
        grads = [(g2 @ weight.data).reshape(x.shape), g2.T @ x2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return make_node(out, parents, backward)


# -- normalisation ------------------------------------------------------------------

def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make_node(out, (a,), backward)


def layer_norm(x, weight=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis (population variance), then affine."""
    x = as_tensor(x)
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    parents = [x]
    out = xhat
    if weight is not None:
        weight, bias = as_tensor(weight), as_tensor(bias)
        if weight.shape != (d,) or bias.shape != (d,):
            raise ShapeError("layer_norm", x.shape, weight.shape, bias.shape)
        out = xhat * weight.data + bias.data
        parents += [weight, bias]

    def backward(g):
        gx_hat = g * weight.data if weight is not None else g
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if weight is not None:
            lead = tuple(range(g.ndim - 1))
            grads += [(g * xhat).sum(axis=lead), g.sum(axis=lead)]
        return grads

    return make_node(out, parents, backward)


def batch_norm(x, weight, bias, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation over every leading axis of ``x[..., C]``.

    In training mode the batch statistics are used and the running buffers are
    updated in place; in eval mode the running buffers are used.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    c = x.shape[-1]
    if weight.shape != (c,) or bias.shape != (c,):
        raise ShapeError("batch_norm", x.shape, weight.shape, bias.shape)
    flat = x.data.reshape(-1, c)
    m = flat.shape[0]
    if training:
        mu = flat.mean(axis=0)
        var = flat.var(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        unbiased = var * m / max(m - 1, 1)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean.copy(), running_var.copy()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (flat - mu) * inv
    out = (xhat * weight.data + bias.data).reshape(x.shape)

    def backward(g):
        g2 = g.reshape(-1, c)
        gxhat = g2 * weight.data
        if training:
            gx = inv * (gxhat - gxhat.mean(axis=0) - xhat * (gxhat * xhat).mean(axis=0))
        else:
            gx = gxhat * inv
        return gx.reshape(x.shape), (g2 * xhat).sum(axis=0), g2.sum(axis=0)

    return make_node(out, (x, weight, bias), backward)


# -- losses -------------------------------------------------------------------------

def l1_loss(pred, target, reduction: str = "mean") -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError("l1_loss", pred.shape, target.shape)
    diff = pred.data - target.data
    total = np.abs(diff).sum()
    n = diff.size if reduction == "mean" else 1
    out = np.asarray(total / max(n, 1))

    def backward(g):
        s = np.sign(diff) * (g / max(n, 1))
        return s, -s

    return make_node(out, (pred, target), backward)


def focal_loss(prob, target, alpha: float = 0.25, gamma: float = 2.0,
               reduction: str = "sum") -> Tensor:
    """Binary focal loss on probabilities (log arguments clamped at 1e-12)."""
    prob, target = as_tensor(prob), as_tensor(target)
    if prob.shape != target.shape:
        raise ShapeError("focal_loss", prob.shape, target.shape)
    p, t = prob.data, target.data
    lp = np.log(np.clip(p, _LOG_EPS, None))
    lq = np.log(np.clip(1.0 - p, _LOG_EPS, None))
    pos = -alpha * t * (1.0 - p) ** gamma * lp
    negv = -(1.0 - alpha) * (1.0 - t) * p ** gamma * lq
    total = (pos + negv).sum()
    n = p.size if reduction == "mean" else 1
    out = np.asarray(total / n)

    def backward(g):
        inv_p = np.where(p > _LOG_EPS, 1.0 / np.clip(p, _LOG_EPS, None), 0.0)
        inv_q = np.where(1.0 - p > _LOG_EPS, 1.0 / np.clip(1.0 - p, _LOG_EPS, None), 0.0)
        dpos = -alpha * t * (-gamma * (1.0 - p) ** max(gamma - 1.0, 0.0) * lp * (gamma > 0)
                             + (1.0 - p) ** gamma * inv_p)
        dneg = -(1.0 - alpha) * (1.0 - t) * (gamma * p ** max(gamma - 1.0, 0.0) * lq * (gamma > 0)
                                             - p ** gamma * inv_q)
        return ((dpos + dneg) * g / n, None)

    return make_node(out, (prob, target), backward)


def sigmoid_focal_loss(logits, target, alpha: float = 0.25, gamma: float = 2.0,
                       reduction: str = "sum") -> Tensor:
    """Focal loss evaluated from logits in log-sigmoid form (finite for any logit)."""
    logits, target = as_tensor(logits), as_tensor(target)
    if logits.shape != target.shape:
        raise ShapeError("sigmoid_focal_loss", logits.shape, target.shape)
    x, t = logits.data, target.data
    p = _sigmoid(x)
    log_p = -np.logaddexp(0.0, -x)
    log_q = -np.logaddexp(0.0, x)
    pos = -alpha * t * (1.0 - p) ** gamma * log_p
    negv = -(1.0 - alpha) * (1.0 - t) * p ** gamma * log_q
    n = x.size if reduction == "mean" else 1
    out = np.asarray((pos + negv).sum() / n)

    def backward(g):
        q = 1.0 - p
        # d/dx of (1-p)^γ log p and p^γ log(1-p), using dp/dx = p q
        d_pos = -alpha * t * (-gamma * q ** gamma * p * log_p + q ** (gamma + 1.0))
        d_neg = -(1.0 - alpha) * (1.0 - t) * (gamma * p ** gamma * q * log_q - p ** (gamma + 1.0))
        return ((d_pos + d_neg) * g / n, None)

    return make_node(out, (logits, target), backward)


# -- structured ops -------------------------------------------------------------------

def circular_conv1d(x, kernel, bias=None) -> Tensor:
    """1-D convolution with wrap-around indexing along the point axis.

    ``x`` is ``[..., N, C_in]`` and ``kernel`` ``[C_out, C_in, ksize]``;
    ``out[n]`` aggregates ``x[(n + o) mod N]`` for ``o`` in ``[-r, r]``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 3 or x.shape[-1] != kernel.shape[1]:
        raise ShapeError("circular_conv1d", x.shape, kernel.shape)
    n, ks = x.shape[-2], kernel.shape[2]
    if ks % 2 == 0:
        raise ConfigError(f"circular_conv1d: kernel size must be odd, got {ks}")
    if ks > n:
        raise ConfigError(f"circular_conv1d: kernel size {ks} exceeds sequence length {n}")
    r = ks // 2
    c_in, c_out = kernel.shape[1], kernel.shape[0]
    idx = (np.arange(n)[:, None] + np.arange(ks)[None, :] - r) % n
    cols = x.data[..., idx, :].reshape(-1, ks * c_in)  # rows: (..., n); cols: (k, c)
    kmat = kernel.data.transpose(0, 2, 1).reshape(c_out, ks * c_in)
    out = (cols @ kmat.T).reshape(x.shape[:-1] + (c_out,))
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(-1, c_out)
        gcols = (g2 @ kmat).reshape(x.shape[:-1] + (ks, c_in))
        gx = np.zeros_like(x.data)
        for k in range(ks):
            gx += np.roll(gcols[..., :, k, :], shift=k - r, axis=-2)
        gk = (g2.T @ cols).reshape(c_out, ks, c_in).transpose(0, 2, 1)
        grads = [gx, gk]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return make_node(out, parents, backward)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Channels-last 2-D convolution: x [B, H, W, Cin], weight [Cout, kh, kw, Cin]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[-1] != weight.shape[-1]:
        raise ShapeError("conv2d", x.shape, weight.shape)
    _, kh, kw, _ = weight.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    hp, wp = xp.shape[1], xp.shape[2]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d", x.shape, weight.shape, detail="kernel larger than input")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    cols = win[:, ::stride, ::stride][:, :ho, :wo]  # [B, ho, wo, Cin, kh, kw]
    b, cin, cout = x.shape[0], x.shape[-1], weight.shape[0]
    cols2 = np.ascontiguousarray(cols).reshape(b * ho * wo, cin * kh * kw)
    wmat = weight.data.transpose(0, 3, 1, 2).reshape(cout, cin * kh * kw)
    out = (cols2 @ wmat.T).reshape(b, ho, wo, cout)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(-1, cout)
        gw = (g2.T @ cols2).reshape(cout, cin, kh, kw).transpose(0, 2, 3, 1)
        gcols = (g2 @ wmat).reshape(b, ho, wo, cin, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += gcols[..., i, j]
        gx = gxp[:, padding:hp - padding, padding:wp - padding, :]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return make_node(out, parents, backward)


def sine_positional_encoding(coords, d_model: int, temperature: float = 10000.0) -> Tensor:
    """Sine encoding of normalised coordinates ``[..., k]`` -> ``[..., k * d_model / 2]``.

    Each coordinate gets ``d_model / 2`` features (sin/cos interleaved) after
    scaling by 2*pi; coordinate blocks are concatenated in input order, so a
    2-D point yields ``d_model`` features.
    """
    if d_model % 4 != 0:
        raise ConfigError(f"sine encoding needs d_model divisible by 4, got {d_model}")
    coords = as_tensor(coords)
    half = d_model // 2
    i = np.arange(half)
    dim_t = temperature ** (2 * (i // 2) / half)
    freq = 2.0 * math.pi / dim_t  # [half]
    pos = coords.data[..., None] * freq  # [..., k, half]
    is_sin = (i % 2 == 0)
    enc = np.where(is_sin, np.sin(pos), np.cos(pos))
    out = enc.reshape(coords.shape[:-1] + (coords.shape[-1] * half,))

    def backward(g):
        gk = g.reshape(coords.shape + (half,))
        deriv = np.where(is_sin, np.cos(pos), -np.sin(pos)) * freq
        return ((gk * deriv).sum(axis=-1),)

    return make_node(out, (coords,), backward)


def bilinear_sample(feature_map, locations) -> Tensor:
    """Sample ``feature_map [B, H, W, C]`` at ``locations [B, M, 2]`` (x, y in [0, 1]).

    Pixel ``(i, j)`` sits at ``((j + 0.5) / W, (i + 0.5) / H)``; samples
    beyond the outermost pixel centres clamp to the border.
    """
    fm, loc = as_tensor(feature_map), as_tensor(locations)
    if fm.ndim != 4 or loc.ndim != 3 or loc.shape[-1] != 2 or loc.shape[0] != fm.shape[0]:
        raise ShapeError("bilinear_sample", fm.shape, loc.shape)
    b, h, w, c = fm.shape
    px = loc.data[..., 0] * w - 0.5
    py = loc.data[..., 1] * h - 0.5
    in_x = (px > 0) & (px < w - 1)
    in_y = (py > 0) & (py < h - 1)
    px = np.clip(px, 0, w - 1)
    py = np.clip(py, 0, h - 1)
    x0 = np.minimum(np.floor(px).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(py).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (px - x0)[..., None]
    wy = (py - y0)[..., None]
    # sparse [B*M, B*H*W] interpolation matrix: forward is A @ f, backward A.T @ g
    m = loc.shape[1]
    base = (np.arange(b) * (h * w))[:, None]
    cols = np.stack([base + y0 * w + x0, base + y0 * w + x1, base + y1 * w + x0, base + y1 * w + x1], -1)
    wx1, wy1 = wx[..., 0], wy[..., 0]
    vals = np.stack([(1 - wy1) * (1 - wx1), (1 - wy1) * wx1, wy1 * (1 - wx1), wy1 * wx1], -1)
    mat = sparse.csr_matrix((vals.ravel(), cols.ravel(), np.arange(0, 4 * b * m + 1, 4)),
                            shape=(b * m, b * h * w))
    flat = fm.data.reshape(b * h * w, c)
    out = (mat @ flat).reshape(b, m, c)

    def backward(g):
        g2 = g.reshape(b * m, c)
        gfm = (mat.T @ g2).reshape(fm.shape)
        # d(weights)/dx and d(weights)/dy share the sparsity pattern of ``mat``
        dvx = np.stack([-(1 - wy1), 1 - wy1, -wy1, wy1], -1) * (w * in_x)[..., None]
        dvy = np.stack([-(1 - wx1), -wx1, 1 - wx1, wx1], -1) * (h * in_y)[..., None]
        mat.data = dvx.ravel()
        gx = np.einsum("ij,ij->i", mat @ flat, g2)
        mat.data = dvy.ravel()
        gy = np.einsum("ij,ij->i", mat @ flat, g2)
        mat.data = vals.ravel()
        return gfm, np.stack([gx, gy], -1).reshape(b, m, 2)

    return make_node(out, (fm, loc), backward)
