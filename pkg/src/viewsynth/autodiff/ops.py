"""Differentiable ops over `Tensor`.

All ops preserve the dtype of their inputs (float32 in training, float64
under the gradient checker). Convolutions use im2col + GEMM forward and a
per-kernel-offset scatter for the transposed direction, so conv_transpose2d
is the exact adjoint of conv2d.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import ShapeError
from .tensor import Tensor, make_node

# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return make_node(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.shape))

    return make_node(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return make_node(out, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * s

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * s)

    return make_node(out, (a,), bwd)


def add_scalar(a: Tensor, s: float) -> Tensor:
    out = a.data + s

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g)

    return make_node(out, (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.dtype)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(np.full(a.shape, g, dtype=a.dtype))

    return make_node(out, (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    out = np.asarray(a.data.mean(), dtype=a.dtype)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(np.full(a.shape, g / n, dtype=a.dtype))

    return make_node(out, (a,), bwd)


def mean_spatial(x: Tensor) -> Tensor:
    """Global average pool: (N,C,H,W) -> (N,C)."""
    if x.ndim != 4:
        raise ShapeError(f"mean_spatial expects (N,C,H,W), got {x.shape}")
    hw = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3))

    def bwd(g):
        if x.requires_grad:
            x.accumulate(np.broadcast_to(
                (g / hw)[:, :, None, None], x.shape).astype(x.dtype))

    return make_node(out, (x,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.shape))

    return make_node(out, (a,), bwd)


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def bwd(g):
        off = 0
        for t, s in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(off, off + s)
                t.accumulate(g[tuple(idx)])
            off += s

    return make_node(out, tuple(tensors), bwd)


# ---------------------------------------------------------------------------
# pointwise nonlinearities
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g * (x.data > 0))

    return make_node(out, (x,), bwd)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    out = np.where(x.data > 0, x.data, x.data * np.asarray(slope, x.dtype))

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g * np.where(x.data > 0, 1.0, slope).astype(x.dtype))

    return make_node(out, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                   np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d)))).astype(d.dtype)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g * out * (1.0 - out))

    return make_node(out, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g * (1.0 - out * out))

    return make_node(out, (x,), bwd)


_POINTWISE = {}


def pointwise(kind: str, x: Tensor) -> Tensor:
    """Dispatch on {relu, leaky_relu, sigmoid, tanh} (leaky slope 0.2)."""
    try:
        return _POINTWISE[kind](x)
    except KeyError:
        raise ShapeError(f"unknown pointwise kind {kind!r}; have {sorted(_POINTWISE)}")


_POINTWISE.update(
    relu=relu, leaky_relu=lambda x: leaky_relu(x, 0.2), sigmoid=sigmoid, tanh=tanh
)


# ---------------------------------------------------------------------------
# convolution machinery
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """Return (cols, (Ho, Wo)): cols has shape (N, C*kh*kw, Ho*Wo)."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    hp, wp = x.shape[2], x.shape[3]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    sn, sc, sh, sw = x.strides
    view = as_strided(
        x,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return view.reshape(n, c * kh * kw, ho * wo).copy(), (ho, wo)


def _col_scatter(cols: np.ndarray, c: int, kh: int, kw: int, hs: int, ws: int,
                 stride: int, pad: int, out_h: int, out_w: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add (N, C*kh*kw, hs*ws) columns back onto
    an (N, C, out_h, out_w) grid (column l maps to position l*stride+offset
    in the padded frame)."""
    n = cols.shape[0]
    view = cols.reshape(n, c, kh, kw, hs, ws)
    hp, wp = out_h + 2 * pad, out_w + 2 * pad
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for a in range(kh):
        for b in range(kw):
            out[:, :, a : a + (hs - 1) * stride + 1 : stride,
                b : b + (ws - 1) * stride + 1 : stride] += view[:, :, a, b]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           pad: int = 0) -> Tensor:
    """Cross-correlation; x (N,Ci,H,W), w (Co,Ci,kh,kw), zero padding."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d shapes do not line up: input {x.shape} vs weights {w.shape}")
    co, ci, kh, kw = w.shape
    cols, (ho, wo) = _im2col(x.data, kh, kw, stride, pad)
    n = x.shape[0]
    w2 = w.data.reshape(co, ci * kh * kw)
    y = np.matmul(w2, cols).reshape(n, co, ho, wo)
    if b is not None:
        y = y + b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        g2 = g.reshape(n, co, ho * wo)
        if w.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
            w.accumulate(gw.reshape(w.shape))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            colsg = np.matmul(w2.T, g2)
            x.accumulate(_col_scatter(colsg, ci, kh, kw, ho, wo, stride, pad,
                                      x.shape[2], x.shape[3]))

    return make_node(y, parents, bwd)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None,
                     stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of conv2d: x (N,Ci,H,W), w (Ci,Co,kh,kw),
    output (N,Co,(H-1)*stride+kh-2*pad, ...)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"conv_transpose2d shapes do not line up: input {x.shape} vs weights {w.shape}"
        )
    ci, co, kh, kw = w.shape
    n, _, h, ww_ = x.shape
    out_h = (h - 1) * stride + kh - 2 * pad
    out_w = (ww_ - 1) * stride + kw - 2 * pad
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(f"conv_transpose2d output collapses: {(out_h, out_w)}")
    x2 = x.data.reshape(n, ci, h * ww_)
    w2 = w.data.reshape(ci, co * kh * kw)
    cols = np.matmul(w2.T, x2)  # (N, Co*kh*kw, H*W)
    y = _col_scatter(cols, co, kh, kw, h, ww_, stride, pad, out_h, out_w)
    if b is not None:
        y = y + b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        cols_g, (gh, gw_) = _im2col(g, kh, kw, stride, pad)
        assert (gh, gw_) == (h, ww_)
        g3 = cols_g  # (N, Co*kh*kw, H*W)
        if x.requires_grad:
            gx = np.matmul(w2, g3).reshape(x.shape)
            x.accumulate(gx)
        if w.requires_grad:
            gw = np.matmul(x2, g3.transpose(0, 2, 1)).sum(axis=0)
            w.accumulate(gw.reshape(w.shape))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))

    return make_node(y, parents, bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x (N,Din) @ w (Dout,Din)^T + b."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear shapes do not line up: input {x.shape} vs weights {w.shape}")
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data[None, :]
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g @ w.data)
        if w.requires_grad:
            w.accumulate(g.T @ x.data)
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=0))

    return make_node(y, parents, bwd)


# ---------------------------------------------------------------------------
# bilinear sampling (the differentiable warping layer)
# ---------------------------------------------------------------------------


def bilinear_sample(src: Tensor, flow: Tensor) -> Tensor:
    """Sample src (N,C,H,W) at continuous pixel coords flow (N,2,Ho,Wo),
    channel 0 = y, channel 1 = x. Each output pixel is the kernel-weighted
    sum over the 4 integer neighbors; neighbors outside the image contribute
    zero. Gradients flow to both the source pixels and the flow coordinates
    (right-limit subgradient at integer coordinates)."""
    if flow.ndim != 4 or flow.shape[1] != 2:
        raise ShapeError(f"flow must be (N,2,H,W), got {flow.shape}")
    if src.ndim != 4 or src.shape[0] != flow.shape[0]:
        raise ShapeError(f"source {src.shape} does not match flow {flow.shape}")
    n, c, h, w = src.shape
    fy = flow.data[:, 0]
    fx = flow.data[:, 1]
    y0 = np.floor(fy)
    x0 = np.floor(fx)
    wy = fy - y0
    wx = fx - x0

    corners = []
    out = np.zeros((n, c) + fy.shape[1:], dtype=src.dtype)
    nidx = np.arange(n)[:, None, None]
    for dy, ky in ((0, 1.0 - wy), (1, wy)):
        for dx, kx in ((0, 1.0 - wx), (1, wx)):
            yy = y0 + dy
            xx = x0 + dx
            inb = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            yi = np.clip(yy, 0, h - 1).astype(np.intp)
            xi = np.clip(xx, 0, w - 1).astype(np.intp)
            val = src.data[nidx, :, yi, xi]          # (N,Ho,Wo,C)
            val = np.where(inb[..., None], val, 0).transpose(0, 3, 1, 2)
            wgt = np.where(inb, (ky * kx), 0.0).astype(src.dtype)
            out += val * wgt[:, None]
            corners.append((yi, xi, inb, val, dy, dx))

    def bwd(g):
        if src.requires_grad:
            gsrc = np.zeros(src.shape, dtype=src.dtype)
            flat = gsrc.reshape(-1)
            for (yi, xi, inb, _val, dy, dx) in corners:
                ky = wy if dy else (1.0 - wy)
                kx = wx if dx else (1.0 - wx)
                wgt = np.where(inb, ky * kx, 0.0)
                contrib = g * wgt[:, None]           # (N,C,Ho,Wo)
                idx = ((nidx[..., None] * c + np.arange(c)[None, None, None, :])
                       .transpose(0, 3, 1, 2) * h + yi[:, None]) * w + xi[:, None]
                flat += np.bincount(
                    idx.reshape(-1), weights=contrib.reshape(-1), minlength=flat.size
                ).astype(src.dtype)
            src.accumulate(gsrc)
        if flow.requires_grad:
            # d out / d fy = kx-weighted vertical differences, etc.
            vals = {}
            for (yi, xi, inb, val, dy, dx) in corners:
                vals[(dy, dx)] = val
            gy_map = ((vals[(1, 0)] - vals[(0, 0)]) * (1.0 - wx)[:, None]
                      + (vals[(1, 1)] - vals[(0, 1)]) * wx[:, None])
            gx_map = ((vals[(0, 1)] - vals[(0, 0)]) * (1.0 - wy)[:, None]
                      + (vals[(1, 1)] - vals[(1, 0)]) * wy[:, None])
            gfy = (g * gy_map).sum(axis=1)
            gfx = (g * gx_map).sum(axis=1)
            flow.accumulate(np.stack([gfy, gfx], axis=1).astype(flow.dtype))

    return make_node(out, (src, flow), bwd)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def instance_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-(sample, channel) normalization over space: subtract the mean,
    divide by std+eps, then scale and shift per channel."""
    if x.ndim != 4:
        raise ShapeError(f"instance_norm expects (N,C,H,W), got {x.shape}")
    if gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(
            f"instance_norm gain/bias {gain.shape}/{bias.shape} vs channels {x.shape[1]}"
        )
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    u = x.data - mu
    var = (u * u).mean(axis=(2, 3), keepdims=True)
    sd = np.sqrt(var)
    s = sd + np.asarray(eps, x.dtype)
    xhat = u / s
    g4 = gain.data[None, :, None, None]
    y = xhat * g4 + bias.data[None, :, None, None]

    def bwd(g):
        gx_hat = g * g4
        if gain.requires_grad:
            gain.accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            m_g = gx_hat.mean(axis=(2, 3), keepdims=True)
            m_gx = (gx_hat * xhat).mean(axis=(2, 3), keepdims=True)
            ratio = s / np.maximum(sd, np.asarray(1e-20, x.dtype))
            x.accumulate((gx_hat - m_g - xhat * m_gx * ratio) / s)

    return make_node(y, (x, gain, bias), bwd)


# ---------------------------------------------------------------------------
# losses (size-normalized as stated: ||.||_1 / n and ||.||_2 / n)
# ---------------------------------------------------------------------------


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes differ {a.shape} vs {b.shape}")


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "l1_loss")
    d = a.data - b.data
    n = d.size
    out = np.asarray(np.abs(d).sum() / n, dtype=a.dtype)

    def bwd(g):
        s = g * np.sign(d) / n
        if a.requires_grad:
            a.accumulate(s.astype(a.dtype))
        if b.requires_grad:
            b.accumulate(-s.astype(b.dtype))

    return make_node(out, (a, b), bwd)


def feature_l2(a: Tensor, b: Tensor) -> Tensor:
    """Euclidean norm of the difference divided by the element count."""
    _same_shape(a, b, "feature_l2")
    d = a.data - b.data
    n = d.size
    ssq = float((d.astype(np.float64) ** 2).sum())
    norm = np.sqrt(ssq)
    out = np.asarray(norm / n, dtype=a.dtype)

    def bwd(g):
        if norm == 0.0:
            return  # subgradient 0 at the exact minimum
        s = g * d / (n * norm)
        if a.requires_grad:
            a.accumulate(s.astype(a.dtype))
        if b.requires_grad:
            b.accumulate(-s.astype(b.dtype))

    return make_node(out, (a, b), bwd)


def bce_with_logit(logit: Tensor, target: Tensor) -> Tensor:
    """Numerically stable mean binary cross-entropy on logits."""
    _same_shape(logit, target, "bce_with_logit")
    x = logit.data
    t = target.data
    n = x.size
    per = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    out = np.asarray(per.sum() / n, dtype=x.dtype)

    def bwd(g):
        sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                       np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        if logit.requires_grad:
            logit.accumulate((g * (sig - t) / n).astype(x.dtype))
        if target.requires_grad:
            target.accumulate((g * (-x) / n).astype(t.dtype))

    return make_node(out, (logit, target), bwd)


def tv_loss(img: Tensor) -> Tensor:
    """Anisotropic total variation: mean |horizontal diff| + mean |vertical
    diff| over an (N,C,H,W) image batch."""
    if img.ndim != 4:
        raise ShapeError(f"tv_loss expects (N,C,H,W), got {img.shape}")
    x = img.data
    dh = x[..., :, 1:] - x[..., :, :-1]
    dv = x[..., 1:, :] - x[..., :-1, :]
    out = np.asarray(np.abs(dh).mean() + np.abs(dv).mean(), dtype=x.dtype)

    def bwd(g):
        if not img.requires_grad:
            return
        gx = np.zeros_like(x)
        sh = g * np.sign(dh) / dh.size
        sv = g * np.sign(dv) / dv.size
        gx[..., :, 1:] += sh
        gx[..., :, :-1] -= sh
        gx[..., 1:, :] += sv
        gx[..., :-1, :] -= sv
        img.accumulate(gx)

    return make_node(out, (img,), bwd)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over integer class labels (labels are data, not a
    differentiable input)."""
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (N,K), got {logits.shape}")
    x = logits.data
    n = x.shape[0]
    labels = np.asarray(labels, dtype=np.intp)
    m = x.max(axis=1, keepdims=True)
    ex = np.exp(x - m)
    z = ex.sum(axis=1, keepdims=True)
    logp = (x - m) - np.log(z)
    out = np.asarray(-logp[np.arange(n), labels].mean(), dtype=x.dtype)

    def bwd(g):
        if logits.requires_grad:
            p = ex / z
            p[np.arange(n), labels] -= 1.0
            logits.accumulate((g * p / n).astype(x.dtype))

    return make_node(out, (logits,), bwd)
