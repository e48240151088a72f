"""Neural-network ops with hand-written backward rules.

Convolutions accept ``[C, H, W]`` or batched ``[B, C, H, W]`` inputs and
lower to GEMMs over im2col rows built from a strided-window view.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError, DimensionError
from .tensor import Tensor, _unbroadcast, as_tensor

GELU_C = math.sqrt(2.0 / math.pi)


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """View ``[B, C, Ho, Wo, kh, kw]`` of every receptive field in a padded batch."""
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride][:, :, :ho, :wo]


def _batched(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise DimensionError(f"{op} expects [C,H,W] or [B,C,H,W] input, got shape {x.shape}")


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _col2im_add(gxp: np.ndarray, gcols: np.ndarray, stride: int, ho: int, wo: int) -> None:
    """Scatter-add ``gcols`` ``[B, C, Ho, Wo, kh, kw]`` back onto the padded grid."""
    kh, kw = gcols.shape[-2:]
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[..., i, j]


def conv2d(input: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation; ``weight`` is ``[Cout, Cin/groups, kh, kw]``.

    Dense and grouped convolutions lower to one GEMM per group over
    im2col rows; depthwise (one input channel per group) loops over taps.
    """
    xd, unbatched = _batched(input, "conv2d")
    b, cin, h, w = xd.shape
    cout, cg, kh, kw = weight.shape
    if groups < 1 or cin % groups or cout % groups or cg != cin // groups:
        raise DimensionError(
            f"conv2d: input channels {cin} / weight {weight.shape} incompatible with groups={groups}")
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad)
    if ho < 1 or wo < 1 or stride < 1:
        raise DimensionError(
            f"conv2d: non-positive output size {ho}x{wo} for input {input.shape}, "
            f"kernel {kh}x{kw}, stride {stride}, pad {pad}")
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    og = cout // groups
    wd = weight.data
    depthwise = cg == 1 and groups > 1
    if depthwise:
        # out[b, c*og + o] = sum_taps x[b, c] * w[c*og + o]
        wdw = wd.reshape(groups, og, kh, kw)
        out = np.zeros((b, groups, og, ho, wo), dtype=np.result_type(xd, wd))
        for i in range(kh):
            for j in range(kw):
                tap = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
                out += tap[:, :, None] * wdw[None, :, :, i, j, None, None]
        out = out.reshape(b, cout, ho, wo)
        rows = None
    else:
        cols = _windows(xp, kh, kw, stride, ho, wo)
        # rows: [G, B*Ho*Wo, Cg*kh*kw]
        rows = (cols.reshape(b, groups, cg, ho, wo, kh, kw)
                .transpose(1, 0, 3, 4, 2, 5, 6).reshape(groups, b * ho * wo, cg * kh * kw))
        wmat = wd.reshape(groups, og, cg * kh * kw)
        out = np.matmul(rows, wmat.transpose(0, 2, 1))  # [G, BHW, og]
        out = out.reshape(groups, b, ho, wo, og).transpose(1, 0, 4, 2, 3).reshape(b, cout, ho, wo)
    if bias is not None:
        out = out + bias.data[:, None, None]
    out = np.ascontiguousarray(out)
    parents = (input, weight) if bias is None else (input, weight, bias)

    def bw(g):
        g4 = g[None] if unbatched else g
        gx = gw = None
        if depthwise:
            g5 = g4.reshape(b, groups, og, ho, wo)
            gxp = np.zeros(xp.shape, dtype=xp.dtype) if input.requires_grad else None
            gwdw = np.zeros((groups, og, kh, kw), dtype=wd.dtype) if weight.requires_grad else None
            for i in range(kh):
                for j in range(kw):
                    sl = (slice(None), slice(None), slice(i, i + stride * ho, stride),
                          slice(j, j + stride * wo, stride))
                    if gwdw is not None:
                        gwdw[:, :, i, j] = np.einsum("bchw,bcohw->co", xp[sl], g5)
                    if gxp is not None:
                        gxp[sl] += (g5 * wdw[None, :, :, i, j, None, None]).sum(axis=2)
            if gwdw is not None:
                gw = gwdw.reshape(weight.shape)
            if gxp is not None:
                gx = gxp[:, :, pad:pad + h, pad:pad + w]
        else:
            gmat = g4.reshape(b, groups, og, ho, wo).transpose(1, 0, 3, 4, 2).reshape(groups, b * ho * wo, og)
            if weight.requires_grad:
                gw = np.matmul(gmat.transpose(0, 2, 1), rows).reshape(weight.shape)
            if input.requires_grad:
                grows = np.matmul(gmat, wd.reshape(groups, og, cg * kh * kw))
                gcols = (grows.reshape(groups, b, ho, wo, cg, kh, kw)
                         .transpose(1, 0, 4, 2, 3, 5, 6).reshape(b, cin, ho, wo, kh, kw))
                gxp = np.zeros(xp.shape, dtype=xp.dtype)
                _col2im_add(gxp, gcols, stride, ho, wo)
                gx = gxp[:, :, pad:pad + h, pad:pad + w]
        if gx is not None and unbatched:
            gx = gx[0]
        if bias is None:
            return gx, gw
        return gx, gw, g4.sum(axis=(0, 2, 3))

    return Tensor._result(out[0] if unbatched else out, parents, bw, "conv2d")


def conv_transpose2d(input: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 1, pad: int = 0, output_padding: int = 0) -> Tensor:
    """Adjoint of ``conv2d``; ``weight`` is ``[Cin, Cout, kh, kw]``.

    Output size is ``(H - 1) * stride - 2 * pad + kh + output_padding``.
    """
    xd, unbatched = _batched(input, "conv_transpose2d")
    b, cin, h, w = xd.shape
    if weight.shape[0] != cin:
        raise DimensionError(f"conv_transpose2d: input {input.shape} vs weight {weight.shape}")
    _, cout, kh, kw = weight.shape
    ho = (h - 1) * stride - 2 * pad + kh + output_padding
    wo = (w - 1) * stride - 2 * pad + kw + output_padding
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv_transpose2d: non-positive output size {ho}x{wo}")
    hf, wf = (h - 1) * stride + kh + output_padding, (w - 1) * stride + kw + output_padding
    xrows = xd.transpose(0, 2, 3, 1).reshape(b * h * w, cin)
    wmat = weight.data.reshape(cin, cout * kh * kw)
    cols = (xrows @ wmat).reshape(b, h, w, cout, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    buf = np.zeros((b, cout, hf, wf), dtype=cols.dtype)
    _col2im_add(buf, cols, stride, h, w)
    out = buf[:, :, pad:pad + ho, pad:pad + wo]
    out = out + bias.data[:, None, None] if bias is not None else np.ascontiguousarray(out)
    parents = (input, weight) if bias is None else (input, weight, bias)

    def bw(g):
        g4 = g[None] if unbatched else g
        gbuf = np.zeros((b, cout, hf, wf), dtype=g4.dtype)
        gbuf[:, :, pad:pad + ho, pad:pad + wo] = g4
        grows = (_windows(gbuf, kh, kw, stride, h, w)
                 .transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, cout * kh * kw))
        gx = gw = None
        if input.requires_grad:
            gx = (grows @ wmat.T).reshape(b, h, w, cin).transpose(0, 3, 1, 2)
            gx = gx[0] if unbatched else gx
        if weight.requires_grad:
            gw = (xrows.T @ grows).reshape(weight.shape)
        if bias is None:
            return gx, gw
        return gx, gw, g4.sum(axis=(0, 2, 3))

    return Tensor._result(out[0] if unbatched else out, parents, bw, "conv_transpose2d")


def gelu(x: Tensor) -> Tensor:
    # tanh form: 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))
    d = x.data
    t = np.tanh(GELU_C * (d + 0.044715 * d ** 3))
    out = 0.5 * d * (1.0 + t)

    def bw(g):
        dt = (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * d * d)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * dt),)

    return Tensor._result(out, (x,), bw, "gelu")


def relu6(x: Tensor) -> Tensor:
    mask = (x.data > 0) & (x.data < 6)
    return Tensor._result(np.clip(x.data, 0, 6), (x,), lambda g: (g * mask,), "relu6")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "gelu":
        return gelu(x)
    if kind == "relu6":
        return relu6(x)
    if kind == "relu":
        return relu(x)
    if kind == "none":
        return x
    raise ContractError(f"unknown activation '{kind}'")


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    if eps <= 0:
        raise ContractError("layernorm eps must be positive")
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return Tensor._result(out, (x, gamma, beta), bw, "layernorm")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return Tensor._result(s, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),), "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return Tensor._result(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),), "log_softmax")


def cross_entropy(logits: Tensor, label) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch.

    ``logits`` is ``[C]`` with an int label, or ``[B, C]`` with B labels.
    """
    single = logits.ndim == 1
    z2 = logits.data[None] if single else logits.data
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    n, c = z2.shape
    if labels.shape != (n,):
        raise DimensionError(f"cross_entropy: {labels.shape[0]} labels for logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ContractError(f"cross_entropy: label out of range [0, {c})")
    z = z2 - z2.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.asarray((lse - z[rows, labels]).mean(), dtype=logits.dtype)

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        p *= g / n
        return (p[0] if single else p,)

    return Tensor._result(loss, (logits,), bw, "cross_entropy")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as ``[in, out]``."""
    out = x @ weight
    return out + bias if bias is not None else out


def scalar(value: float, like: Tensor) -> Tensor:
    return as_tensor(value, like)
