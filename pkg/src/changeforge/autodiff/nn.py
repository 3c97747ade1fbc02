"""Convolution, padding and normalization layers on (N, C, H, W) tensors."""

from __future__ import annotations

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _make

PAD_MODES = ("zeros", "reflect")
# stride-1 kernels with at least this many taps go through the FFT path
FFT_MIN_TAPS = 25


def _check_4d(x: Tensor, op: str) -> None:
    if x.data.ndim != 4:
        raise ValueError(f"{op}: expected (N, C, H, W) input, got shape {x.shape}")


def _reflect_matrix(n: int, p: int, dtype) -> np.ndarray:
    """(n + 2p, n) 0/1 matrix M with padded = M @ signal for reflect padding."""
    if p >= n:
        raise ValueError(f"reflect padding {p} needs extent > {p}, got {n}")
    idx = np.concatenate([np.arange(p, 0, -1), np.arange(n), np.arange(n - 2, n - 2 - p, -1)])
    m = np.zeros((n + 2 * p, n), dtype=dtype)
    m[np.arange(n + 2 * p), idx] = 1
    return m


def pad2d(x: Tensor, padding: int, mode: str = "zeros") -> Tensor:
    _check_4d(x, "pad2d")
    if mode not in PAD_MODES:
        raise ValueError(f"unknown padding mode {mode!r}")
    p = int(padding)
    if p < 0:
        raise ValueError("padding must be non-negative")
    if p == 0:
        return x
    _, _, h, w = x.shape
    if mode == "zeros":
        out = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))

        def bw(g):
            return (g[:, :, p:p + h, p:p + w],)
    else:
        out = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")
        mh = _reflect_matrix(h, p, x.dtype)
        mw = _reflect_matrix(w, p, x.dtype)

        def bw(g):
            # fold padded rows/cols back onto their sources
            gw = g @ mw
            return (np.einsum("ph,ncpw->nchw", mh, gw, optimize=True).astype(g.dtype),)

    return _make(out, (x,), f"pad_{mode}", bw)


def _conv_core(x: Tensor, w: Tensor, b, stride: int) -> Tensor:
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"conv2d: input has {c} channels, kernel expects {ci}")
    if h < kh or wd < kw:
        raise ValueError(f"conv2d: input {h}x{wd} smaller than kernel {kh}x{kw}")
    s = stride
    ho = (h - kh) // s + 1
    wo = (wd - kw) // s + 1
    # columns laid out (n, c*kh*kw, ho*wo) so the output lands directly in NCHW order
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)
    wmat = w.data.reshape(o, -1)
    out = wmat @ cols
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(n, o, ho, wo)

    def bw(g):
        g3 = g.reshape(n, o, ho * wo)
        gw = None
        if w.requires_grad:
            gw = np.einsum("nop,nkp->ok", g3, cols, optimize=True).reshape(w.shape)
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ g3).reshape(n, c, kh, kw, ho, wo)
            gx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += dcols[:, :, i, j]
        grads = [gx, gw]
        if b is not None:
            grads.append(g3.sum(axis=(0, 2)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, "conv2d", bw)


def _conv_fft(x: Tensor, w: Tensor, b) -> Tensor:
    """Stride-1 valid cross-correlation computed with real FFTs over the padded extent.

    The transform size equals the input extent, so the valid outputs never
    see circular wrap-around.
    """
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"conv2d: input has {c} channels, kernel expects {ci}")
    if h < kh or wd < kw:
        raise ValueError(f"conv2d: input {h}x{wd} smaller than kernel {kh}x{kw}")
    ho, wo = h - kh + 1, wd - kw + 1
    size = (h, wd)
    xf = scipy.fft.rfft2(x.data, s=size)
    wf = scipy.fft.rfft2(w.data[:, :, ::-1, ::-1], s=size)
    full = scipy.fft.irfft2(np.einsum("nchw,ochw->nohw", xf, wf), s=size)
    out = np.ascontiguousarray(full[:, :, kh - 1:, kw - 1:], dtype=x.dtype)
    if b is not None:
        out += b.data[None, :, None, None]

    def bw(g):
        gf = scipy.fft.rfft2(g, s=size)
        gx = gw = None
        if x.requires_grad:
            wf_plain = scipy.fft.rfft2(w.data, s=size)
            gx = scipy.fft.irfft2(np.einsum("nohw,ochw->nchw", gf, wf_plain), s=size).astype(x.dtype)
        if w.requires_grad:
            corr = scipy.fft.irfft2(np.einsum("nohw,nchw->ochw", np.conj(gf), xf), s=size)
            gw = np.ascontiguousarray(corr[:, :, :kh, :kw], dtype=w.dtype)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, "conv2d_fft", bw)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, padding_mode: str = "zeros") -> Tensor:
    """Cross-correlation with an (out, in, kh, kw) kernel."""
    _check_4d(x, "conv2d")
    if int(stride) < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if weight.data.ndim != 4:
        raise ValueError("conv2d kernel must be (out, in, kh, kw)")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError("conv2d bias must have one entry per output channel")
    xp = pad2d(x, padding, padding_mode)
    if int(stride) == 1 and weight.shape[2] * weight.shape[3] >= FFT_MIN_TAPS:
        return _conv_fft(xp, weight, bias)
    return _conv_core(xp, weight, bias, int(stride))


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
                     padding: int = 0, output_padding: int = 0) -> Tensor:
    """Transposed convolution with an (in, out, kh, kw) kernel.

    Output extent is ``(H - 1) * stride - 2 * padding + kh + output_padding``.
    """
    _check_4d(x, "conv_transpose2d")
    s, p, op_ = int(stride), int(padding), int(output_padding)
    if s < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if not 0 <= op_ < s:
        raise ValueError("output_padding must be in [0, stride)")
    n, c, h, wd = x.shape
    ci, o, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"conv_transpose2d: input has {c} channels, kernel expects {ci}")
    hf = (h - 1) * s + kh
    wf = (wd - 1) * s + kw
    ho = hf - 2 * p + op_
    wo = wf - 2 * p + op_
    if ho < 1 or wo < 1:
        raise ValueError("conv_transpose2d: empty output")
    if bias is not None and bias.shape != (o,):
        raise ValueError("conv_transpose2d bias must have one entry per output channel")

    xmat = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    wmat = weight.data.reshape(c, -1)
    cols = (xmat @ wmat).reshape(n, h, wd, o, kh, kw)
    # full canvas with room for output_padding on the bottom/right
    full = np.zeros((n, o, hf + op_, wf + op_), dtype=np.result_type(x.data, weight.data))
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + s * (h - 1) + 1:s, j:j + s * (wd - 1) + 1:s] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(full[:, :, p:p + ho, p:p + wo])
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(g):
        gfull = np.zeros_like(full)
        gfull[:, :, p:p + ho, p:p + wo] = g
        dcols = np.empty((n, h, wd, o, kh, kw), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dcols[:, :, :, :, i, j] = gfull[:, :, i:i + s * (h - 1) + 1:s,
                                                j:j + s * (wd - 1) + 1:s].transpose(0, 2, 3, 1)
        dmat = dcols.reshape(n * h * wd, o * kh * kw)
        gx = (dmat @ wmat.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2)
        gw = (xmat.T @ dmat).reshape(weight.shape)
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, "conv_transpose2d", bw)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each (sample, channel) plane to zero mean and unit variance."""
    _check_4d(x, "instance_norm")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    y = xc * inv

    def bw(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gym = (g * y).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _make(y, (x,), "instance_norm", bw)
