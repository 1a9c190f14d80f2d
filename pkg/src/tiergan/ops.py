"""Differentiable primitives used by the generator and discriminator stacks.

Image tensors are laid out NCHW.  Convolution is cross-correlation with
zero padding; the transposed convolution is implemented as its exact
adjoint so that ``<conv2d(x), y> == <x, conv2d_transpose(y)>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GeometryError, ShapeError
from .tensor import Function, Tensor, as_tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _pair(v) -> Tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


@dataclass(frozen=True)
class ConvGeometry:
    kernel: Tuple[int, int]
    stride: Tuple[int, int] = (1, 1)
    padding: Tuple[int, int] = (0, 0)
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "padding", _pair(self.padding))
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise GeometryError(f"invalid geometry {self}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise GeometryError(f"channel counts must be positive: {self}")

    def conv_out(self, h: int, w: int) -> Tuple[int, int]:
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.padding
        ho = (h + 2 * ph - kh) // sh + 1
        wo = (w + 2 * pw - kw) // sw + 1
        if h + 2 * ph < kh or w + 2 * pw < kw or ho < 1 or wo < 1:
            raise GeometryError(
                f"conv on {h}x{w} with kernel {self.kernel}, stride {self.stride}, "
                f"padding {self.padding} has no valid output"
            )
        return ho, wo

    def transpose_out(self, h: int, w: int) -> Tuple[int, int]:
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.padding
        ho = (h - 1) * sh - 2 * ph + kh
        wo = (w - 1) * sw - 2 * pw + kw
        if ho < 1 or wo < 1:
            raise GeometryError(
                f"transposed conv on {h}x{w} with kernel {self.kernel}, stride {self.stride}, "
                f"padding {self.padding} gives non-positive output {ho}x{wo}"
            )
        return ho, wo


# ---------------------------------------------------------------------------
# raw array kernels (no autodiff)
# ---------------------------------------------------------------------------

def _windows(x: np.ndarray, kernel, stride, padding, out_hw) -> np.ndarray:
    """(N, C, Ho, Wo, kh, kw) view of the padded input."""
    (kh, kw), (sh, sw), (ph, pw) = kernel, stride, padding
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    ho, wo = out_hw
    return win[:, :, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]


def conv2d_array(x, w, stride, padding) -> np.ndarray:
    kh, kw = w.shape[2:]
    geom = ConvGeometry((kh, kw), stride, padding, w.shape[1], w.shape[0])
    ho, wo = geom.conv_out(*x.shape[2:])
    win = _windows(x, geom.kernel, geom.stride, geom.padding, (ho, wo))
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_input_grad(gy, w, in_hw, stride, padding) -> np.ndarray:
    """Adjoint of :func:`conv2d_array` with respect to its input."""
    (sh, sw), (ph, pw) = _pair(stride), _pair(padding)
    n, _, ho, wo = gy.shape
    c, kh, kw = w.shape[1:]
    h, wd = in_hw
    # cols[n, ho, wo, c, i, j] = sum_o gy[n, o, ho, wo] * w[o, c, i, j]
    cols = np.tensordot(gy, w, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)
    gx = np.zeros((n, c, h + 2 * ph, wd + 2 * pw), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += cols[:, :, i, j]
    return gx[:, :, ph : ph + h, pw : pw + wd]


def conv2d_weight_grad(x, gy, kernel, stride, padding) -> np.ndarray:
    ho, wo = gy.shape[2:]
    win = _windows(x, _pair(kernel), _pair(stride), _pair(padding), (ho, wo))
    return np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))  # O, C, kh, kw


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural
# ---------------------------------------------------------------------------

class Add(Function):
    name = "add"

    @staticmethod
    def forward(ctx, a, b):
        ctx.shapes = (a.shape, b.shape)
        return a + b

    @staticmethod
    def backward(ctx, g):
        return _unbroadcast(g, ctx.shapes[0]), _unbroadcast(g, ctx.shapes[1])


class Mul(Function):
    name = "mul"

    @staticmethod
    def forward(ctx, a, b):
        ctx.a, ctx.b = a, b
        return a * b

    @staticmethod
    def backward(ctx, g):
        return _unbroadcast(g * ctx.b, ctx.a.shape), _unbroadcast(g * ctx.a, ctx.b.shape)


class Neg(Function):
    name = "neg"

    @staticmethod
    def forward(ctx, a):
        return -a

    @staticmethod
    def backward(ctx, g):
        return -g


class Sum(Function):
    name = "sum"

    @staticmethod
    def forward(ctx, a):
        ctx.shape = a.shape
        return np.asarray(a.sum(), dtype=a.dtype)

    @staticmethod
    def backward(ctx, g):
        return np.broadcast_to(g, ctx.shape).copy()


class Mean(Function):
    name = "mean"

    @staticmethod
    def forward(ctx, a):
        ctx.shape = a.shape
        return np.asarray(a.mean(), dtype=a.dtype)

    @staticmethod
    def backward(ctx, g):
        n = int(np.prod(ctx.shape))
        return np.broadcast_to(g / n, ctx.shape).copy()


class Log(Function):
    name = "log"

    @staticmethod
    def forward(ctx, a):
        ctx.a = a
        return np.log(a)

    @staticmethod
    def backward(ctx, g):
        return g / ctx.a


class Reshape(Function):
    name = "reshape"

    @staticmethod
    def forward(ctx, a, shape):
        ctx.shape = a.shape
        return a.reshape(shape)

    @staticmethod
    def backward(ctx, g):
        return g.reshape(ctx.shape)


def add(a, b) -> Tensor:
    return Add.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def neg(a) -> Tensor:
    return Neg.apply(a)


def sum(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return Sum.apply(a)


def mean(a) -> Tensor:
    return Mean.apply(a)


def log(a) -> Tensor:
    return Log.apply(a)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}")
    return Reshape.apply(a, shape=shape)


def flatten(a) -> Tensor:
    a = as_tensor(a)
    return reshape(a, (a.shape[0], int(np.prod(a.shape[1:]))))


# ---------------------------------------------------------------------------
# layer primitives
# ---------------------------------------------------------------------------

class Dense(Function):
    name = "dense"

    @staticmethod
    def forward(ctx, x, w, b):
        ctx.x, ctx.w = x, w
        return x @ w + b

    @staticmethod
    def backward(ctx, g):
        nx, nw, nb = ctx.needs_grad
        gx = g @ ctx.w.T if nx else None
        gw = ctx.x.T @ g if nw else None
        gb = g.sum(axis=0) if nb else None
        return gx, gw, gb


def dense_forward(x, w, b) -> Tensor:
    """``y[i, j] = sum_k x[i, k] * w[k, j] + b[j]``."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1 or x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(f"dense shapes do not conform: x{x.shape}, W{w.shape}, b{b.shape}")
    return Dense.apply(x, w, b)


class Conv2d(Function):
    name = "conv2d"

    @staticmethod
    def forward(ctx, x, w, b, stride, padding):
        ctx.x, ctx.w, ctx.stride, ctx.padding = x, w, stride, padding
        return conv2d_array(x, w, stride, padding) + b[None, :, None, None]

    @staticmethod
    def backward(ctx, g):
        nx, nw, nb = ctx.needs_grad
        gx = conv2d_input_grad(g, ctx.w, ctx.x.shape[2:], ctx.stride, ctx.padding) if nx else None
        gw = conv2d_weight_grad(ctx.x, g, ctx.w.shape[2:], ctx.stride, ctx.padding) if nw else None
        gb = g.sum(axis=(0, 2, 3)) if nb else None
        return gx, gw, gb


class ConvTranspose2d(Function):
    name = "conv2d_transpose"

    @staticmethod
    def forward(ctx, x, w, b, stride, padding, out_hw):
        ctx.x, ctx.w, ctx.stride, ctx.padding = x, w, stride, padding
        # w is (C_in, C_out, kh, kw): the conv kernel mapping C_out -> C_in
        y = conv2d_input_grad(x, w, out_hw, stride, padding)
        return y + b[None, :, None, None]

    @staticmethod
    def backward(ctx, g):
        nx, nw, nb = ctx.needs_grad
        gx = conv2d_array(g, ctx.w, ctx.stride, ctx.padding) if nx else None
        gw = conv2d_weight_grad(g, ctx.x, ctx.w.shape[2:], ctx.stride, ctx.padding) if nw else None
        gb = g.sum(axis=(0, 2, 3)) if nb else None
        return gx, gw, gb


def _check_conv_inputs(x, k, b, c_in_axis, c_out_axis, geom, what):
    if x.ndim != 4 or k.ndim != 4 or b.ndim != 1:
        raise ShapeError(f"{what} expects x[N,C,H,W], kernel 4-d, bias 1-d; got {x.shape}, {k.shape}, {b.shape}")
    if x.shape[1] != k.shape[c_in_axis] or k.shape[c_out_axis] != b.shape[0]:
        raise ShapeError(f"{what} channel mismatch: x{x.shape}, kernel{k.shape}, bias{b.shape}")
    if geom is not None and tuple(k.shape[2:]) != geom.kernel:
        raise ShapeError(f"{what} kernel {k.shape[2:]} does not match geometry {geom.kernel}")


def conv2d_forward(x, k, b, geom: Optional[ConvGeometry] = None, *, stride=1, padding=0) -> Tensor:
    x, k, b = as_tensor(x), as_tensor(k), as_tensor(b)
    _check_conv_inputs(x, k, b, 1, 0, geom, "conv2d")
    if geom is None:
        geom = ConvGeometry(k.shape[2:], stride, padding, k.shape[1], k.shape[0])
    geom.conv_out(*x.shape[2:])
    return Conv2d.apply(x, k, b, stride=geom.stride, padding=geom.padding)


def conv2d_transpose_forward(x, k, b, geom: Optional[ConvGeometry] = None, *, stride=1, padding=0) -> Tensor:
    x, k, b = as_tensor(x), as_tensor(k), as_tensor(b)
    _check_conv_inputs(x, k, b, 0, 1, geom, "conv2d_transpose")
    if geom is None:
        geom = ConvGeometry(k.shape[2:], stride, padding, k.shape[0], k.shape[1])
    out_hw = geom.transpose_out(*x.shape[2:])
    return ConvTranspose2d.apply(x, k, b, stride=geom.stride, padding=geom.padding, out_hw=out_hw)


class LeakyReLU(Function):
    name = "leaky_relu"

    @staticmethod
    def forward(ctx, x, alpha):
        ctx.mask, ctx.alpha = x >= 0, alpha
        return np.where(ctx.mask, x, alpha * x).astype(x.dtype, copy=False)

    @staticmethod
    def backward(ctx, g):
        return np.where(ctx.mask, g, ctx.alpha * g).astype(g.dtype, copy=False)


def leaky_relu(x, alpha: float = 0.2) -> Tensor:
    return LeakyReLU.apply(x, alpha=alpha)


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    # branch on sign so exp never sees a large positive argument
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


class Sigmoid(Function):
    name = "sigmoid"

    @staticmethod
    def forward(ctx, x):
        ctx.y = sigmoid_array(x)
        return ctx.y

    @staticmethod
    def backward(ctx, g):
        return g * ctx.y * (1 - ctx.y)


def sigmoid(x) -> Tensor:
    return Sigmoid.apply(x)


class BatchNormState:
    """Running mean/variance for one batch-norm layer."""

    def __init__(self, channels: int, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)


def _bn_axes(ndim):
    return (0,) + tuple(range(2, ndim))


def _bn_view(v, ndim):
    return v.reshape((1, -1) + (1,) * (ndim - 2))


class BatchNormTrain(Function):
    name = "batchnorm"

    @staticmethod
    def forward(ctx, x, gamma, beta, eps):
        axes = _bn_axes(x.ndim)
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - _bn_view(mu, x.ndim)) * _bn_view(inv_std, x.ndim)
        ctx.xhat, ctx.inv_std, ctx.gamma, ctx.axes = xhat, inv_std.astype(x.dtype), gamma, axes
        return (xhat * _bn_view(gamma, x.ndim) + _bn_view(beta, x.ndim)).astype(x.dtype, copy=False)

    @staticmethod
    def backward(ctx, g):
        nx, ng, nb = ctx.needs_grad
        nd, axes, xhat = g.ndim, ctx.axes, ctx.xhat
        ggamma = (g * xhat).sum(axis=axes) if ng else None
        gbeta = g.sum(axis=axes) if nb else None
        gx = None
        if nx:
            m = g.size // g.shape[1]
            dxhat = g * _bn_view(ctx.gamma, nd)
            s1 = _bn_view(dxhat.sum(axis=axes), nd)
            s2 = _bn_view((dxhat * xhat).sum(axis=axes), nd)
            gx = _bn_view(ctx.inv_std, nd) / m * (m * dxhat - s1 - xhat * s2)
        return gx, ggamma, gbeta


class BatchNormInfer(Function):
    name = "batchnorm"

    @staticmethod
    def forward(ctx, x, gamma, beta, mean, var, eps):
        nd = x.ndim
        inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
        xhat = (x - _bn_view(mean, nd)) * _bn_view(inv_std, nd)
        ctx.xhat, ctx.inv_std, ctx.gamma, ctx.axes = xhat, inv_std, gamma, _bn_axes(nd)
        return (xhat * _bn_view(gamma, nd) + _bn_view(beta, nd)).astype(x.dtype, copy=False)

    @staticmethod
    def backward(ctx, g):
        nx, ng, nb, _, _ = ctx.needs_grad
        nd = g.ndim
        gx = g * _bn_view(ctx.gamma * ctx.inv_std, nd) if nx else None
        ggamma = (g * ctx.xhat).sum(axis=ctx.axes) if ng else None
        gbeta = g.sum(axis=ctx.axes) if nb else None
        return gx, ggamma, gbeta, None, None


def batchnorm_forward(x, gamma, beta, mode: str = "train", state: Optional[BatchNormState] = None,
                      eps: float = BN_EPS, momentum: float = BN_MOMENTUM) -> Tensor:
    """Per-channel batch normalisation over every axis except axis 1.

    In ``train`` mode the batch statistics are used and, if ``state`` is
    given, folded into its running averages as
    ``running = momentum * running + (1 - momentum) * batch``.
    ``infer`` mode normalises with the running statistics instead.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim < 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm shapes do not conform: x{x.shape}, gamma{gamma.shape}, beta{beta.shape}")
    if mode == "train":
        if x.shape[0] < 2:
            raise ShapeError(f"batchnorm in train mode needs batch >= 2, got {x.shape[0]}")
        out = BatchNormTrain.apply(x, gamma, beta, eps=eps)
        if state is not None:
            axes = _bn_axes(x.ndim)
            ctx_mean, ctx_var = x.data.mean(axis=axes), x.data.var(axis=axes)
            state.running_mean = (momentum * state.running_mean + (1 - momentum) * ctx_mean).astype(state.running_mean.dtype)
            state.running_var = (momentum * state.running_var + (1 - momentum) * ctx_var).astype(state.running_var.dtype)
        return out
    if mode == "infer":
        if state is None:
            raise ValueError("infer mode needs running statistics")
        return BatchNormInfer.apply(x, gamma, beta, Tensor(state.running_mean.astype(x.dtype)),
                                    Tensor(state.running_var.astype(x.dtype)), eps=eps)
    raise ValueError(f"unknown batchnorm mode {mode!r}")


class UpsampleNearest(Function):
    name = "upsample_nearest"

    @staticmethod
    def forward(ctx, x, factor):
        ctx.factor = factor
        return np.repeat(np.repeat(x, factor, axis=2), factor, axis=3)

    @staticmethod
    def backward(ctx, g):
        f = ctx.factor
        n, c, h, w = g.shape
        return g.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5))


def upsample_nearest(x, factor: int) -> Tensor:
    x = as_tensor(x)
    if int(factor) < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if x.ndim != 4:
        raise ShapeError(f"upsample expects NCHW, got {x.shape}")
    return UpsampleNearest.apply(x, factor=int(factor))


class DownsampleNearest(Function):
    name = "downsample_nearest"

    @staticmethod
    def forward(ctx, x, factor):
        ctx.factor, ctx.shape = factor, x.shape
        return np.ascontiguousarray(x[:, :, ::factor, ::factor])

    @staticmethod
    def backward(ctx, g):
        gx = np.zeros(ctx.shape, dtype=g.dtype)
        gx[:, :, :: ctx.factor, :: ctx.factor] = g
        return gx


def downsample_nearest(x, factor: int) -> Tensor:
    """Keep the top-left sample of every ``factor`` x ``factor`` block."""
    x = as_tensor(x)
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    if x.ndim != 4:
        raise ShapeError(f"downsample expects NCHW, got {x.shape}")
    h, w = x.shape[2:]
    if h % factor or w % factor:
        raise ShapeError(f"{h}x{w} is not divisible by downsample factor {factor}")
    return DownsampleNearest.apply(x, factor=factor)
