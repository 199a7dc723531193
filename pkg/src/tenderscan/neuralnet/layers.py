"""Layers with hand-written forward and backward passes.

Tensors are float64 numpy arrays in NCHW layout. A layer caches what its
backward pass needs only when called with ``train=True``; inference-mode
forward passes leave the layer untouched and may run concurrently.

Parameters are kept on the float32 grid (values are float64 arrays holding
float32-representable numbers) so saved weight files reproduce the live
model exactly. Arithmetic is done in float64.
"""
from __future__ import annotations

import math
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch

Shape = Tuple[int, ...]


def to_f32_grid(a: np.ndarray) -> np.ndarray:
    """Snap ``a`` (in place) to the nearest float32 values."""
    a[...] = a.astype(np.float32).astype(np.float64)
    return a


def same_padding(size: int, k: int, stride: int) -> Tuple[int, int, int]:
    """Output size and (before, after) padding for SAME convolution."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def valid_size(size: int, k: int, stride: int) -> int:
    return (size - k) // stride + 1


class Layer:
    """Base class. Subclasses fill ``params`` and may hold sublayers."""

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, in_shape: Shape) -> Shape:
        raise NotImplementedError

    def sublayers(self) -> List[Tuple[str, "Layer"]]:
        return []

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a training forward pass")
        return self._cache

    # tree walking ------------------------------------------------------
    def walk(self, prefix: str = "") -> Iterator[Tuple[str, "Layer"]]:
        yield prefix, self
        for name, sub in self.sublayers():
            yield from sub.walk(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, "Layer", str]]:
        for path, layer in self.walk(prefix):
            for key in layer.params:
                yield (f"{path}.{key}" if path else key), layer, key

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, "Layer", str]]:
        for path, layer in self.walk(prefix):
            for key in layer.buffers:
                yield (f"{path}.{key}" if path else key), layer, key

    def zero_grads(self):
        for _, layer in self.walk():
            for k, p in layer.params.items():
                layer.grads[k] = np.zeros_like(p)


def he_uniform(rng: np.random.Generator, shape: Shape, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return to_f32_grid(rng.uniform(-limit, limit, size=shape))


def _pad_nchw(x: np.ndarray, pads: Tuple[int, int, int, int], value: float = 0.0) -> np.ndarray:
    top, bottom, left, right = pads
    if not any(pads):
        return x
    return np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)), constant_values=value)


class _Spatial(Layer):
    """Shared window/padding bookkeeping for conv and pooling layers."""

    def __init__(self, kernel: int, stride: int, padding: str):
        super().__init__()
        if padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
        self.kernel = kernel
        self.stride = stride
        self.padding = padding

    def _geometry(self, h: int, w: int):
        k, s = self.kernel, self.stride
        if self.padding == "same":
            ho, pt, pb = same_padding(h, k, s)
            wo, pl, pr = same_padding(w, k, s)
        else:
            if h < k or w < k:
                raise ShapeMismatch(f"{h}x{w} input smaller than {k}x{k} window")
            ho, wo = valid_size(h, k, s), valid_size(w, k, s)
            pt = pb = pl = pr = 0
        return ho, wo, (pt, pb, pl, pr)

    def _tap(self, xp: np.ndarray, i: int, j: int, ho: int, wo: int) -> np.ndarray:
        s = self.stride
        return xp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s]

    def output_shape(self, in_shape: Shape) -> Shape:
        c, h, w = in_shape
        ho, wo, _ = self._geometry(h, w)
        return (self._out_channels(c), ho, wo)

    def _out_channels(self, c: int) -> int:
        return c


class Conv2D(_Spatial):
    """``out[n,f] = b[f] + sum_c xcorr(in[n,c], K[f,c])`` with stride and padding."""

    def __init__(self, in_channels: int, filters: int, kernel: int = 3, stride: int = 1,
                 padding: str = "same", use_bias: bool = True):
        super().__init__(kernel, stride, padding)
        self.in_channels = in_channels
        self.filters = filters
        self.params["kernel"] = np.zeros((filters, in_channels, kernel, kernel))
        if use_bias:
            self.params["bias"] = np.zeros(filters)

    def init_params(self, rng):
        k = self.kernel
        self.params["kernel"] = he_uniform(rng, self.params["kernel"].shape, self.in_channels * k * k)
        if "bias" in self.params:
            self.params["bias"] = np.zeros(self.filters)

    def _out_channels(self, c):
        if c != self.in_channels:
            raise ShapeMismatch(f"conv expects {self.in_channels} channels, got {c}")
        return self.filters

    def _columns(self, x):
        n, c, h, w = x.shape
        k, s = self.kernel, self.stride
        ho, wo, pads = self._geometry(h, w)
        if k == 1 and not any(pads):
            xs = x[:, :, ::s, ::s]
            return xs.transpose(0, 2, 3, 1).reshape(n * ho * wo, c), ho, wo, pads
        xp = _pad_nchw(x, pads)
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        return cols, ho, wo, pads

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"conv expects (N, {self.in_channels}, H, W), got {x.shape}")
        n = x.shape[0]
        cols, ho, wo, pads = self._columns(x)
        wmat = self.params["kernel"].reshape(self.filters, -1)
        out = cols @ wmat.T
        if "bias" in self.params:
            out += self.params["bias"]
        if train:
            self._cache = (x.shape, cols, ho, wo, pads)
        return out.reshape(n, ho, wo, self.filters).transpose(0, 3, 1, 2)

    def backward(self, dout):
        xshape, cols, ho, wo, pads = self._need_cache()
        n, c, h, w = xshape
        k, s, f = self.kernel, self.stride, self.filters
        d2 = dout.transpose(0, 2, 3, 1).reshape(-1, f)
        self.grads["kernel"] = (d2.T @ cols).reshape(self.params["kernel"].shape)
        if "bias" in self.params:
            self.grads["bias"] = d2.sum(axis=0)
        dcols = d2 @ self.params["kernel"].reshape(f, -1)
        if k == 1 and not any(pads):
            dx = np.zeros(xshape)
            dx[:, :, ::s, ::s] = dcols.reshape(n, ho, wo, c).transpose(0, 3, 1, 2)
            return dx
        dcols = dcols.reshape(n, ho, wo, c, k, k)
        pt, pb, pl, pr = pads
        dxp = np.zeros((n, c, h + pt + pb, w + pl + pr))
        for i in range(k):
            for j in range(k):
                self._tap(dxp, i, j, ho, wo)[...] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, pt:pt + h, pl:pl + w]


class DepthwiseConv2D(_Spatial):
    """Per-channel ``k x k`` cross-correlation (depth multiplier 1)."""

    def __init__(self, channels: int, kernel: int = 3, stride: int = 1, padding: str = "same"):
        super().__init__(kernel, stride, padding)
        self.channels = channels
        self.params["kernel"] = np.zeros((channels, kernel, kernel))

    def init_params(self, rng):
        k = self.kernel
        self.params["kernel"] = he_uniform(rng, self.params["kernel"].shape, k * k)

    def _out_channels(self, c):
        if c != self.channels:
            raise ShapeMismatch(f"depthwise conv expects {self.channels} channels, got {c}")
        return c

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeMismatch(f"depthwise conv expects (N, {self.channels}, H, W), got {x.shape}")
        n, c, h, w = x.shape
        ho, wo, pads = self._geometry(h, w)
        xp = _pad_nchw(x, pads)
        kern = self.params["kernel"]
        out = np.zeros((n, c, ho, wo))
        for i in range(self.kernel):
            for j in range(self.kernel):
                out += self._tap(xp, i, j, ho, wo) * kern[:, i, j][None, :, None, None]
        if train:
            self._cache = (x.shape, xp, ho, wo, pads)
        return out

    def backward(self, dout):
        xshape, xp, ho, wo, pads = self._need_cache()
        n, c, h, w = xshape
        kern = self.params["kernel"]
        dk = np.zeros_like(kern)
        dxp = np.zeros_like(xp)
        for i in range(self.kernel):
            for j in range(self.kernel):
                dk[:, i, j] = (dout * self._tap(xp, i, j, ho, wo)).sum(axis=(0, 2, 3))
                self._tap(dxp, i, j, ho, wo)[...] += dout * kern[:, i, j][None, :, None, None]
        self.grads["kernel"] = dk
        pt, _, pl, _ = pads
        return dxp[:, :, pt:pt + h, pl:pl + w]


class SeparableConv2D(Layer):
    """Depthwise ``k x k`` convolution followed by a pointwise 1x1 mix."""

    def __init__(self, in_channels: int, filters: int, kernel: int = 3, stride: int = 1,
                 padding: str = "same", use_bias: bool = True):
        super().__init__()
        self.depthwise = DepthwiseConv2D(in_channels, kernel, stride, padding)
        self.pointwise = Conv2D(in_channels, filters, 1, 1, "valid", use_bias)

    def sublayers(self):
        return [("depthwise", self.depthwise), ("pointwise", self.pointwise)]

    def init_params(self, rng):
        self.depthwise.init_params(rng)
        self.pointwise.init_params(rng)

    def output_shape(self, in_shape):
        return self.pointwise.output_shape(self.depthwise.output_shape(in_shape))

    def forward(self, x, train=False):
        return self.pointwise.forward(self.depthwise.forward(x, train), train)

    def backward(self, dout):
        return self.depthwise.backward(self.pointwise.backward(dout))


class BatchNorm(Layer):
    """Per-channel batch normalisation for (N, C) or (N, C, H, W) input."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def init_params(self, rng):
        self.params["gamma"] = np.ones(self.channels)
        self.params["beta"] = np.zeros(self.channels)
        self.buffers["running_mean"] = np.zeros(self.channels)
        self.buffers["running_var"] = np.ones(self.channels)

    def output_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ShapeMismatch(f"batchnorm expects {self.channels} channels, got {in_shape[0]}")
        return in_shape

    def _bshape(self, x):
        return (1, self.channels) + (1,) * (x.ndim - 2)

    def forward(self, x, train=False):
        if x.ndim not in (2, 4) or x.shape[1] != self.channels:
            raise ShapeMismatch(f"batchnorm expects {self.channels} channels, got {x.shape}")
        axes = (0,) if x.ndim == 2 else (0, 2, 3)
        bs = self._bshape(x)
        gamma = self.params["gamma"].reshape(bs)
        beta = self.params["beta"].reshape(bs)
        if train:
            mean = x.mean(axis=axes)
            centred = x - mean.reshape(bs)
            var = (centred * centred).mean(axis=axes)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = centred * inv_std.reshape(bs)
            m = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm[...] = m * rm + (1 - m) * mean
            rv[...] = m * rv + (1 - m) * var
            to_f32_grid(rm)
            to_f32_grid(rv)
            self._cache = (xhat, inv_std, axes, bs)
            return gamma * xhat + beta
        inv_std = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
        xhat = (x - self.buffers["running_mean"].reshape(bs)) * inv_std.reshape(bs)
        return gamma * xhat + beta

    def backward(self, dout):
        xhat, inv_std, axes, bs = self._need_cache()
        m = dout.size // self.channels
        self.grads["gamma"] = (dout * xhat).sum(axis=axes)
        self.grads["beta"] = dout.sum(axis=axes)
        dxhat = dout * self.params["gamma"].reshape(bs)
        sum_d = dxhat.sum(axis=axes).reshape(bs)
        sum_dx = (dxhat * xhat).sum(axis=axes).reshape(bs)
        return (inv_std.reshape(bs) / m) * (m * dxhat - sum_d - xhat * sum_dx)


class MaxPool2D(_Spatial):
    """Window maximum; gradient goes to the first maximum in scan order."""

    def __init__(self, window: int = 2, stride: Optional[int] = None, padding: str = "same"):
        super().__init__(window, stride or window, padding)

    def forward(self, x, train=False):
        if x.ndim != 4:
            raise ShapeMismatch(f"maxpool expects rank-4 input, got {x.shape}")
        n, c, h, w = x.shape
        ho, wo, pads = self._geometry(h, w)
        xp = _pad_nchw(x, pads, -np.inf)
        k = self.kernel
        if not train:
            out = np.full((n, c, ho, wo), -np.inf)
            for i in range(k):
                for j in range(k):
                    np.maximum(out, self._tap(xp, i, j, ho, wo), out=out)
            return out
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::self.stride, ::self.stride][:, :, :ho, :wo]
        flat = win.reshape(n, c, ho, wo, k * k)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, xp.shape, arg, ho, wo, pads)
        return out

    def backward(self, dout):
        xshape, xpshape, arg, ho, wo, pads = self._need_cache()
        k = self.kernel
        dxp = np.zeros(xpshape)
        for i in range(k):
            for j in range(k):
                self._tap(dxp, i, j, ho, wo)[...] += np.where(arg == i * k + j, dout, 0.0)
        pt, _, pl, _ = pads
        return dxp[:, :, pt:pt + xshape[2], pl:pl + xshape[3]]


class GlobalAvgPool(Layer):
    def output_shape(self, in_shape):
        return (in_shape[0],)

    def forward(self, x, train=False):
        if x.ndim != 4:
            raise ShapeMismatch(f"global average pooling expects rank-4 input, got {x.shape}")
        if train:
            self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dout):
        n, c, h, w = self._need_cache()
        return np.broadcast_to((dout / (h * w))[:, :, None, None], (n, c, h, w)).copy()


class Flatten(Layer):
    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._need_cache())


class Dense(Layer):
    """``out = x @ W + b`` on (N, D) input."""

    def __init__(self, in_features: int, units: int, use_bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.units = units
        self.params["kernel"] = np.zeros((in_features, units))
        if use_bias:
            self.params["bias"] = np.zeros(units)

    def init_params(self, rng):
        self.params["kernel"] = he_uniform(rng, (self.in_features, self.units), self.in_features)
        if "bias" in self.params:
            self.params["bias"] = np.zeros(self.units)

    def output_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise ShapeMismatch(f"dense expects ({self.in_features},), got {in_shape}")
        return (self.units,)

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(f"dense expects (N, {self.in_features}), got {x.shape}")
        out = x @ self.params["kernel"]
        if "bias" in self.params:
            out = out + self.params["bias"]
        if train:
            self._cache = x
        return out

    def backward(self, dout):
        x = self._need_cache()
        self.grads["kernel"] = x.T @ dout
        if "bias" in self.params:
            self.grads["bias"] = dout.sum(axis=0)
        return dout @ self.params["kernel"].T


class Activation(Layer):
    KINDS = ("relu", "tanh", "linear")

    def __init__(self, kind: str = "relu"):
        super().__init__()
        if kind not in self.KINDS:
            raise ValueError(f"unknown activation {kind!r}; choose from {self.KINDS}")
        self.kind = kind

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False):
        if self.kind == "relu":
            out = np.maximum(x, 0.0)
            if train:
                self._cache = x > 0
        elif self.kind == "tanh":
            out = np.tanh(x)
            if train:
                self._cache = out
        else:
            out = x
            if train:
                self._cache = True
        return out

    def backward(self, dout):
        cache = self._need_cache()
        if self.kind == "relu":
            return dout * cache
        if self.kind == "tanh":
            return dout * (1.0 - cache * cache)
        return dout


def ReLU() -> Activation:
    return Activation("relu")


def concat_channels(inputs: Sequence[np.ndarray]) -> np.ndarray:
    if not inputs:
        raise ShapeMismatch("nothing to concatenate")
    ref = inputs[0].shape
    for t in inputs[1:]:
        if t.ndim != len(ref) or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeMismatch(f"cannot concatenate {t.shape} with {ref} along channels")
    return np.concatenate(inputs, axis=1)


def split_channels(grad: np.ndarray, sizes: Sequence[int]) -> List[np.ndarray]:
    """Inverse of :func:`concat_channels` for the gradient."""
    if sum(sizes) != grad.shape[1]:
        raise ShapeMismatch(f"channel sizes {list(sizes)} do not sum to {grad.shape[1]}")
    offsets = np.cumsum(sizes)[:-1]
    return [g.copy() for g in np.split(grad, offsets, axis=1)]


class Sequential(Layer):
    def __init__(self, layers: Sequence[Layer] = (), names: Optional[Sequence[str]] = None):
        super().__init__()
        self.layers = list(layers)
        self.names = list(names) if names is not None else [str(i) for i in range(len(self.layers))]

    def sublayers(self):
        return list(zip(self.names, self.layers))

    def init_params(self, rng):
        for layer in self.layers:
            layer.init_params(rng)

    def output_shape(self, in_shape):
        for layer in self.layers:
            in_shape = layer.output_shape(in_shape)
        return in_shape

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout
