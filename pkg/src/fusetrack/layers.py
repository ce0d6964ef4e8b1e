"""Differentiable layer primitives on (H, W, C) NumPy arrays.

Every layer is a small stateful object: ``forward`` caches what the
backward pass needs, ``backward`` accumulates parameter gradients in
place and returns the gradient w.r.t. its input.  Two network branches
can share one parameter set via ``share()`` (the copies alias the same
parameter/gradient arrays but keep independent forward caches).

All arithmetic defaults to float64; pass ``dtype=np.float32`` at
construction for the single-precision path.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_size(n: int, kernel: int, stride: int, padding: int = 0) -> int:
    """Valid-mode output size: floor((n + 2*padding - kernel)/stride) + 1."""
    out = (n + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ValueError(
            f"window of size {kernel} (stride {stride}) does not fit into "
            f"input of size {n} with padding {padding}"
        )
    return out


@dataclass
class LayerSpec:
    """Declarative description of one layer, used by the shape calculator."""

    kind: str  # conv | maxpool | batchnorm | fullyconnected | relu | sigmoid | concat | crop | bilinearsample
    kernel: int = 1
    stride: int = 1
    channels_out: int = 0
    padding: int = 0

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1:
            raise ValueError("kernel and stride must be >= 1")


def trace_shapes(specs, in_shape):
    """Predict the (H, W, C) shape after each spec, independently of any layer code.

    Returns a list with one shape tuple per spec.  Only the spatial
    shape law enters here; channel bookkeeping follows each LayerSpec
    kind.
    """
    h, w, c = in_shape
    out = []
    for s in specs:
        if s.kind in ("conv", "maxpool"):
            h = conv_out_size(h, s.kernel, s.stride, s.padding)
            w = conv_out_size(w, s.kernel, s.stride, s.padding)
            if s.kind == "conv":
                c = s.channels_out
        elif s.kind == "crop":
            h = h - 2 * s.kernel
            w = w - 2 * s.kernel
            if h < 1 or w < 1:
                raise ValueError("crop margin too large")
        elif s.kind in ("batchnorm", "relu", "sigmoid", "bilinearsample"):
            pass
        elif s.kind == "concat":
            c = c + s.channels_out
        elif s.kind == "fullyconnected":
            h, w, c = 1, 1, s.channels_out
        else:
            raise ValueError(f"unknown layer kind {s.kind!r}")
        out.append((h, w, c))
    return out


def he_normal(rng, shape, fan_in, dtype):
    """Fan-in scaled Gaussian init (zero-mean, std sqrt(2/fan_in))."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Layer:
    """Base: parameter handling shared by all layers."""

    def params(self) -> dict:
        return {}

    def grads(self) -> dict:
        return {}

    def zero_grads(self):
        for g in self.grads().values():
            g[...] = 0.0

    def share(self):
        """A copy that aliases this layer's parameter and gradient arrays."""
        return copy.copy(self)


class Conv2d(Layer):
    """Valid cross-correlation convolution (no kernel flip), square kernel.

    Weights have shape (k, k, C_in, C_out); input (H, W, C_in).
    """

    def __init__(self, in_channels, out_channels, kernel, stride=1, rng=None, dtype=np.float64):
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        fan_in = in_channels * kernel * kernel
        self.w = he_normal(rng, (kernel, kernel, in_channels, out_channels), fan_in, dtype)
        self.b = np.zeros(out_channels, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return {"weight": self.w, "bias": self.b}

    def grads(self):
        return {"weight": self.gw, "bias": self.gb}

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ValueError(
                f"conv expects (H, W, {self.in_channels}) input, got {x.shape}"
            )
        k, s = self.kernel, self.stride
        if k > min(x.shape[0], x.shape[1]):
            raise ValueError(f"kernel {k} larger than input {x.shape[:2]}")
        win = sliding_window_view(x, (k, k), axis=(0, 1))[::s, ::s]
        out = np.tensordot(win, self.w, axes=([2, 3, 4], [2, 0, 1])) + self.b
        self._cache = (x.shape, win)
        return out

    def backward(self, dout):
        x_shape, win = self._cache
        k, s = self.kernel, self.stride
        ho, wo = dout.shape[:2]
        # (H', W', C, k, k) x (H', W', O) -> (C, k, k, O)
        gw = np.tensordot(win, dout, axes=([0, 1], [0, 1]))
        self.gw += gw.transpose(1, 2, 0, 3)
        self.gb += dout.sum(axis=(0, 1))
        dx = np.zeros(x_shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dx[i : i + s * ho : s, j : j + s * wo : s, :] += np.tensordot(
                    dout, self.w[i, j], axes=([2], [1])
                )
        return dx


class MaxPool2d(Layer):
    """Max pooling; backward routes gradient to argmax positions only."""

    def __init__(self, kernel, stride=1):
        self.kernel = kernel
        self.stride = stride
        self._cache = None

    def forward(self, x, training=False):
        k, s = self.kernel, self.stride
        if k > min(x.shape[0], x.shape[1]):
            raise ValueError(f"pool kernel {k} larger than input {x.shape[:2]}")
        win = sliding_window_view(x, (k, k), axis=(0, 1))[::s, ::s]
        flat = win.reshape(win.shape[:3] + (k * k,))
        idx = flat.argmax(axis=3)
        out = np.take_along_axis(flat, idx[..., None], axis=3)[..., 0]
        self._cache = (x.shape, idx)
        return out

    def backward(self, dout):
        x_shape, idx = self._cache
        k, s = self.kernel, self.stride
        ho, wo = dout.shape[:2]
        di, dj = np.divmod(idx, k)
        dx = np.zeros(x_shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                mask = (di == i) & (dj == j)
                if mask.any():
                    dx[i : i + s * ho : s, j : j + s * wo : s, :] += dout * mask
        return dx


class BatchNorm(Layer):
    """Per-channel normalization over the spatial positions of one map.

    Training mode normalizes with the statistics of the current input
    and updates the running estimates in place (EMA, momentum 0.9), so
    branches sharing this layer also share the statistics.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.9, dtype=np.float64):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.ggamma = np.zeros_like(self.gamma)
        self.gbeta = np.zeros_like(self.beta)
        self._cache = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.ggamma, "beta": self.gbeta}

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, training=False):
        if x.shape[2] != self.channels:
            raise ValueError(f"batchnorm expects {self.channels} channels, got {x.shape[2]}")
        if training:
            mu = x.mean(axis=(0, 1))
            var = x.var(axis=(0, 1))
            m = self.momentum
            self.running_mean *= m
            self.running_mean += (1.0 - m) * mu
            self.running_var *= m
            self.running_var += (1.0 - m) * var
        else:
            mu = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv_std
        self._cache = (xhat, inv_std, training, x.shape[0] * x.shape[1])
        return self.gamma * xhat + self.beta

    def backward(self, dout):
        xhat, inv_std, training, n = self._cache
        self.ggamma += (dout * xhat).sum(axis=(0, 1))
        self.gbeta += dout.sum(axis=(0, 1))
        dxhat = dout * self.gamma
        if not training:
            return dxhat * inv_std
        # batch statistics depend on x, full training-mode backward
        s1 = dxhat.sum(axis=(0, 1))
        s2 = (dxhat * xhat).sum(axis=(0, 1))
        return inv_std * (dxhat - s1 / n - xhat * s2 / n)


class ReLU(Layer):
    def forward(self, x, training=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Sigmoid(Layer):
    def forward(self, x, training=False):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self._out = out
        return out

    def backward(self, dout):
        return dout * self._out * (1.0 - self._out)


class Dense(Layer):
    """Fully connected layer on flat vectors: out = x @ w + b."""

    def __init__(self, n_in, n_out, rng=None, dtype=np.float64):
        if rng is None:
            rng = np.random.default_rng(0)
        self.n_in = n_in
        self.n_out = n_out
        self.w = he_normal(rng, (n_in, n_out), n_in, dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)

    def params(self):
        return {"weight": self.w, "bias": self.b}

    def grads(self):
        return {"weight": self.gw, "bias": self.gb}

    def forward(self, x, training=False):
        self._x = x
        return x @ self.w + self.b

    def backward(self, dout):
        self.gw += np.outer(self._x, dout)
        self.gb += dout
        return self.w @ dout


class BilinearSampler(Layer):
    """Samples a map at normalized grid coordinates with bilinear weights.

    Grid is (H_out, W_out, 2) holding (x, y) in [-1, 1]; -1/+1 map to
    the first/last pixel.  With ``normalized=False`` the grid already
    holds pixel coordinates and is used verbatim (the returned grid
    gradient is then in pixel units too).  Coordinates outside the
    input read as zero.  Differentiable w.r.t. both the map and the
    grid.
    """

    def forward(self, u, grid, training=False, normalized=True):
        h, w = u.shape[:2]
        if normalized:
            px = (grid[..., 0] + 1.0) * 0.5 * (w - 1)
            py = (grid[..., 1] + 1.0) * 0.5 * (h - 1)
        else:
            px = grid[..., 0]
            py = grid[..., 1]
        self._normalized = normalized
        x0 = np.floor(px).astype(np.int64)
        y0 = np.floor(py).astype(np.int64)
        fx = px - x0
        fy = py - y0
        vals = []
        masks = []
        coords = []
        for dy in (0, 1):
            for dx in (0, 1):
                xi = x0 + dx
                yi = y0 + dy
                ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
                v = u[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)] * ok[..., None]
                vals.append(v)
                masks.append(ok)
                coords.append((yi, xi))
        w00 = (1 - fx) * (1 - fy)
        w01 = fx * (1 - fy)
        w10 = (1 - fx) * fy
        w11 = fx * fy
        weights = (w00, w01, w10, w11)
        out = sum(wt[..., None] * v for wt, v in zip(weights, vals))
        self._cache = (u.shape, vals, masks, coords, fx, fy, weights)
        return out

    def backward(self, dout):
        u_shape, vals, masks, coords, fx, fy, weights = self._cache
        h, w = u_shape[:2]
        du = np.zeros(u_shape, dtype=dout.dtype)
        for wt, ok, (yi, xi) in zip(weights, masks, coords):
            contrib = dout * wt[..., None]
            ys = yi[ok]
            xs = xi[ok]
            np.add.at(du, (ys, xs), contrib[ok])
        v00, v01, v10, v11 = vals
        # derivative of the bilinear weights w.r.t. the fractional offsets
        dfx = (dout * ((1 - fy)[..., None] * (v01 - v00) + fy[..., None] * (v11 - v10))).sum(axis=2)
        dfy = (dout * ((1 - fx)[..., None] * (v10 - v00) + fx[..., None] * (v11 - v01))).sum(axis=2)
        if self._normalized:
            dgrid = np.stack([dfx * 0.5 * (w - 1), dfy * 0.5 * (h - 1)], axis=-1)
        else:
            dgrid = np.stack([dfx, dfy], axis=-1)
        return du, dgrid


def crop_margin(x, margin):
    """Remove ``margin`` rows/cols from every side of the first two axes."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    if margin == 0:
        return x
    if 2 * margin >= x.shape[0] or 2 * margin >= x.shape[1]:
        raise ValueError(f"margin {margin} too large for shape {x.shape[:2]}")
    return x[margin:-margin, margin:-margin]


def uncrop_margin(dout, shape, margin):
    """Adjoint of crop_margin: place the gradient back inside zeros."""
    if margin == 0:
        return dout
    dx = np.zeros(shape, dtype=dout.dtype)
    dx[margin:-margin, margin:-margin] = dout
    return dx
