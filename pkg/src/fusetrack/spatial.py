"""Exemplar-side feature conditioning.

Two pieces run in sequence on the fused exemplar map: an affine
spatial transformer (localization net, grid generator, bilinear
sampler) that learns to re-center the template, and a channel
attention block that reweights channels from global statistics.
The transformer starts as an exact identity; the attention block
starts as a data-dependent soft gate.
"""

from __future__ import annotations

import numpy as np

from .layers import (
    BilinearSampler,
    Conv2d,
    Dense,
    Layer,
    LayerSpec,
    ReLU,
    Sigmoid,
    conv_out_size,
)

IDENTITY_THETA = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def affine_grid(theta, out_hw):
    """Normalized sampling coords for a 2x3 affine map.

    Returns (H, W, 2) holding (x_in, y_in) per output pixel, where the
    output pixel itself sits at the regular grid spanning [-1, 1] in
    each axis (endpoints on the first/last pixel).
    """
    theta = np.asarray(theta, dtype=np.float64).reshape(2, 3)
    h, w = out_hw
    ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
    xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    gx, gy = np.meshgrid(xs, ys)
    ones = np.ones_like(gx)
    base = np.stack([gx, gy, ones], axis=-1)
    return base @ theta.T


class LocalizationNet(Layer):
    """Regresses the 6 affine parameters from a feature map.

    Conv stack with ReLUs, flatten, one fully connected layer.  The
    FC starts at zero weight with the identity transform in its bias,
    so an untrained net always answers "do nothing".
    """

    def __init__(self, in_hw, in_channels, conv_specs, rng=None, dtype=np.float64):
        if rng is None:
            rng = np.random.default_rng(0)
        self.convs = []
        self.relus = []
        h, w = in_hw
        c = in_channels
        for spec in conv_specs:
            self.convs.append(Conv2d(c, spec.channels_out, spec.kernel, spec.stride, rng=rng, dtype=dtype))
            self.relus.append(ReLU())
            h = conv_out_size(h, spec.kernel, spec.stride)
            w = conv_out_size(w, spec.kernel, spec.stride)
            c = spec.channels_out
        self.flat_dim = h * w * c
        self.fc = Dense(self.flat_dim, 6, rng=rng, dtype=dtype)
        self.fc.w[:] = 0.0
        self.fc.b[:] = IDENTITY_THETA.reshape(-1)

    def _children(self):
        return {f"conv{i + 1}": cv for i, cv in enumerate(self.convs)} | {"fc": self.fc}

    def params(self):
        out = {}
        for name, layer in self._children().items():
            for k, v in layer.params().items():
                out[f"{name}.{k}"] = v
        return out

    def grads(self):
        out = {}
        for name, layer in self._children().items():
            for k, v in layer.grads().items():
                out[f"{name}.{k}"] = v
        return out

    def share(self):
        twin = object.__new__(LocalizationNet)
        twin.convs = [cv.share() for cv in self.convs]
        twin.relus = [ReLU() for _ in self.relus]
        twin.flat_dim = self.flat_dim
        twin.fc = self.fc.share()
        return twin

    def forward(self, x, training=False):
        for cv, rl in zip(self.convs, self.relus):
            x = rl.forward(cv.forward(x, training=training), training=training)
        self._shape = x.shape
        return self.fc.forward(x.reshape(-1), training=training).reshape(2, 3)

    def backward(self, dtheta):
        d = self.fc.backward(dtheta.reshape(-1)).reshape(self._shape)
        for cv, rl in zip(reversed(self.convs), reversed(self.relus)):
            d = cv.backward(rl.backward(d))
        return d


class SpatialTransformer(Layer):
    """localize -> affine_grid -> bilinear sample, end to end."""

    def __init__(self, in_hw, in_channels, conv_specs, rng=None, dtype=np.float64):
        self.loc = LocalizationNet(in_hw, in_channels, conv_specs, rng=rng, dtype=dtype)
        self.sampler = BilinearSampler()

    def params(self):
        return {f"loc.{k}": v for k, v in self.loc.params().items()}

    def grads(self):
        return {f"loc.{k}": v for k, v in self.loc.grads().items()}

    def share(self):
        twin = object.__new__(SpatialTransformer)
        twin.loc = self.loc.share()
        twin.sampler = BilinearSampler()
        return twin

    def forward(self, x, training=False):
        theta = self.loc.forward(x, training=training)
        h, w = x.shape[:2]
        ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
        xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
        bx, by = np.meshgrid(xs, ys)
        # pixel grid written as identity-plus-delta: with theta at the
        # identity every delta term carries a zero factor, so the warp
        # is bit-exact there instead of linspace-roundoff close
        ddx = (theta[0, 0] - 1.0) * bx + theta[0, 1] * by + theta[0, 2]
        ddy = theta[1, 0] * bx + (theta[1, 1] - 1.0) * by + theta[1, 2]
        px = np.arange(w)[None, :] + ddx * (0.5 * (w - 1))
        py = np.arange(h)[:, None] + ddy * (0.5 * (h - 1))
        self._base = (bx, by)
        self.theta = theta
        grid = np.stack([px, py], axis=-1)
        return self.sampler.forward(x, grid, training=training, normalized=False)

    def backward(self, dout):
        du, dgrid = self.sampler.backward(dout)
        bx, by = self._base
        h, w = dout.shape[:2]
        dddx = dgrid[..., 0] * (0.5 * (w - 1))
        dddy = dgrid[..., 1] * (0.5 * (h - 1))
        dtheta = np.array([
            [np.sum(dddx * bx), np.sum(dddx * by), np.sum(dddx)],
            [np.sum(dddy * bx), np.sum(dddy * by), np.sum(dddy)],
        ])
        dx_loc = self.loc.backward(dtheta)
        return du + dx_loc


class ChannelAttention(Layer):
    """Squeeze-and-excitation gate: pool, bottleneck MLP, sigmoid, scale."""

    def __init__(self, channels, reduction, rng=None, dtype=np.float64):
        hidden = max(1, -(-channels // reduction))
        self.fc1 = Dense(channels, hidden, rng=rng, dtype=dtype)
        self.relu = ReLU()
        self.fc2 = Dense(hidden, channels, rng=rng, dtype=dtype)
        self.sigmoid = Sigmoid()

    def params(self):
        out = {}
        for name, layer in (("fc1", self.fc1), ("fc2", self.fc2)):
            for k, v in layer.params().items():
                out[f"{name}.{k}"] = v
        return out

    def grads(self):
        out = {}
        for name, layer in (("fc1", self.fc1), ("fc2", self.fc2)):
            for k, v in layer.grads().items():
                out[f"{name}.{k}"] = v
        return out

    def share(self):
        twin = object.__new__(ChannelAttention)
        twin.fc1 = self.fc1.share()
        twin.relu = ReLU()
        twin.fc2 = self.fc2.share()
        twin.sigmoid = Sigmoid()
        return twin

    def weights(self, x, training=False):
        pooled = x.mean(axis=(0, 1))
        h = self.relu.forward(self.fc1.forward(pooled, training=training), training=training)
        return self.sigmoid.forward(self.fc2.forward(h, training=training), training=training)

    def forward(self, x, training=False):
        phi = self.weights(x, training=training)
        self._x = x
        self.phi = phi
        return x * phi

    def backward(self, dout):
        dx = dout * self.phi
        dphi = np.sum(dout * self._x, axis=(0, 1))
        d = self.relu.backward(self.fc2.backward(self.sigmoid.backward(dphi)))
        dpooled = self.fc1.backward(d)
        dx += dpooled / (self._x.shape[0] * self._x.shape[1])
        return dx


class SpatialAware(Layer):
    """Transformer followed by channel attention, as one exemplar head."""

    def __init__(self, in_hw, channels, conv_specs, reduction, rng=None, dtype=np.float64):
        self.stn = SpatialTransformer(in_hw, channels, conv_specs, rng=rng, dtype=dtype)
        self.att = ChannelAttention(channels, reduction, rng=rng, dtype=dtype)

    def params(self):
        out = {f"stn.{k}": v for k, v in self.stn.params().items()}
        out.update({f"att.{k}": v for k, v in self.att.params().items()})
        return out

    def grads(self):
        out = {f"stn.{k}": v for k, v in self.stn.grads().items()}
        out.update({f"att.{k}": v for k, v in self.att.grads().items()})
        return out

    def share(self):
        twin = object.__new__(SpatialAware)
        twin.stn = self.stn.share()
        twin.att = self.att.share()
        return twin

    def forward(self, x, training=False):
        return self.att.forward(self.stn.forward(x, training=training), training=training)

    def backward(self, dout):
        return self.stn.backward(self.att.backward(dout))


def head_conv_specs(preset):
    """Localization-net conv stacks per preset.

    The desk exemplar map is 8x8, too small for the stride-2 stack the
    larger preset uses, so the desk stack keeps stride 1.
    """
    conv = lambda k, s, c: LayerSpec("conv", kernel=k, stride=s, channels_out=c)
    if preset == "paper":
        return (conv(3, 2, 32), conv(3, 2, 32), conv(3, 2, 32))
    if preset == "desk":
        return (conv(3, 1, 16), conv(3, 1, 16), conv(3, 1, 16))
    raise KeyError(preset)


HEAD_REDUCTION = {"paper": 16, "desk": 4}
