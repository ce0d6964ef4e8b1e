"""Shared hierarchical-fusion feature network.

Five conv blocks (conv + batchnorm + relu) with two early max pools.
The outputs of the last three conv blocks are aligned to a common
spatial size with stride-1 max pools, normalized per branch, joined
along channels, and mixed down by a linear 1x1 conv:

    fused = concat(bn(mp(b3)), bn(mp(b4)), bn(mp(b5)))
    final = conv1x1(fused)

Both Siamese branches run this network with one parameter set; use
``share()`` to get a second lane with independent forward caches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .layers import BatchNorm, Conv2d, LayerSpec, MaxPool2d, ReLU, conv_out_size


@dataclass(frozen=True)
class BackboneConfig:
    """Layer table: five convs, two early pools, three alignment pools, 1x1 mix."""

    convs: tuple  # five LayerSpec("conv", ...)
    pools: tuple  # two LayerSpec("maxpool", ...), applied after conv1 and conv2
    align: tuple  # three stride-1 LayerSpec("maxpool", ...) for the b3/b4/b5 branches
    mix_channels: int  # output channels of the 1x1 conv
    in_channels: int = 1

    def __post_init__(self):
        if len(self.convs) != 5:
            raise ConfigError("backbone needs exactly five conv layers")
        if len(self.pools) != 2:
            raise ConfigError("backbone needs exactly two early max pools")
        if len(self.align) != 3:
            raise ConfigError("backbone needs three alignment pools")

    # conv1, pool1, conv2, pool2, then conv3..conv5 back to back
    def trunk(self):
        return [
            ("conv1", self.convs[0]),
            ("pool1", self.pools[0]),
            ("conv2", self.convs[1]),
            ("pool2", self.pools[1]),
            ("conv3", self.convs[2]),
            ("conv4", self.convs[3]),
            ("conv5", self.convs[4]),
        ]


def _conv(kernel, stride, channels):
    return LayerSpec("conv", kernel=kernel, stride=stride, channels_out=channels)


def _pool(kernel, stride=1):
    return LayerSpec("maxpool", kernel=kernel, stride=stride)


PRESETS = {
    # AlexNet-like stack: 471 -> 231 -> 115 -> 111 -> 55 -> 53/51/49
    "paper": BackboneConfig(
        convs=(_conv(11, 2, 96), _conv(5, 1, 256), _conv(3, 1, 384), _conv(3, 1, 384), _conv(3, 1, 256)),
        pools=(_pool(3, 2), _pool(3, 2)),
        align=(_pool(5), _pool(3), _pool(1)),
        mix_channels=256,
    ),
    # small CPU-friendly stack, same structure: 159 -> 157 -> 78 -> 76 -> 38 -> 36/34/32
    "desk": BackboneConfig(
        convs=(_conv(3, 1, 16), _conv(3, 1, 32), _conv(3, 1, 48), _conv(3, 1, 48), _conv(3, 1, 32)),
        pools=(_pool(2, 2), _pool(2, 2)),
        align=(_pool(5), _pool(3), _pool(1)),
        mix_channels=32,
    ),
}


def total_stride(cfg: BackboneConfig) -> int:
    """Product of all strides along the path to the fused output."""
    k = 1
    for _, spec in cfg.trunk():
        k *= spec.stride
    return k * cfg.align[2].stride


def backbone_shapes(cfg: BackboneConfig, in_size: int) -> dict:
    """Independent shape prediction for a square input of side ``in_size``.

    Returns {'f3','f4','f5','fmap','finalmap'} -> (H, W, C).  Raises
    ConfigError naming the first layer that does not fit.
    """
    h = in_size
    c = cfg.in_channels
    feats = {}
    for name, spec in cfg.trunk():
        try:
            h = conv_out_size(h, spec.kernel, spec.stride, spec.padding)
        except ValueError as e:
            raise ConfigError(f"{name}: {e}") from None
        if spec.kind == "conv":
            c = spec.channels_out
        if name in ("conv3", "conv4", "conv5"):
            feats["f" + name[-1]] = (h, h, c)
    aligned = []
    for branch, spec in zip(("f3", "f4", "f5"), cfg.align):
        bh = feats[branch][0]
        try:
            ah = conv_out_size(bh, spec.kernel, spec.stride)
        except ValueError as e:
            raise ConfigError(f"align pool for {branch}: {e}") from None
        aligned.append((ah, feats[branch][2]))
    sizes = {a[0] for a in aligned}
    if len(sizes) != 1:
        raise ConfigError(f"alignment pools leave unequal sizes {sorted(sizes)}")
    side = aligned[0][0]
    feats["fmap"] = (side, side, sum(a[1] for a in aligned))
    feats["finalmap"] = (side, side, cfg.mix_channels)
    return feats


@dataclass
class FusedFeature:
    fmap: np.ndarray
    finalmap: np.ndarray


class Backbone:
    def __init__(self, cfg: BackboneConfig, rng=None, dtype=np.float64):
        if rng is None:
            rng = np.random.default_rng(0)
        self.cfg = cfg
        self.dtype = dtype
        c_in = cfg.in_channels
        self.layers = {}
        for name, spec in cfg.trunk():
            if spec.kind == "conv":
                self.layers[name] = Conv2d(c_in, spec.channels_out, spec.kernel, spec.stride, rng=rng, dtype=dtype)
                self.layers["bn" + name[-1]] = BatchNorm(spec.channels_out, dtype=dtype)
                self.layers["relu" + name[-1]] = ReLU()
                c_in = spec.channels_out
            else:
                self.layers[name] = MaxPool2d(spec.kernel, spec.stride)
        branch_channels = [cfg.convs[i].channels_out for i in (2, 3, 4)]
        for i, spec in zip((3, 4, 5), cfg.align):
            self.layers[f"align{i}"] = MaxPool2d(spec.kernel, spec.stride)
            self.layers[f"fuse_bn{i}"] = BatchNorm(branch_channels[i - 3], dtype=dtype)
        self.layers["conv6"] = Conv2d(sum(branch_channels), cfg.mix_channels, 1, 1, rng=rng, dtype=dtype)
        self._split = np.cumsum(branch_channels)[:-1]

    def share(self):
        twin = object.__new__(Backbone)
        twin.cfg = self.cfg
        twin.dtype = self.dtype
        twin.layers = {k: v.share() for k, v in self.layers.items()}
        twin._split = self._split
        return twin

    def params(self):
        out = {}
        for name, layer in self.layers.items():
            for k, v in layer.params().items():
                out[f"{name}.{k}"] = v
        return out

    def grads(self):
        out = {}
        for name, layer in self.layers.items():
            for k, v in layer.grads().items():
                out[f"{name}.{k}"] = v
        return out

    def state(self):
        out = {}
        for name, layer in self.layers.items():
            if isinstance(layer, BatchNorm):
                for k, v in layer.state().items():
                    out[f"{name}.{k}"] = v
        return out

    def _run(self, name, x, training):
        try:
            return self.layers[name].forward(x, training=training)
        except ValueError as e:
            raise ConfigError(f"{name}: {e}") from None

    def features(self, img, training=False):
        """Run the trunk; returns the three branch maps (b3, b4, b5)."""
        x = np.asarray(img, dtype=self.dtype)
        if x.ndim == 2:
            x = x[:, :, None]
        feats = []
        for name, spec in self.cfg.trunk():
            x = self._run(name, x, training)
            if spec.kind == "conv":
                x = self.layers["bn" + name[-1]].forward(x, training=training)
                x = self.layers["relu" + name[-1]].forward(x, training=training)
            if name in ("conv3", "conv4", "conv5"):
                feats.append(x)
        return tuple(feats)

    def backward_features(self, df3, df4, df5):
        grads = {"conv3": df3, "conv4": df4, "conv5": df5}
        d = None
        for name, spec in reversed(self.cfg.trunk()):
            if name in grads:
                d = grads[name] if d is None else d + grads[name]
            if spec.kind == "conv":
                d = self.layers["relu" + name[-1]].backward(d)
                d = self.layers["bn" + name[-1]].backward(d)
            d = self.layers[name].backward(d)
        return d

    def fuse(self, f3, f4, f5, training=False) -> FusedFeature:
        aligned = []
        for i, f in zip((3, 4, 5), (f3, f4, f5)):
            a = self._run(f"align{i}", f, training)
            aligned.append(self.layers[f"fuse_bn{i}"].forward(a, training=training))
        sizes = {a.shape[:2] for a in aligned}
        if len(sizes) != 1:
            raise ConfigError(f"alignment pools leave unequal sizes {sorted(sizes)}")
        fmap = np.concatenate(aligned, axis=2)
        finalmap = self.layers["conv6"].forward(fmap, training=training)
        return FusedFeature(fmap=fmap, finalmap=finalmap)

    def backward_fuse(self, dfinal):
        dfmap = self.layers["conv6"].backward(dfinal)
        blocks = np.split(dfmap, self._split, axis=2)
        out = []
        for i, db in zip((3, 4, 5), blocks):
            da = self.layers[f"fuse_bn{i}"].backward(db)
            out.append(self.layers[f"align{i}"].backward(da))
        return tuple(out)

    def forward(self, img, training=False):
        f3, f4, f5 = self.features(img, training=training)
        return self.fuse(f3, f4, f5, training=training).finalmap

    def backward(self, dfinal):
        df3, df4, df5 = self.backward_fuse(dfinal)
        return self.backward_features(df3, df4, df5)

    def zero_grads(self):
        for layer in self.layers.values():
            layer.zero_grads()
