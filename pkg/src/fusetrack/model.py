"""Full similarity model: shared trunk, exemplar head, CF scoring.

The exemplar image runs through the fused backbone, the spatial-aware
head, and the closed-form CF solve to produce a matching kernel; the
search image runs through a weight-shared copy of the same backbone.
Valid cross-correlation of kernel and search feature, boundary crop,
and an affine score calibration (gain * r + bias, learnable) give the
response map the losses and the tracker consume.  The calibration is
not part of the published architecture; raw CF responses live in
[0, 1]-ish units while the verification loss wants signed scores, and
a learnable gain/bias lets training find that scale.
"""

from __future__ import annotations

import numpy as np

from .backbone import PRESETS, Backbone, backbone_shapes, total_stride
from .cf import CFSolve, CrossCorrelate
from .layers import Layer, crop_margin, uncrop_margin
from .spatial import HEAD_REDUCTION, SpatialAware, head_conv_specs

EXEMPLAR_SIZE = {"paper": 247, "desk": 63}
SEARCH_SIZE = {"paper": 471, "desk": 159}


class ResponseCalibration(Layer):
    """out = gain * r + bias with scalar learnable gain/bias."""

    def __init__(self, dtype=np.float64):
        self.gain = np.ones(1, dtype=dtype)
        self.bias = np.zeros(1, dtype=dtype)
        self.ggain = np.zeros(1, dtype=dtype)
        self.gbias = np.zeros(1, dtype=dtype)

    def params(self):
        return {"gain": self.gain, "bias": self.bias}

    def grads(self):
        return {"gain": self.ggain, "bias": self.gbias}

    def forward(self, r, training=False):
        self._r = r
        return self.gain[0] * r + self.bias[0]

    def backward(self, dout):
        self.ggain[0] += float(np.sum(dout * self._r))
        self.gbias[0] += float(np.sum(dout))
        return self.gain[0] * dout


class SimilarityModel:
    def __init__(self, preset="desk", rng=None, dtype=np.float64,
                 cf_lambda=1e-2, cf_sigma=None, cf_window=True,
                 cf_energy_lambda=True, margin=None,
                 exemplar_size=None, search_size=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.preset = preset
        self.cfg = PRESETS[preset]
        self.exemplar_size = exemplar_size or EXEMPLAR_SIZE[preset]
        self.search_size = search_size or SEARCH_SIZE[preset]
        self.backbone = Backbone(self.cfg, rng=rng, dtype=dtype)
        self.backbone_z = self.backbone.share()
        shapes = backbone_shapes(self.cfg, self.exemplar_size)
        m = shapes["finalmap"][0]
        self.template_size = m
        self.head = SpatialAware((m, m), shapes["finalmap"][2],
                                 head_conv_specs(preset), HEAD_REDUCTION[preset],
                                 rng=rng, dtype=dtype)
        self.cf = CFSolve(lam=cf_lambda, gauss_sigma=cf_sigma, window=cf_window,
                          energy_lambda=cf_energy_lambda)
        self.margin = m // 8 if margin is None else margin
        self.xcorr = CrossCorrelate()
        self.calib = ResponseCalibration(dtype=dtype)
        self.stride = total_stride(self.cfg)

    def response_dims(self):
        zn = backbone_shapes(self.cfg, self.search_size)["finalmap"][0]
        return zn - self.template_size + 1 - 2 * self.margin

    # -- training path ------------------------------------------------

    def forward_pair(self, x_img, z_img, training=True):
        fx = self.backbone.forward(x_img, training=training)
        fz = self.backbone_z.forward(z_img, training=training)
        hx = self.head.forward(fx, training=training)
        w = self.cf.forward(hx, training=training)
        r = self.xcorr.forward(w, fz, training=training)
        self._rshape = r.shape
        return self.calib.forward(crop_margin(r, self.margin), training=training)

    def backward_pair(self, dout):
        dr = uncrop_margin(self.calib.backward(dout), self._rshape, self.margin)
        dw, dfz = self.xcorr.backward(dr)
        dhx = self.cf.backward(dw)
        dfx = self.head.backward(dhx)
        dx = self.backbone.backward(dfx)
        dz = self.backbone_z.backward(dfz)
        return dx, dz

    # -- tracking path ------------------------------------------------

    def template(self, x_img):
        """Matching kernel from one exemplar image (inference mode)."""
        fx = self.backbone.forward(x_img, training=False)
        return self.cf.forward(self.head.forward(fx, training=False))

    def search_features(self, z_img):
        return self.backbone_z.forward(z_img, training=False)

    def score(self, w, fz):
        r = CrossCorrelate().forward(w, fz)
        return self.calib.forward(crop_margin(r, self.margin))

    # -- parameter plumbing -------------------------------------------

    def _components(self):
        return (("backbone", self.backbone), ("head", self.head),
                ("calib", self.calib))

    def params(self):
        out = {}
        for name, comp in self._components():
            for k, v in comp.params().items():
                out[f"{name}.{k}"] = v
        return out

    def grads(self):
        out = {}
        for name, comp in self._components():
            for k, v in comp.grads().items():
                out[f"{name}.{k}"] = v
        return out

    def state(self):
        return {f"backbone.{k}": v for k, v in self.backbone.state().items()}

    def zero_grads(self):
        for g in self.grads().values():
            g[:] = 0.0
