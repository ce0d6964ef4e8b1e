"""Correlation-filter template solve and response scoring.

The template w is the closed-form ridge solution fit so that the
circular cross-correlation of w with the exemplar feature reproduces a
Gaussian bump over shifts:

    minimize  || sum_c w_c (star) x_c  -  y ||^2  +  lam ||w||^2

solved independently per Fourier bin with the channel-shared
denominator

    w_hat_c = x_hat_c * y_hat / (sum_c |x_hat_c|^2 + lam).

y is built with its peak at shift zero and wrapped symmetrically, so
y_hat is real and the solve stays conjugate-consistent.  The solved w
is directly the sliding kernel: valid-mode cross-correlation of w over
a search feature containing the exemplar peaks at the exemplar's
offset, since the zero-lag term is the fitted Gaussian peak.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Layer, crop_margin, uncrop_margin


def gaussian_target(m, sigma):
    """m x m Gaussian over circular shifts, peak 1.0 at shift (0,0)."""
    half = m // 2
    d = (np.arange(m) + half) % m - half
    d2 = d[:, None] ** 2 + d[None, :] ** 2
    return np.exp(-0.5 * d2 / (sigma * sigma))


def hann2d(m):
    h = np.hanning(m)
    return np.outer(h, h)


@dataclass
class CFTemplate:
    w: np.ndarray
    lam: float
    gauss_sigma: float
    crop_margin: int


@dataclass
class ResponseMap:
    scores: np.ndarray
    stride: int = 1
    origin: tuple = (0, 0)


class CFSolve(Layer):
    """Differentiable closed-form solve; no trainable parameters.

    gauss_sigma None means 0.1 * m at call time.  energy_lambda scales
    lam by the mean per-bin spectrum energy of the (windowed) feature
    so the two denominator terms stay commensurate across feature
    scales; the extra dependence of lam on x is part of the backward
    pass.
    """

    def __init__(self, lam=1e-2, gauss_sigma=None, window=True, energy_lambda=True):
        if lam <= 0:
            raise ValueError("lam must be > 0")
        self.lam = lam
        self.gauss_sigma = gauss_sigma
        self.window = window
        self.energy_lambda = energy_lambda

    def forward(self, xfeat, training=False):
        if xfeat.ndim != 3 or xfeat.shape[0] != xfeat.shape[1]:
            raise ValueError(f"expected square (m, m, d) feature, got {xfeat.shape}")
        m = xfeat.shape[0]
        sigma = self.gauss_sigma if self.gauss_sigma is not None else 0.1 * m
        h = hann2d(m)[:, :, None] if self.window else None
        xw = xfeat * h if self.window else xfeat
        X = np.fft.fft2(xw, axes=(0, 1))
        Y = np.real(np.fft.fft2(gaussian_target(m, sigma)))
        lam_eff = self.lam * float(np.sum(xw * xw)) if self.energy_lambda else self.lam
        if lam_eff == 0.0:
            # energy-scaled lam with all-zero features: w has no finite
            # limit, so fail loudly instead of emitting NaNs
            raise FloatingPointError(
                "zero-energy feature map makes the regularizer vanish; "
                "the template solve is degenerate")
        D = np.sum((X * np.conj(X)).real, axis=2) + lam_eff
        W = X * (Y / D)[:, :, None]
        w = np.real(np.fft.ifft2(W, axes=(0, 1)))
        self._cache = (xw, h, X, Y, D, W, lam_eff, m * m)
        return w

    def backward(self, dw):
        xw, h, X, Y, D, W, lam_eff, n = self._cache
        Wb = np.fft.fft2(dw, axes=(0, 1)) / n
        Ab = Wb / D[:, :, None]
        Db = -np.sum((Wb * np.conj(W)).real, axis=2) / D
        Xb = Ab * Y[:, :, None] + 2.0 * Db[:, :, None] * X
        dxw = n * np.real(np.fft.ifft2(Xb, axes=(0, 1)))
        if self.energy_lambda:
            dxw += (2.0 * self.lam * np.sum(Db)) * xw
        return dxw * h if self.window else dxw

    def effective_lambda(self):
        return self._cache[6]


def solve_cf(xfeat, lam=1e-2, gauss_sigma=None, window=True, energy_lambda=True,
             margin=None):
    """One-shot solve returning the template record."""
    solver = CFSolve(lam=lam, gauss_sigma=gauss_sigma, window=window,
                     energy_lambda=energy_lambda)
    w = solver.forward(xfeat)
    m = xfeat.shape[0]
    sigma = gauss_sigma if gauss_sigma is not None else 0.1 * m
    return CFTemplate(w=w, lam=solver.effective_lambda(), gauss_sigma=sigma,
                      crop_margin=m // 8 if margin is None else margin)


def circular_response(w, xfeat):
    """Circular cross-correlation of the template with a same-size feature."""
    Wf = np.fft.fft2(w, axes=(0, 1))
    Xf = np.fft.fft2(xfeat, axes=(0, 1))
    return np.real(np.fft.ifft2(np.sum(np.conj(Wf) * Xf, axis=2)))


class CrossCorrelate(Layer):
    """Valid-mode cross-correlation summed over channels."""

    def forward(self, w, z, training=False):
        if w.shape[2] != z.shape[2]:
            raise ValueError(f"channel mismatch: kernel {w.shape[2]}, search {z.shape[2]}")
        if z.shape[0] < w.shape[0] or z.shape[1] < w.shape[1]:
            raise ValueError(f"search {z.shape[:2]} smaller than kernel {w.shape[:2]}")
        mh, mw = w.shape[:2]
        windows = np.lib.stride_tricks.sliding_window_view(z, (mh, mw), axis=(0, 1))
        self._cache = (w, z, windows)
        return np.tensordot(windows, w, axes=([3, 4, 2], [0, 1, 2]))

    def backward(self, dscore):
        w, z, windows = self._cache
        mh, mw = w.shape[:2]
        # dw: correlate the search windows the score positions saw
        zwin = np.lib.stride_tricks.sliding_window_view(
            z, dscore.shape, axis=(0, 1))
        dw = np.tensordot(zwin, dscore, axes=([3, 4], [0, 1]))
        # dz: full convolution of the score gradient with the kernel
        pad_h, pad_w = mh - 1, mw - 1
        padded = np.pad(dscore, ((pad_h, pad_h), (pad_w, pad_w)))
        pwin = np.lib.stride_tricks.sliding_window_view(padded, (mh, mw))
        dz = np.tensordot(pwin, w[::-1, ::-1], axes=([2, 3], [0, 1]))
        return dw, dz


def cross_correlate(w, z):
    return CrossCorrelate().forward(w, z)


def crop(arr, margin):
    """Boundary trim; argmax positions shift down by exactly margin."""
    return crop_margin(arr, margin)


def uncrop(dout, shape, margin):
    return uncrop_margin(dout, shape, margin)
