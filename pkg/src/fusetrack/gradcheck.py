"""Finite-difference gradient checking.

``grad_check`` perturbs selected coordinates of the given arrays in
place, re-evaluates a scalar loss closure, and compares the central
difference against the analytic gradient supplied alongside each array.
"""

from __future__ import annotations

import numpy as np


def grad_check(loss_fn, targets, step=1e-3, rng=None, max_coords=24, floor=1e-6):
    """Max relative error between analytic gradients and central differences.

    loss_fn     zero-argument closure returning a scalar; must be pure and
                deterministic given the current contents of the arrays.
    targets     list of (array, analytic_grad) pairs; arrays are modified
                in place during the check and restored afterwards.
    step        central-difference step, or a sequence of steps.  With a
                sequence each coordinate is scored by its best step; deep
                compositions have no single step that beats both the
                truncation error and float64 roundoff everywhere.
    max_coords  per-array cap on checked coordinates (sampled with rng).
    floor       denominator floor: err = |a - d| / max(|a|, |d|, floor).

    Non-finite analytic gradients or differences yield +inf.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    steps = (step,) if np.isscalar(step) else tuple(step)
    worst = 0.0
    for arr, grad in targets:
        if arr.shape != grad.shape:
            raise ValueError(f"grad shape {grad.shape} != param shape {arr.shape}")
        if not np.all(np.isfinite(grad)):
            return np.inf
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        n = flat.size
        if n <= max_coords:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=max_coords, replace=False)
        for i in idx:
            a = gflat[i]
            best = np.inf
            for h in steps:
                orig = flat[i]
                flat[i] = orig + h
                lp = loss_fn()
                flat[i] = orig - h
                lm = loss_fn()
                flat[i] = orig
                diff = (lp - lm) / (2.0 * h)
                if not np.isfinite(diff):
                    return np.inf
                best = min(best, abs(a - diff) / max(abs(a), abs(diff), floor))
            worst = max(worst, best)
    return worst


def random_weights(shape, rng):
    """Fixed random projection used to reduce a map to a scalar loss."""
    return rng.standard_normal(shape)
