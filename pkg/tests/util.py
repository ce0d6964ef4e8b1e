"""Shared helpers for the test suite."""

import numpy as np

from fusetrack.backbone import BackboneConfig
from fusetrack.layers import LayerSpec


def micro_backbone_config(mix_channels=2):
    """Tiny config for gradient checks.

    Smallest fitting input is 35x35, but that leaves a 1x1 fused map
    whose per-map normalization is identically zero; use 43x43 (3x3
    fused map) when gradients have to reach the output.
    """
    conv = lambda k, s, c: LayerSpec("conv", kernel=k, stride=s, channels_out=c)
    pool = lambda k, s=1: LayerSpec("maxpool", kernel=k, stride=s)
    return BackboneConfig(
        convs=(conv(3, 1, 2), conv(3, 1, 3), conv(3, 1, 4), conv(3, 1, 4), conv(3, 1, 3)),
        pools=(pool(2, 2), pool(2, 2)),
        align=(pool(5), pool(3), pool(1)),
        mix_channels=mix_channels,
    )


def micro_input(rng, size=43, channels=1):
    return rng.standard_normal((size, size, channels))


def as_scalar_loss(arr, proj):
    return float(np.sum(arr * proj))


def dense_ridge_solve(xfeat, y, lam):
    """Oracle: explicit circulant system for the correlation objective.

    response[u] = sum_c sum_t w_c[t] x_c[(t+u) mod m]; solve the normal
    equations (A^T A + lam I) w = A^T y densely.
    """
    m, _, d = xfeat.shape
    n = m * m
    a = np.zeros((n, n * d))
    for c in range(d):
        for u1 in range(m):
            for u2 in range(m):
                row = u1 * m + u2
                for t1 in range(m):
                    for t2 in range(m):
                        col = c * n + t1 * m + t2
                        a[row, col] = xfeat[(t1 + u1) % m, (t2 + u2) % m, c]
    rhs = a.T @ y.reshape(-1)
    sol = np.linalg.solve(a.T @ a + lam * np.eye(n * d), rhs)
    return np.stack([sol[c * n:(c + 1) * n].reshape(m, m) for c in range(d)], axis=2)
