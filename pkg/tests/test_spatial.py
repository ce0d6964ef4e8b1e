import numpy as np
import pytest

from fusetrack.gradcheck import grad_check, random_weights
from fusetrack.layers import LayerSpec
from fusetrack.spatial import (
    HEAD_REDUCTION,
    IDENTITY_THETA,
    ChannelAttention,
    LocalizationNet,
    SpatialAware,
    SpatialTransformer,
    affine_grid,
    head_conv_specs,
)

conv = lambda k, s, c: LayerSpec("conv", kernel=k, stride=s, channels_out=c)
MICRO_SPECS = (conv(3, 1, 2),)


def test_affine_grid_identity_is_regular_grid():
    grid = affine_grid(IDENTITY_THETA, (3, 5))
    xs = np.linspace(-1, 1, 5)
    ys = np.linspace(-1, 1, 3)
    np.testing.assert_array_equal(grid[..., 0], np.tile(xs, (3, 1)))
    np.testing.assert_array_equal(grid[..., 1], np.tile(ys[:, None], (1, 5)))


def test_affine_grid_translation_shifts_x():
    theta = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.0]])
    grid = affine_grid(theta, (4, 4))
    base = affine_grid(IDENTITY_THETA, (4, 4))
    np.testing.assert_allclose(grid[..., 0], base[..., 0] + 0.5)
    np.testing.assert_array_equal(grid[..., 1], base[..., 1])


def test_affine_grid_scale_two_pushes_corner_out():
    theta = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    grid = affine_grid(theta, (3, 3))
    np.testing.assert_allclose(grid[2, 2], [2.0, 2.0])
    np.testing.assert_allclose(grid[0, 0], [-2.0, -2.0])
    np.testing.assert_allclose(grid[1, 1], [0.0, 0.0])


def test_localize_fresh_init_returns_identity():
    rng = np.random.default_rng(0)
    loc = LocalizationNet((6, 6), 2, MICRO_SPECS, rng=rng)
    for seed in range(3):
        x = np.random.default_rng(seed).standard_normal((6, 6, 2))
        theta = loc.forward(x)
        assert theta.shape == (2, 3)
        np.testing.assert_array_equal(theta, IDENTITY_THETA)


def test_localize_gradients():
    rng = np.random.default_rng(1)
    loc = LocalizationNet((6, 6), 2, MICRO_SPECS, rng=rng)
    loc.fc.w[:] = rng.standard_normal(loc.fc.w.shape) * 0.1
    x = rng.standard_normal((6, 6, 2))
    proj = rng.standard_normal((2, 3))

    def loss():
        return float(np.sum(loc.forward(x) * proj))

    loc.zero_grads()
    loc.forward(x)
    dx = loc.backward(proj)
    params = loc.params()
    grads = loc.grads()
    targets = [(x, dx)] + [(params[k], grads[k]) for k in params]
    assert grad_check(loss, targets, step=(1e-3, 1e-5), rng=rng, max_coords=8) <= 1e-4


def test_spatial_transform_identity_at_init():
    rng = np.random.default_rng(2)
    stn = SpatialTransformer((6, 6), 2, MICRO_SPECS, rng=rng)
    x = rng.standard_normal((6, 6, 2))
    np.testing.assert_array_equal(stn.forward(x), x)


def test_spatial_transform_hand_set_translation():
    rng = np.random.default_rng(3)
    stn = SpatialTransformer((5, 5), 1, MICRO_SPECS, rng=rng)
    # +1 pixel along x in normalized units is 2/(W-1)
    stn.loc.fc.b[2] = 2.0 / 4.0
    x = rng.standard_normal((5, 5, 1))
    out = stn.forward(x)
    expect = np.zeros_like(x)
    expect[:, :4] = x[:, 1:]
    np.testing.assert_allclose(out, expect, atol=1e-10)


def test_spatial_transform_preserves_shape():
    rng = np.random.default_rng(4)
    stn = SpatialTransformer((7, 7), 3, MICRO_SPECS, rng=rng)
    x = rng.standard_normal((7, 7, 3))
    assert stn.forward(x).shape == x.shape


def test_spatial_transform_end_to_end_gradients():
    rng = np.random.default_rng(5)
    stn = SpatialTransformer((6, 6), 2, MICRO_SPECS, rng=rng)
    # move off the identity so sampling sits between pixels, away from
    # the bilinear kinks at the integer lattice
    stn.loc.fc.w[:] = rng.standard_normal(stn.loc.fc.w.shape) * 0.02
    stn.loc.fc.b[:] += np.array([0.03, -0.01, 0.07, 0.02, -0.04, 0.05])
    x = rng.standard_normal((6, 6, 2))
    proj = random_weights((6, 6, 2), rng)

    def loss():
        return float(np.sum(stn.forward(x) * proj))

    stn.zero_grads()
    stn.forward(x)
    dx = stn.backward(proj)
    params = stn.params()
    grads = stn.grads()
    targets = [(x, dx)] + [(params[k], grads[k]) for k in params]
    assert grad_check(loss, targets, step=(1e-3, 1e-5), rng=rng, max_coords=8) <= 1e-4


def test_channel_attention_half_gate():
    rng = np.random.default_rng(6)
    att = ChannelAttention(4, 2, rng=rng)
    att.fc2.w[:] = 0.0
    att.fc2.b[:] = 0.0
    x = rng.standard_normal((3, 3, 4))
    np.testing.assert_array_equal(att.forward(x), 0.5 * x)


def test_channel_attention_weights_in_open_interval():
    rng = np.random.default_rng(7)
    for seed in range(5):
        r = np.random.default_rng(seed)
        att = ChannelAttention(6, 3, rng=r)
        phi = att.weights(r.standard_normal((4, 4, 6)))
        assert phi.shape == (6,)
        assert np.all(phi > 0.0) and np.all(phi < 1.0)


def test_channel_attention_gradients():
    rng = np.random.default_rng(8)
    att = ChannelAttention(4, 2, rng=rng)
    x = rng.standard_normal((3, 3, 4))
    proj = random_weights((3, 3, 4), rng)

    def loss():
        return float(np.sum(att.forward(x) * proj))

    att.zero_grads()
    att.forward(x)
    dx = att.backward(proj)
    params = att.params()
    grads = att.grads()
    targets = [(x, dx)] + [(params[k], grads[k]) for k in params]
    assert grad_check(loss, targets, step=1e-4, rng=rng, max_coords=8) <= 1e-4


def test_channel_attention_homogeneous_with_frozen_gate():
    rng = np.random.default_rng(9)
    att = ChannelAttention(4, 2, rng=rng)
    x = rng.standard_normal((3, 3, 4))
    phi = att.weights(x)
    att.weights = lambda v, training=False: phi
    base = att.forward(x)
    np.testing.assert_allclose(att.forward(2.5 * x), 2.5 * base, rtol=1e-12)


def test_head_identity_start_reduces_to_attention():
    rng = np.random.default_rng(10)
    head = SpatialAware((6, 6), 2, MICRO_SPECS, reduction=2, rng=rng)
    x = rng.standard_normal((6, 6, 2))
    np.testing.assert_array_equal(head.forward(x), head.att.forward(x))


def test_head_end_to_end_gradients():
    rng = np.random.default_rng(11)
    head = SpatialAware((6, 6), 2, MICRO_SPECS, reduction=2, rng=rng)
    head.stn.loc.fc.w[:] = rng.standard_normal(head.stn.loc.fc.w.shape) * 0.02
    head.stn.loc.fc.b[:] += np.array([0.03, -0.01, 0.07, 0.02, -0.04, 0.05])
    x = rng.standard_normal((6, 6, 2))
    proj = random_weights((6, 6, 2), rng)

    def loss():
        return float(np.sum(head.forward(x) * proj))

    head.zero_grads()
    head.forward(x)
    dx = head.backward(proj)
    params = head.params()
    grads = head.grads()
    targets = [(x, dx)] + [(params[k], grads[k]) for k in params]
    assert grad_check(loss, targets, step=(1e-3, 1e-5), rng=rng, max_coords=8) <= 1e-4


def test_preset_head_stacks_fit_their_maps():
    rng = np.random.default_rng(12)
    desk = SpatialAware((8, 8), 32, head_conv_specs("desk"), HEAD_REDUCTION["desk"], rng=rng)
    x = rng.standard_normal((8, 8, 32))
    assert desk.forward(x).shape == (8, 8, 32)
    assert desk.stn.loc.flat_dim == 2 * 2 * 16
    paper = SpatialAware((21, 21), 16, head_conv_specs("paper"), HEAD_REDUCTION["paper"], rng=rng)
    x = rng.standard_normal((21, 21, 16))
    assert paper.forward(x).shape == (21, 21, 16)
    assert paper.stn.loc.flat_dim == 1 * 1 * 32


def test_shared_head_aliases_params():
    rng = np.random.default_rng(13)
    head = SpatialAware((6, 6), 2, MICRO_SPECS, reduction=2, rng=rng)
    twin = head.share()
    for k, v in head.params().items():
        assert twin.params()[k] is v
    x = rng.standard_normal((6, 6, 2))
    np.testing.assert_array_equal(twin.forward(x), head.forward(x))
