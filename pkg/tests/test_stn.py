import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from signnet import ops
from signnet.errors import ConfigError, ShapeError
from signnet.gradcheck import check_function
from signnet.network import build_network, preset_spec
from signnet.optim import msra_init
from signnet.stn import (
    IDENTITY_THETA,
    ST1,
    ST2,
    ST3,
    LocalisationNet,
    SpatialTransformer,
    STSpec,
    affine_grid,
    bilinear_sample,
    localize,
    st_layer,
    target_coordinates,
)
from signnet.tensor import Tensor

SMALL = STSpec(3, 3, 2, False, 4, 3, 1, True, 6, 6)


def trainable_scalars(module):
    return sum(p.size for p in module.parameters())


def bilinear_oracle(img, xs, ys):
    """Scalar reference: pixel-unit bilinear interpolation with zero outside."""
    h, w = img.shape

    def pix(r, c):
        return img[r, c] if 0 <= r < h and 0 <= c < w else 0.0

    out = np.zeros(xs.shape)
    for idx in np.ndindex(xs.shape):
        px = (xs[idx] + 1) * (w - 1) / 2
        py = (ys[idx] + 1) * (h - 1) / 2
        x0, y0 = int(np.floor(px)), int(np.floor(py))
        fx, fy = px - x0, py - y0
        out[idx] = ((1 - fx) * (1 - fy) * pix(y0, x0) + fx * (1 - fy) * pix(y0, x0 + 1)
                    + (1 - fx) * fy * pix(y0 + 1, x0) + fx * fy * pix(y0 + 1, x0 + 1))
    return out


# ---------------------------------------------------------------- localisation


def test_st1_parameter_count_and_output():
    net = LocalisationNet(1, 128, 128, ST1)
    theta = localize(np.zeros((2, 1, 128, 128)), net)
    assert theta.shape == (2, 2, 3)
    assert trainable_scalars(net) - sum(p.size for n, p in net.named_parameters()
                                        if n.rsplit(".", 1)[-1] in ("gamma", "beta", "slope")) == 3_014_918


def test_st3_parameter_count():
    net = LocalisationNet(192, 16, 16, ST3)
    weights = sum(p.size for n, p in net.named_parameters() if n.rsplit(".", 1)[-1] not in ("gamma", "beta", "slope"))
    assert weights == 1_070_214
    assert f"{weights // 1_000_000}M" == "1M"


def test_identity_initialisation_gives_identity_theta(rng):
    net = msra_init(LocalisationNet(2, 9, 9, SMALL), 5)
    for _ in range(3):
        theta = localize(rng.normal(size=(4, 2, 9, 9)) * 10, net, ops.TRAIN).data
        np.testing.assert_array_equal(theta, np.broadcast_to(IDENTITY_THETA.reshape(2, 3), (4, 2, 3)))


def test_localisation_channel_mismatch():
    net = LocalisationNet(2, 9, 9, SMALL)
    with pytest.raises(ShapeError):
        net(np.zeros((1, 3, 9, 9)))


def test_stspec_regression_outputs_fixed():
    with pytest.raises(ConfigError):
        STSpec(1, 3, 1, False, 1, 3, 1, False, 2, 2, regression_outputs=4)
    assert STSpec.from_dict(ST2.to_dict()) == ST2


# ---------------------------------------------------------------- affine grid


def test_identity_grid_is_target_coordinates():
    grid = affine_grid(np.array([IDENTITY_THETA]), 5, 7).data
    base = target_coordinates(5, 7)
    np.testing.assert_array_equal(grid[0], base[..., :2])
    np.testing.assert_allclose(base[0, :, 0], -1 + 2 * np.arange(7) / 6)
    np.testing.assert_allclose(base[:, 0, 1], -1 + 2 * np.arange(5) / 4)


def test_scaling_grid_halves_coordinates():
    grid = affine_grid(np.array([[0.5, 0, 0, 0, 0.5, 0]]), 6, 6).data
    np.testing.assert_allclose(grid[0], target_coordinates(6, 6)[..., :2] / 2, rtol=0, atol=1e-15)


def test_translation_grid_hand_computed():
    grid = affine_grid(np.array([[1, 0, 0.5, 0, 1, 0]]), 4, 4).data[0]
    thirds = [-1.0, -1 / 3, 1 / 3, 1.0]
    for i in range(4):
        for j in range(4):
            assert grid[i, j, 0] == pytest.approx(thirds[j] + 0.5, abs=1e-15)
            assert grid[i, j, 1] == pytest.approx(thirds[i], abs=1e-15)


def test_affine_grid_accepts_both_layouts(rng):
    t = rng.normal(size=(3, 6))
    np.testing.assert_array_equal(affine_grid(t, 3, 4).data, affine_grid(t.reshape(3, 2, 3), 3, 4).data)
    with pytest.raises(ShapeError):
        affine_grid(np.zeros((2, 5)), 3, 3)
    with pytest.raises(ConfigError):
        affine_grid(np.zeros((1, 6)), 0, 3)


@given(st.integers(0, 2 ** 31 - 1), st.floats(-4, 4), st.floats(-4, 4))
def test_grid_is_linear_in_theta(seed, alpha, beta):
    r = np.random.default_rng(seed)
    t1, t2 = r.normal(size=(2, 6)), r.normal(size=(2, 6))
    lhs = affine_grid(alpha * t1 + beta * t2, 4, 5).data
    rhs = alpha * affine_grid(t1, 4, 5).data + beta * affine_grid(t2, 4, 5).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + np.abs(rhs).max()))


# ---------------------------------------------------------------- bilinear sampler


@pytest.mark.parametrize("size", [(5, 5), (128, 128), (7, 3), (1, 4)])
def test_identity_grid_reproduces_input_bitwise(rng, size):
    h, w = size
    x = rng.normal(size=(2, 3, h, w))
    out = bilinear_sample(x, affine_grid(np.tile(IDENTITY_THETA, (2, 1)), h, w)).data
    np.testing.assert_array_equal(out, x)


def test_grid_outside_gives_zero(rng):
    w = 6
    margin = 1 + 2 / (w - 1)
    grid = np.full((1, 4, 4, 2), margin * 1.01)
    grid[..., 1] = -margin * 1.5
    assert np.all(bilinear_sample(rng.normal(size=(1, 2, 6, 6)), grid).data == 0.0)


def test_sampler_matches_scalar_oracle(rng):
    img = rng.normal(size=(5, 6))
    grid = rng.uniform(-1.3, 1.3, size=(1, 4, 3, 2))
    out = bilinear_sample(img[None, None], grid).data[0, 0]
    np.testing.assert_allclose(out, bilinear_oracle(img, grid[0, ..., 0], grid[0, ..., 1]), atol=1e-14)


def test_sampler_border_partially_weighted():
    img = np.ones((1, 1, 3, 3))
    # halfway between the last column and the virtual zero column beyond it
    grid = np.array([[[[1.5, 0.0]]]])
    assert bilinear_sample(img, grid).data.item() == pytest.approx(0.5)


def test_sampler_gradients_through_theta(rng):
    x = Tensor(rng.normal(size=(1, 1, 5, 5)), requires_grad=True)
    # generic values keep every node off integer pixel positions, where bilinear sampling has a kink
    theta = Tensor(np.array([[0.83, 0.13, 0.07, -0.17, 0.91, 0.043]]), requires_grad=True)
    r = rng.normal(size=(1, 1, 5, 5))
    results = check_function(lambda: ops.weighted_sum(bilinear_sample(x, affine_grid(theta, 5, 5)), r),
                             {"input": x, "theta": theta})
    assert all(res.max_rel_error < 1e-4 for res in results), results


def test_sampler_batch_mismatch():
    with pytest.raises(ShapeError):
        bilinear_sample(np.zeros((2, 1, 4, 4)), np.zeros((1, 4, 4, 2)))


# ---------------------------------------------------------------- transformer layer


@given(st.integers(0, 2 ** 31 - 1))
def test_st_layer_identity_at_init(seed):
    r = np.random.default_rng(seed)
    layer = msra_init(SpatialTransformer(2, 9, 9, SMALL), seed)
    x = r.normal(size=(3, 2, 9, 9)) * r.uniform(0.1, 100)
    out = st_layer(x, layer, ops.TRAIN)
    assert out.shape == x.shape
    assert np.max(np.abs(out.data - x)) == 0.0


def test_st_layer_undoes_one_pixel_translation(rng):
    h = w = 9
    original = rng.normal(size=(1, 1, h, w))
    shifted = np.zeros_like(original)
    shifted[..., :, 1:] = original[..., :, :-1]  # content moved one pixel right
    layer = SpatialTransformer(1, h, w, SMALL)
    layer.loc.regression.bias.data = np.array([1.0, 0.0, 2.0 / (w - 1), 0.0, 1.0, 0.0])
    out = st_layer(shifted, layer, ops.TRAIN).data
    np.testing.assert_allclose(out[..., :, :-1], original[..., :, :-1], atol=1e-12)


def test_st_layer_input_shape_checked():
    layer = SpatialTransformer(1, 8, 8, SMALL)
    with pytest.raises(ShapeError):
        layer(np.zeros((1, 1, 9, 8)))


def test_st_layer_gradients_every_localisation_parameter(rng):
    layer = msra_init(SpatialTransformer(2, 9, 9, SMALL), 3)
    layer.loc.regression.weight.data = rng.normal(0, 0.05, layer.loc.regression.weight.shape)
    layer.loc.regression.bias.data = np.array([0.9, 0.1, 0.05, -0.1, 0.95, 0.02])
    x = Tensor(rng.normal(size=(3, 2, 9, 9)), requires_grad=True)
    r = rng.normal(size=x.shape)
    tensors = {"input": x, **dict(layer.named_parameters())}
    results = check_function(lambda: ops.weighted_sum(layer(x), r), tensors, max_entries=6)
    assert {res.group for res in results} == set(tensors)
    assert max(res.max_rel_error for res in results) < 1e-4


def test_st_shapes_at_all_four_insertion_points():
    net = build_network(preset_spec("full"))
    sts = net.transformers()
    assert [s.label for s in sts] == ["ST1", "ST2", "ST3a", "ST3b"]
    assert [s.input_shape for s in sts] == [(1, 128, 128), (64, 32, 32), (192, 16, 16), (288, 16, 16)]
    for s in sts:
        assert s.output_shape(s.input_shape) == s.input_shape
