import numpy as np
import pytest

from linfdist.layers import (AffineLayer, ConvLpDistLayer, LpDistLayer,
                             MeanShiftNorm, build_base_map, gaussian_init,
                             identity_init)

from conftest import fd_gradient, naive_pnorm


def _dist_layer(W, b=None, dtype=np.float64):
    W = np.asarray(W, dtype=dtype)
    layer = LpDistLayer(W.shape[1], W.shape[0], bias=b is not None, dtype=dtype)
    layer.W[:] = W
    if b is not None:
        layer.b[:] = np.asarray(b, dtype=dtype)
    return layer


# -- single neuron ------------------------------------------------------------

def test_neuron_inf_distance():
    layer = _dist_layer([[0.0, 0.0]], b=[0.0])
    out = layer.forward(np.array([[1.0, 2.0]]), np.inf)
    assert out[0, 0] == 2.0


def test_neuron_zero_distance_gives_bias():
    layer = _dist_layer([[0.7, -1.2]], b=[3.5])
    for p in (1, 2, 8, np.inf):
        out = layer.forward(np.array([[0.7, -1.2]]), p)
        assert out[0, 0] == 3.5


def test_neuron_p2_plus_bias():
    layer = _dist_layer([[0.0, 0.0]], b=[1.0])
    out = layer.forward(np.array([[3.0, 4.0]]), 2)
    assert out[0, 0] == pytest.approx(6.0, rel=1e-12)


# -- batched forward ----------------------------------------------------------

def test_forward_symmetry():
    layer = _dist_layer([[0.0]], b=[0.0])
    out = layer.forward(np.array([[5.0], [-5.0]]), np.inf)
    np.testing.assert_array_equal(out, [[5.0], [5.0]])


def test_forward_identity_init_column_shift(rng):
    layer = LpDistLayer(3, 3, dtype=np.float64)
    identity_init(layer, rng, c0=-10.0)
    assert np.abs(layer.W - np.diag(np.diag(layer.W))).max() < 8
    X = rng.uniform(-1, 1, (20, 3))
    out = layer.forward(X, np.inf)
    np.testing.assert_array_equal(out, X + 10.0)


def test_forward_matches_scalar_oracle(rng):
    layer = LpDistLayer(4, 4, dtype=np.float64)
    layer.W[:] = rng.standard_normal((4, 4))
    X = rng.random((6, 4))
    out = layer.forward(X, 8)
    for n in range(6):
        for k in range(4):
            assert out[n, k] == pytest.approx(naive_pnorm(X[n] - layer.W[k], 8),
                                              rel=1e-6)


def test_forward_rejects_wrong_width():
    layer = _dist_layer([[0.0, 0.0]])
    with pytest.raises(ValueError):
        layer.forward(np.zeros((1, 3)), 2)


# -- backward -----------------------------------------------------------------

def test_backward_p2_unit_direction():
    layer = _dist_layer([[0.0, 0.0]])
    X = np.array([[3.0, 4.0]])
    layer.forward(X, 2, with_grad=True)
    gX = layer.backward(np.array([[1.0]]))
    np.testing.assert_allclose(layer.gW, [[-0.6, -0.8]], rtol=1e-12)
    np.testing.assert_allclose(gX, [[0.6, 0.8]], rtol=1e-12)


def test_backward_inf_single_coordinate():
    layer = _dist_layer([[0.0, 0.0]])
    X = np.array([[1.0, 5.0]])
    layer.forward(X, np.inf, with_grad=True)
    layer.backward(np.array([[1.0]]))
    np.testing.assert_array_equal(layer.gW, [[0.0, -1.0]])


@pytest.mark.parametrize("p", [2.0, 8.0, 20.0])
def test_backward_matches_finite_differences(rng, p):
    layer = LpDistLayer(5, 3, bias=True, dtype=np.float64)
    layer.W[:] = rng.standard_normal((3, 5))
    layer.b[:] = rng.standard_normal(3)
    X = rng.random((4, 5)) + 0.05
    up = rng.standard_normal((4, 3))

    layer.forward(X, p, with_grad=True)
    layer.zero_grads()
    gX = layer.backward(up)

    def loss():
        return float((layer.forward(X, p) * up).sum())

    for ix, num in fd_gradient(loss, layer.W, entries=[(0, 0), (1, 3), (2, 4)]).items():
        assert layer.gW[ix] == pytest.approx(num, rel=1e-4, abs=1e-9)
    for ix, num in fd_gradient(loss, X, entries=[(0, 0), (3, 2)]).items():
        assert gX[ix] == pytest.approx(num, rel=1e-4, abs=1e-9)
    for ix, num in fd_gradient(loss, layer.b, entries=[(0,), (2,)]).items():
        assert layer.gb[ix] == pytest.approx(num, rel=1e-6, abs=1e-9)


def test_backward_requires_forward_cache():
    layer = _dist_layer([[0.0]])
    with pytest.raises(RuntimeError):
        layer.backward(np.ones((1, 1)))


# -- convolution --------------------------------------------------------------

def test_conv_1x1_kernel_equals_dense_per_pixel(rng):
    conv = ConvLpDistLayer(2, 3, 1, dtype=np.float64)
    conv.K[:] = rng.standard_normal(conv.K.shape)
    X = rng.random((2, 2, 4, 4))
    out = conv.forward(X, 8)
    dense = LpDistLayer(2, 3, dtype=np.float64)
    dense.W[:] = conv.K.reshape(3, 2)
    for y in range(4):
        for x in range(4):
            want = dense.forward(X[:, :, y, x], 8)
            np.testing.assert_allclose(out[:, :, y, x], want, rtol=1e-12)


def test_conv_zero_kernel_constant_image():
    conv = ConvLpDistLayer(1, 1, 3, padding=1, pad_value=0.0, dtype=np.float64)
    c = 0.625
    X = np.full((1, 1, 5, 5), c)
    out = conv.forward(X, np.inf)
    assert out.shape == (1, 1, 5, 5)
    np.testing.assert_array_equal(out[0, 0, 1:-1, 1:-1], np.full((3, 3), c))


def test_conv_matches_sliding_window_oracle(rng):
    conv = ConvLpDistLayer(2, 3, 3, stride=2, padding=0, dtype=np.float64)
    conv.K[:] = rng.standard_normal(conv.K.shape)
    X = rng.random((1, 2, 5, 5))
    out = conv.forward(X, 8)
    assert out.shape == (1, 3, 2, 2)
    for k in range(3):
        for oy in range(2):
            for ox in range(2):
                patch = X[0, :, oy * 2:oy * 2 + 3, ox * 2:ox * 2 + 3]
                want = naive_pnorm((patch - conv.K[k]).ravel(), 8)
                assert out[0, k, oy, ox] == pytest.approx(want, rel=1e-6)


def test_conv_pad_value_respected(rng):
    conv = ConvLpDistLayer(1, 1, 3, padding=1, pad_value=0.5, dtype=np.float64)
    X = np.zeros((1, 1, 3, 3))
    out = conv.forward(X, np.inf)
    # corner window sees five 0.5 pads and four zeros
    assert out[0, 0, 0, 0] == 0.5


@pytest.mark.parametrize("p", [2.0, 8.0, 20.0])
def test_conv_backward_matches_finite_differences(rng, p):
    conv = ConvLpDistLayer(2, 2, 2, stride=1, padding=1, dtype=np.float64)
    conv.K[:] = rng.standard_normal(conv.K.shape)
    X = rng.random((2, 2, 3, 3)) + 0.05
    up = rng.standard_normal((2, 2, 4, 4))

    conv.forward(X, p, with_grad=True)
    conv.zero_grads()
    gX = conv.backward(up)

    def loss():
        return float((conv.forward(X, p) * up).sum())

    for ix, num in fd_gradient(loss, conv.K,
                               entries=[(0, 0, 0, 0), (1, 1, 1, 1)]).items():
        assert conv.gK[ix] == pytest.approx(num, rel=1e-4, abs=1e-9)
    for ix, num in fd_gradient(loss, X, entries=[(0, 0, 0, 0), (1, 1, 2, 2)]).items():
        assert gX[ix] == pytest.approx(num, rel=1e-4, abs=1e-9)


def test_conv_rejects_bad_geometry():
    with pytest.raises(ValueError):
        ConvLpDistLayer(1, 1, 0)
    conv = ConvLpDistLayer(1, 1, 5)
    with pytest.raises(ValueError):
        conv.forward(np.zeros((1, 1, 3, 3)), 2)


# -- mean shift ---------------------------------------------------------------

def test_meanshift_train_update():
    ms = MeanShiftNorm(1, momentum=0.1, dtype=np.float64)
    out = ms.forward(np.array([[1.0], [3.0]]), training=True)
    np.testing.assert_array_equal(out, [[-1.0], [1.0]])
    np.testing.assert_allclose(ms.running_mean, [0.2], rtol=1e-12)
    assert ms.mode == "train"


def test_meanshift_eval_no_state_change():
    ms = MeanShiftNorm(1, momentum=0.1, dtype=np.float64)
    ms.running_mean[:] = [2.0]
    out = ms.forward(np.array([[5.0]]), training=False)
    np.testing.assert_array_equal(out, [[3.0]])
    np.testing.assert_array_equal(ms.running_mean, [2.0])
    assert ms.mode == "eval"


def test_meanshift_eval_is_invertible_shift(rng):
    ms = MeanShiftNorm(4, dtype=np.float64)
    ms.running_mean[:] = rng.standard_normal(4)
    X = rng.standard_normal((7, 4))
    out = ms.forward(X, training=False)
    # inverse up to one rounding of the subtract/add pair
    np.testing.assert_allclose(out + ms.running_mean, X, rtol=0, atol=1e-15)


def test_meanshift_empty_train_batch():
    ms = MeanShiftNorm(2)
    with pytest.raises(ValueError):
        ms.forward(np.zeros((0, 2), dtype=np.float32), training=True)


def test_meanshift_train_backward_centers_gradient():
    ms = MeanShiftNorm(1, dtype=np.float64)
    ms.forward(np.array([[2.0], [7.0]]), training=True, with_grad=True)
    g = ms.backward(np.array([[1.0], [0.0]]))
    np.testing.assert_allclose(g, [[0.5], [-0.5]], rtol=1e-12)


def test_meanshift_channel_stats_for_images(rng):
    ms = MeanShiftNorm(3, momentum=0.1, dtype=np.float64)
    X = rng.random((4, 3, 2, 2))
    out = ms.forward(X, training=True)
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), np.zeros(3), atol=1e-12)


# -- initialization -----------------------------------------------------------

def test_gaussian_init_deterministic():
    a = LpDistLayer(6, 5)
    b = LpDistLayer(6, 5)
    gaussian_init(a, np.random.default_rng(0))
    gaussian_init(b, np.random.default_rng(0))
    assert np.array_equal(a.W, b.W)
    c = LpDistLayer(6, 5)
    gaussian_init(c, np.random.default_rng(1))
    assert not np.array_equal(a.W, c.W)


def test_gaussian_init_moments():
    layer = LpDistLayer(5120, 5120)
    gaussian_init(layer, np.random.default_rng(3))
    assert abs(float(layer.W.mean())) < 0.01
    assert abs(float(layer.W.std()) - 1.0) < 0.01


def test_identity_init_diagonal_value(rng):
    layer = LpDistLayer(3, 3, dtype=np.float64)
    identity_init(layer, rng, c0=-10.0)
    np.testing.assert_array_equal(np.diag(layer.W), [-10.0, -10.0, -10.0])


def test_identity_init_rejects_rectangular(rng):
    with pytest.raises(ValueError):
        identity_init(LpDistLayer(3, 4), rng)


def test_identity_init_composes_with_meanshift(rng):
    layer = LpDistLayer(4, 4, dtype=np.float64)
    identity_init(layer, rng)
    ms = MeanShiftNorm(4, dtype=np.float64)
    X = rng.uniform(-1, 1, (10, 4))
    out = ms.forward(layer.forward(X, np.inf), training=True)
    np.testing.assert_allclose(out, X - X.mean(axis=0), atol=1e-12)


# -- base maps ----------------------------------------------------------------

def test_base_map_projection(rng):
    row, bias = build_base_map("projection", (0,), 2, box_bound=10.0)
    layer = _dist_layer([row], b=[bias])
    out = layer.forward(np.array([[0.3, -0.5]]), np.inf)
    assert out[0, 0] == pytest.approx(0.3, abs=1e-12)


def test_base_map_negation(rng):
    row, bias = build_base_map("negation", (1,), 2, box_bound=10.0)
    layer = _dist_layer([row], b=[bias])
    out = layer.forward(np.array([[0.3, -0.5]]), np.inf)
    assert out[0, 0] == pytest.approx(0.5, abs=1e-12)


def test_base_map_maximum_grid():
    row, bias = build_base_map("maximum", (0, 1), 2, box_bound=10.0)
    layer = _dist_layer([row], b=[bias])
    xs = np.linspace(-1, 1, 10)
    grid = np.array([[a, b] for a in xs for b in xs])
    out = layer.forward(grid, np.inf)[:, 0]
    np.testing.assert_allclose(out, np.maximum(grid[:, 0], grid[:, 1]), atol=1e-12)
    assert layer.forward(np.array([[0.3, 0.7]]), np.inf)[0, 0] == pytest.approx(0.7)


def test_base_map_unknown_kind():
    with pytest.raises(ValueError):
        build_base_map("minimum", (0,), 2, 1.0)
