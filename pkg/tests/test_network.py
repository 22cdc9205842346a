import numpy as np
import pytest

from linfdist.layers import (AffineLayer, LpDistLayer, MeanShiftNorm,
                             build_base_map)
from linfdist.network import (Network, build_network, parse_arch,
                              validate_composite, validate_pure)

from conftest import fd_gradient


def _terminal(W, b):
    layer = LpDistLayer(np.shape(W)[1], np.shape(W)[0], bias=True,
                        dtype=np.float64)
    layer.W[:] = W
    layer.b[:] = b
    return layer


def test_single_layer_negated_logit():
    net = Network([_terminal([[0.0]], [0.0])], negate_output=True)
    out = net.logits(np.array([[2.0]]))
    assert out[0, 0] == -2.0


def test_composite_identity_head_passes_features(rng):
    net = build_network("dist:6x2+mlp:6", 5, 6, seed=0, dtype=np.float64)
    body, head = net.split_head()
    ext = Network(body, negate_output=False)
    # make the head transparent: identity weights, no activation
    for layer in head:
        layer.W[:] = np.eye(6)
        layer.b[:] = 0
        layer.activation = "none"
    X = rng.random((3, 5))
    np.testing.assert_allclose(net.logits(X), ext.logits(X), rtol=1e-12)


def test_eval_mode_is_pure(rng):
    net = build_network("dist:8x2", 6, 3, seed=1)
    X = rng.random((4, 6), dtype=np.float32)
    a = net.logits(X)
    b = net.logits(X)
    assert np.array_equal(a, b)
    rm_before = [l.running_mean.copy() for l in net.layers
                 if isinstance(l, MeanShiftNorm)]
    net.logits(X)
    rm_after = [l.running_mean for l in net.layers
                if isinstance(l, MeanShiftNorm)]
    for x, y in zip(rm_before, rm_after):
        assert np.array_equal(x, y)


def test_lipschitz_small_nets(rng):
    for depth, width in [(2, 8), (4, 16), (6, 24)]:
        net = build_network(f"dist:{width}x{depth}", 10, 4, seed=depth)
        x1 = rng.random((500, 10), dtype=np.float32)
        x2 = x1 + 0.3 * rng.standard_normal((500, 10)).astype(np.float32)
        g1, g2 = net.logits(x1), net.logits(x2)
        lhs = np.abs(g1 - g2).max(axis=1)
        rhs = np.abs(x1 - x2).max(axis=1)
        assert (lhs <= rhs + 1e-5).all()


def test_per_layer_lipschitz_at_inf(rng):
    x1 = rng.random((200, 8), dtype=np.float32)
    x2 = x1 + 0.1 * rng.standard_normal((200, 8)).astype(np.float32)
    diff = np.abs(x1 - x2).max(axis=1)

    dist = LpDistLayer(8, 5)
    dist.W[:] = rng.standard_normal((5, 8)).astype(np.float32)
    d = np.abs(dist.forward(x1, np.inf) - dist.forward(x2, np.inf)).max(axis=1)
    assert (d <= diff + 1e-5).all()

    ms = MeanShiftNorm(8)
    ms.running_mean[:] = rng.standard_normal(8).astype(np.float32)
    d = np.abs(ms.forward(x1) - ms.forward(x2)).max(axis=1)
    assert (d <= diff + 1e-5).all()

    assert (np.abs((-x1) - (-x2)).max(axis=1) <= diff + 1e-5).all()


def test_identity_layers_transparent_after_centering(rng):
    base = build_network("dist:6x1", 6, 3, seed=5, dtype=np.float64)
    deep = build_network("dist:6x4", 6, 3, seed=5, dtype=np.float64)
    # same first layer and terminal layer; middle layers identity-initialized
    deep.layers[0].W[:] = base.layers[0].W
    deep.layers[-1].W[:] = base.layers[-1].W
    deep.layers[-1].b[:] = base.layers[-1].b
    X = rng.uniform(0, 1, (32, 6))
    a = base.forward(X, training=True, p=np.inf)
    b = deep.forward(X, training=True, p=np.inf)
    np.testing.assert_allclose(a, b, atol=1e-5)


def test_base_map_network_exactness(rng):
    # one layer computing (x1, x2, max(x1, x2)), then a projection readout
    rows = [build_base_map("projection", (0,), 2, 10.0),
            build_base_map("projection", (1,), 2, 10.0),
            build_base_map("maximum", (0, 1), 2, 10.0)]
    l1 = LpDistLayer(2, 3, bias=True, dtype=np.float64)
    for k, (row, bias) in enumerate(rows):
        l1.W[k] = row
        l1.b[k] = bias
    l2 = LpDistLayer(3, 1, bias=True, dtype=np.float64)
    row, bias = build_base_map("projection", (2,), 3, 40.0)
    l2.W[0] = row
    l2.b[0] = bias
    net = Network([l1, l2], negate_output=False)
    X = rng.uniform(-1, 1, (1000, 2))
    out = net.logits(X)[:, 0]
    np.testing.assert_allclose(out, np.maximum(X[:, 0], X[:, 1]), atol=1e-6)


@pytest.mark.parametrize("p", [2.0, 8.0, 20.0])
def test_network_backward_finite_differences(rng, p):
    net = build_network("dist:5x2", 4, 3, seed=2, dtype=np.float64)
    X = rng.random((3, 4)) + 0.02
    up = rng.standard_normal((3, 3))
    net.forward(X, training=False, with_grad=True, p=p)
    net.zero_grads()
    gX = net.backward(X, up, need_input_grad=True)

    def loss():
        return float((net.forward(X, p=p) * up).sum())

    checked = 0
    for arr, g in zip(net.params(), net.grads()):
        ixs = [tuple(np.unravel_index(i, arr.shape))
               for i in range(0, arr.size, max(1, arr.size // 3))]
        for ix, num in fd_gradient(loss, arr, entries=ixs).items():
            assert g[ix] == pytest.approx(num, rel=1e-4, abs=1e-8)
            checked += 1
    for ix, num in fd_gradient(loss, X, entries=[(0, 0), (2, 3)]).items():
        assert gX[ix] == pytest.approx(num, rel=1e-4, abs=1e-8)
    assert checked >= 6


def test_zero_upstream_gives_zero_gradients(rng):
    net = build_network("dist:5x2", 4, 3, seed=3, dtype=np.float64)
    X = rng.random((2, 4))
    net.forward(X, with_grad=True, p=8)
    net.zero_grads()
    net.backward(X, np.zeros((2, 3)))
    for g in net.grads():
        assert not g.any()


def test_stale_cache_rejected(rng):
    net = build_network("dist:5x1", 4, 2, seed=0)
    X = rng.random((2, 4), dtype=np.float32)
    net.forward(X, with_grad=True)
    with pytest.raises(RuntimeError):
        net.backward(X.copy(), np.ones((2, 2), dtype=np.float32))
    with pytest.raises(RuntimeError):
        Network([LpDistLayer(4, 2, bias=True)], True).backward(
            X, np.ones((2, 2)))


def test_parse_arch_variants():
    assert parse_arch("dist:512x3") == ([], [512, 512, 512], [])
    assert parse_arch("dist:64,32+mlp:16") == ([], [64, 32], [16])
    conv, dist, mlp = parse_arch("conv:8k3s2p1,16k5+dist:32x1+mlp:8")
    assert conv == [(8, 3, 2, 1), (16, 5, 1, 2)]
    assert dist == [32] and mlp == [8]
    with pytest.raises(ValueError):
        parse_arch("mlp:8")
    with pytest.raises(ValueError):
        parse_arch("foo:1")


def test_build_network_kinds():
    pure = build_network("dist:8x2", 6, 3, seed=0)
    assert pure.kind == "pure"
    validate_pure(pure)
    comp = build_network("dist:8x2+mlp:8", 6, 3, seed=0)
    assert comp.kind == "composite"
    validate_composite(comp)
    assert comp.layers[-1].activation == "none"
    assert comp.layers[-2].activation == "tanh"


def test_build_conv_network_forward(rng):
    net = build_network("conv:4k3s2+dist:16x1", (1, 8, 8), 3, seed=0)
    X = rng.random((2, 1, 8, 8), dtype=np.float32)
    out = net.logits(X)
    assert out.shape == (2, 3)
    # conv then flatten then dense layers; gradient path intact
    out = net.forward(X, training=False, with_grad=True, p=8.0)
    net.zero_grads()
    g = net.backward(X, np.ones_like(out), need_input_grad=True)
    assert g.shape == X.shape and np.isfinite(g).all()
