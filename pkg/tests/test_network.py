import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tansens.network import (Network, ParamLayout, activation_patterns, flatten, forward, forward_batch,
                             init_network, load_checkpoint, min_abs_preactivation, predict, save_checkpoint,
                             unflatten)
from tansens.tensor_core import make_rng

dims_st = st.lists(st.integers(1, 9), min_size=2, max_size=5).map(tuple)


def test_param_count_large_architecture():
    # counted from the layout only; nothing is allocated
    assert ParamLayout((768, 3000, 3000, 3000, 10)).n_params == 20_334_000


def test_param_count_small():
    assert ParamLayout((2, 2, 1)).n_params == 6
    assert ParamLayout((2, 2, 1), biasless=False).n_params == 9
    assert init_network((2, 2, 1)).n_params == 6


@pytest.mark.parametrize("dims", [(3,), (), (2, 0, 1)])
def test_invalid_dims(dims):
    with pytest.raises(ValueError):
        ParamLayout(dims)


def test_zero_scale_gives_zero_function():
    net = init_network((2, 1), seed=3, scale=0.0)
    assert np.all(net.weights[0] == 0)
    assert predict(net, np.random.default_rng(0).standard_normal((5, 2))).tolist() == [[0.0]] * 5


def test_same_seed_same_params():
    a, b = init_network((4, 5, 2), seed=11), init_network((4, 5, 2), seed=11)
    assert np.array_equal(flatten(a), flatten(b))
    assert not np.array_equal(flatten(a), flatten(init_network((4, 5, 2), seed=12)))


def test_init_statistics():
    net = init_network((400, 300, 1), seed=0)
    assert np.std(net.weights[0]) == pytest.approx(np.sqrt(2 / 400), rel=0.02)


def test_single_layer_hand_example():
    net = Network((3, 1), [np.array([[1.0, 2.0, 3.0]])])
    out, pattern = forward(net, np.ones(3))
    assert out.tolist() == [6.0]
    assert pattern == ()


def test_origin_maps_to_zero_with_empty_pattern():
    net = init_network((4, 6, 3, 2), seed=1)
    out, pattern = forward(net, np.zeros(4))
    assert np.all(out == 0)
    assert all(not p.any() for p in pattern)


def test_strict_positivity_defines_active():
    net = Network((1, 2, 1), [np.array([[1.0], [-1.0]]), np.array([[1.0, 1.0]])])
    _, pattern = forward(net, np.array([0.0]))
    assert pattern[0].tolist() == [0, 0]
    _, pattern = forward(net, np.array([2.0]))
    assert pattern[0].tolist() == [1, 0]


def test_forward_rejects_bad_inputs():
    net = init_network((3, 2, 1))
    with pytest.raises(ValueError):
        forward(net, np.ones(4))
    with pytest.raises(ValueError):
        forward(net, np.ones((2, 3)))


def test_bias_shapes_validated():
    with pytest.raises(ValueError):
        Network((2, 1), [np.ones((1, 2))], [np.ones(2)])
    with pytest.raises(ValueError):
        Network((2, 1), [np.ones((2, 2))])


def test_forward_batch_matches_manual_loop():
    net = init_network((3, 4, 4, 2), biasless=False, seed=2)
    for b in net.biases:
        b[:] = 0.1
    X = make_rng(0).standard_normal((6, 3))
    out, pre, acts = forward_batch(net, X)
    assert acts[0] is not None and np.array_equal(acts[0], X)
    for j, x in enumerate(X):
        a = x
        for k in range(net.n_layers):
            z = net.weights[k] @ a + net.biases[k]
            a = np.maximum(z, 0) if k < net.n_layers - 1 else z
        np.testing.assert_allclose(out[j], a, rtol=1e-14, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(dims_st, st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_positive_homogeneity(dims, seed, c):
    net = init_network(dims, seed=seed)
    x = make_rng(seed + 1).standard_normal(dims[0])
    f1, p1 = forward(net, x)
    f2, p2 = forward(net, c * x)
    np.testing.assert_allclose(f2, c * f1, rtol=1e-12, atol=1e-300)
    assert all(np.array_equal(a, b) for a, b in zip(p1, p2))


def test_piecewise_linear_inside_region():
    r = make_rng(4)
    net = init_network((3, 8, 8, 1), seed=4)
    x = r.standard_normal(3)
    x2 = x + 1e-4 * r.standard_normal(3)
    pats = activation_patterns(net, np.stack([x, x2]))
    assert all(np.array_equal(p[0], p[1]) for p in pats)
    for alpha in (0.0, 0.25, 0.5, 1.0):
        mid = alpha * x + (1 - alpha) * x2
        lhs = forward(net, mid)[0]
        rhs = alpha * forward(net, x)[0] + (1 - alpha) * forward(net, x2)[0]
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


def test_linear_in_last_layer_weights():
    r = make_rng(5)
    net = init_network((3, 5, 2), seed=5)
    x = r.standard_normal(3)
    A, B = r.standard_normal((2, 5)), r.standard_normal((2, 5))
    def f(W):
        return forward(Network(net.dims, [net.weights[0], W]), x)[0]
    np.testing.assert_allclose(f(2 * A - B), 2 * f(A) - f(B), rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(dims_st, st.booleans(), st.integers(0, 2**31))
def test_flatten_roundtrip(dims, biasless, seed):
    net = init_network(dims, biasless, seed)
    v = flatten(net)
    assert v.shape == (net.n_params,)
    back = unflatten(net.layout, v)
    assert np.array_equal(flatten(back), v)


def test_flat_order_is_weight_then_bias_per_layer():
    net = Network((2, 2, 1), [np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0, 6.0]])],
                  [np.array([7.0, 8.0]), np.array([9.0])])
    assert flatten(net).tolist() == [1, 2, 3, 4, 7, 8, 5, 6, 9]
    mask = net.layout.bias_mask()
    assert mask.tolist() == [False] * 4 + [True] * 2 + [False] * 2 + [True]
    assert net.layout.weight_slice(1) == slice(6, 8)
    with pytest.raises(IndexError):
        ParamLayout((2, 1)).bias_slice(0)


def test_unflatten_wrong_length():
    with pytest.raises(ValueError, match="length"):
        unflatten(ParamLayout((2, 2, 1)), np.zeros(5))


def test_min_abs_preactivation():
    net = Network((1, 2, 1), [np.array([[1.0], [-3.0]]), np.ones((1, 2))])
    assert min_abs_preactivation(net, np.array([[0.5]])).tolist() == [0.5]
    assert np.isinf(min_abs_preactivation(init_network((2, 1)), np.ones((1, 2)))[0])


@pytest.mark.parametrize("biasless", [True, False])
def test_checkpoint_roundtrip_bit_exact(tmp_path, biasless):
    net = init_network((5, 7, 3), biasless, seed=9)
    if not biasless:
        net.biases[0][:] = np.pi
    path = tmp_path / "net.ckpt"
    save_checkpoint(str(path), net)
    back = load_checkpoint(str(path))
    assert back.dims == net.dims and back.biasless == biasless
    assert flatten(back).tobytes() == flatten(net).tobytes()
    assert not (tmp_path / "net.ckpt.tmp").exists()


def test_checkpoint_rejects_corruption(tmp_path):
    path = tmp_path / "net.ckpt"
    save_checkpoint(str(path), init_network((3, 2, 1)))
    raw = path.read_bytes()
    (tmp_path / "bad").write_bytes(b"XX" + raw[2:])
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(str(tmp_path / "bad"))
    (tmp_path / "short").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="payload"):
        load_checkpoint(str(tmp_path / "short"))


def test_copy_is_independent():
    net = init_network((2, 3, 1), seed=0)
    dup = net.copy()
    dup.weights[0][0, 0] += 1.0
    assert net.weights[0][0, 0] != dup.weights[0][0, 0]
