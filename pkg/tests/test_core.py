import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsegan.core import MaskedParam, Mlp, adam_step, apply_mask_change, mlp_backward, mlp_forward
from sparsegan.errors import ConfigError, InternalError, NonFiniteError


def random_net(rng, sizes, density=0.6):
    masks = [(rng.random((o, i)) < density).astype(float) for i, o in zip(sizes, sizes[1:])]
    net = Mlp.init(sizes, rng, masks)
    # non-zero biases and larger weights so few units sit exactly at a kink
    for p in net.layers:
        p.bias = rng.normal(size=p.bias.shape)
        p.weights = np.where(p.mask != 0, rng.normal(size=p.weights.shape), 0.0)
    return net


def naive_forward(net, x):
    """Loop-based reference: no numpy matmul, no shared code with the package."""
    out = []
    for row in np.asarray(x, dtype=float):
        h = list(row)
        for li, p in enumerate(net.layers):
            z = []
            for i in range(p.n_out):
                s = p.bias[i]
                for j in range(p.n_in):
                    s += h[j] * p.weights[i, j] * p.mask[i, j]
                z.append(s)
            h = [max(v, 0.0) for v in z] if li < len(net.layers) - 1 else z
        out.append(h)
    return np.array(out)


def test_forward_masked_entry_contributes_nothing():
    net = Mlp([MaskedParam([[2.0, 3.0]], [1.0], [[1, 0]])])
    y, _ = mlp_forward(net, [[1.0, 1.0]])
    assert y.tolist() == [[3.0]]


def test_forward_identity():
    net = Mlp([MaskedParam(np.eye(3), np.zeros(3), np.ones((3, 3)))])
    x = np.random.default_rng(0).normal(size=(5, 3))
    y, _ = mlp_forward(net, x)
    np.testing.assert_array_equal(y, x)


def test_forward_matches_naive_loop():
    rng = np.random.default_rng(1)
    net = random_net(rng, [2, 8, 1])
    x = rng.normal(size=(16, 2))
    y, cache = mlp_forward(net, x)
    np.testing.assert_allclose(y, naive_forward(net, x), rtol=0, atol=1e-12)
    assert len(cache) == 2


def test_forward_shape_mismatch():
    net = random_net(np.random.default_rng(2), [3, 4, 1])
    with pytest.raises(ConfigError):
        mlp_forward(net, np.zeros((2, 2)))


def test_layer_shapes_must_compose():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        Mlp([MaskedParam(rng.normal(size=(4, 2)), np.zeros(4), np.ones((4, 2))),
             MaskedParam(rng.normal(size=(1, 3)), np.zeros(1), np.ones((1, 3)))])


@pytest.mark.parametrize("seed", range(5))
def test_forward_masking_equivalence_bitwise(seed):
    rng = np.random.default_rng(seed)
    net = random_net(rng, [2, 16, 16, 1], density=0.4)
    dense = Mlp([MaskedParam(p.weights * p.mask, p.bias.copy(), np.ones_like(p.mask)) for p in net.layers])
    x = rng.normal(size=(32, 2))
    assert np.array_equal(mlp_forward(net, x)[0], mlp_forward(dense, x)[0])


def test_backward_single_linear_layer_is_input():
    for mask in ([[1, 1, 1]], [[0, 1, 0]], [[0, 0, 0]]):
        net = Mlp([MaskedParam([[0.3, -0.2, 0.5]], [0.1], mask)])
        x = np.array([[1.5, -2.0, 0.25]])
        _, cache = mlp_forward(net, x)
        grads, _ = mlp_backward(net, cache, np.ones((1, 1)))
        np.testing.assert_array_equal(grads[0][0], x)
        np.testing.assert_array_equal(grads[0][1], [1.0])


def test_backward_zero_upstream_gives_zero():
    rng = np.random.default_rng(3)
    net = random_net(rng, [2, 4, 1])
    _, cache = mlp_forward(net, rng.normal(size=(8, 2)))
    grads, gx = mlp_backward(net, cache, np.zeros((8, 1)))
    assert all(not gw.any() and not gb.any() for gw, gb in grads)
    assert not gx.any()


def test_backward_rejects_foreign_cache():
    rng = np.random.default_rng(4)
    a, b = random_net(rng, [2, 4, 1]), random_net(rng, [2, 5, 1])
    _, cache = mlp_forward(a, rng.normal(size=(3, 2)))
    with pytest.raises(InternalError):
        mlp_backward(b, cache, np.ones((3, 1)))


def _loss(net, x, r):
    return float((mlp_forward(net, x)[0] * r).sum())


def finite_difference_check(seed, h=1e-5):
    """Largest relative error between backprop and central differences on one 2-4-1 net."""
    rng = np.random.default_rng(seed)
    net = random_net(rng, [2, 4, 1], density=0.75)
    x = rng.normal(size=(6, 2))
    r = rng.normal(size=(6, 1))
    _, cache = mlp_forward(net, x)
    grads, gx = mlp_backward(net, cache, r)
    worst = 0.0

    def rel(a, f):
        return abs(a - f) / max(abs(a), abs(f), 1e-8)

    for li, p in enumerate(net.layers):
        for (i, j) in zip(*np.nonzero(p.mask)):
            w0 = p.weights[i, j]
            p.weights[i, j] = w0 + h
            up = _loss(net, x, r)
            p.weights[i, j] = w0 - h
            down = _loss(net, x, r)
            p.weights[i, j] = w0
            worst = max(worst, rel(grads[li][0][i, j], (up - down) / (2 * h)))
        for i in range(p.n_out):
            b0 = p.bias[i]
            p.bias[i] = b0 + h
            up = _loss(net, x, r)
            p.bias[i] = b0 - h
            down = _loss(net, x, r)
            p.bias[i] = b0
            worst = max(worst, rel(grads[li][1][i], (up - down) / (2 * h)))
    for n in range(x.shape[0]):
        for j in range(x.shape[1]):
            xp, xm = x.copy(), x.copy()
            xp[n, j] += h
            xm[n, j] -= h
            worst = max(worst, rel(gx[n, j], (_loss(net, xp, r) - _loss(net, xm, r)) / (2 * h)))
    return worst


@pytest.mark.parametrize("seed", range(10))
def test_backward_matches_finite_differences(seed):
    assert finite_difference_check(seed) < 1e-6


def test_inactive_gradient_is_effective_weight_gradient():
    # dense gradient at a masked-off position equals the derivative w.r.t. the
    # corresponding entry of the pre-multiplied dense weight matrix
    rng = np.random.default_rng(7)
    net = random_net(rng, [2, 4, 1], density=0.5)
    x, r, h = rng.normal(size=(5, 2)), rng.normal(size=(5, 1)), 1e-5
    _, cache = mlp_forward(net, x)
    grads, _ = mlp_backward(net, cache, r)
    dense = Mlp([MaskedParam(p.weights * p.mask, p.bias.copy(), np.ones_like(p.mask)) for p in net.layers])
    for li, p in enumerate(net.layers):
        for (i, j) in zip(*np.nonzero(p.mask == 0)):
            q = dense.layers[li]
            q.weights[i, j] = h
            up = _loss(dense, x, r)
            q.weights[i, j] = -h
            down = _loss(dense, x, r)
            q.weights[i, j] = 0.0
            assert grads[li][0][i, j] == pytest.approx((up - down) / (2 * h), rel=1e-6, abs=1e-9)


def scalar_adam(w, grads, lr, b1, b2, eps):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
    return w


def test_adam_fully_masked_is_noop():
    p = MaskedParam(np.zeros((2, 3)), np.zeros(2), np.zeros((2, 3)))
    adam_step(p, np.ones((2, 3)), lr=0.1)
    assert not p.weights.any() and not p.moment1.any() and not p.moment2.any()


def test_adam_first_step_is_lr():
    p = MaskedParam([[0.0]], [0.0], [[1]])
    adam_step(p, np.array([[1.0]]), lr=0.1, beta1=0.0, beta2=0.9, eps=1e-8)
    assert p.weights[0, 0] == pytest.approx(scalar_adam(0.0, [1.0], 0.1, 0.0, 0.9, 1e-8), abs=1e-15)
    assert p.weights[0, 0] == pytest.approx(-0.1, abs=1e-8)


def test_adam_matches_scalar_recurrence():
    rng = np.random.default_rng(5)
    gs = rng.normal(size=20)
    for b1 in (0.0, 0.5):
        p = MaskedParam([[0.3]], [0.0], [[1]])
        for g in gs:
            adam_step(p, np.array([[g]]), np.array([g]), lr=0.01, beta1=b1, beta2=0.9)
        assert p.weights[0, 0] == pytest.approx(scalar_adam(0.3, gs, 0.01, b1, 0.9, 1e-8), rel=1e-12)
        assert p.bias[0] == pytest.approx(scalar_adam(0.0, gs, 0.01, b1, 0.9, 1e-8), rel=1e-12)


def test_adam_inactive_positions_bit_exact_zero():
    rng = np.random.default_rng(6)
    mask = rng.random((8, 8)) < 0.3
    p = MaskedParam(rng.normal(size=(8, 8)), np.zeros(8), mask)
    for _ in range(1000):
        adam_step(p, rng.normal(size=(8, 8)), rng.normal(size=8), lr=1e-2)
    for arr in (p.weights, p.moment1, p.moment2):
        vals = arr[~mask]
        assert np.all(vals == 0.0) and not np.signbit(vals).any()


def test_adam_rejects_non_finite():
    p = MaskedParam([[1.0]], [0.0], [[1]])
    with pytest.raises(NonFiniteError):
        adam_step(p, np.array([[np.nan]]))


def test_mask_change_noop_is_bit_identical():
    rng = np.random.default_rng(8)
    p = MaskedParam(rng.normal(size=(3, 4)), rng.normal(size=3), rng.random((3, 4)) < 0.5)
    adam_step(p, rng.normal(size=(3, 4)), lr=0.1)
    before = [a.copy() for a in (p.weights, p.moment1, p.moment2, p.mask)]
    apply_mask_change(p, p.mask.copy())
    for a, b in zip(before, (p.weights, p.moment1, p.moment2, p.mask)):
        assert a.tobytes() == b.tobytes()


def test_mask_change_drop_and_grow_zero_state():
    p = MaskedParam([[0.7, 0.1]], [0.0], [[1, 0]])
    p.moment1[0, 0], p.moment2[0, 0] = 0.2, 0.3
    apply_mask_change(p, [[0, 1]], declared_active=1)
    assert p.weights[0, 0] == 0 and p.moment1[0, 0] == 0 and p.moment2[0, 0] == 0
    assert p.weights[0, 1] == 0.0  # newly grown connection starts at zero


def test_mask_change_cardinality_mismatch():
    p = MaskedParam([[0.7, 0.1]], [0.0], [[1, 0]])
    with pytest.raises(InternalError):
        apply_mask_change(p, [[1, 1]], declared_active=1)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_ops=st.integers(1, 40))
def test_mask_zero_closure(seed, n_ops):
    rng = np.random.default_rng(seed)
    net = random_net(rng, [2, 5, 3, 1], density=0.5)
    for _ in range(n_ops):
        op = rng.integers(3)
        if op == 0:
            x = rng.normal(size=(4, 2))
            _, cache = mlp_forward(net, x)
            grads, _ = mlp_backward(net, cache, rng.normal(size=(4, 1)))
            for p, (gw, gb) in zip(net.layers, grads):
                adam_step(p, gw, gb, lr=0.05)
        elif op == 1:
            p = net.layers[rng.integers(len(net.layers))]
            apply_mask_change(p, rng.random(p.mask.shape) < 0.5)
        else:
            p = net.layers[rng.integers(len(net.layers))]
            adam_step(p, rng.normal(size=p.weights.shape), lr=0.05)
        for p in net.layers:
            off = p.mask == 0
            assert not p.weights[off].any() and not p.moment1[off].any() and not p.moment2[off].any()
