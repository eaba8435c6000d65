import numpy as np
import pytest

from graphtune import autodiff as ad
from graphtune.errors import DivergenceError, ShapeError


def leaf(rng, *shape):
    return ad.Tensor(rng.uniform(-1, 1, size=shape), requires_grad=True)


def grad_check(build, leaves, eps=1e-5):
    """Max relative error between tape gradients and central differences."""
    with ad.Tape() as tape:
        loss = build()
    analytic = ad.backward(tape, loss)
    worst = 0.0
    for t in leaves:
        ga = analytic.get(t, np.zeros_like(t.data))
        gn = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = float(build().data)
            flat[k] = orig - eps
            down = float(build().data)
            flat[k] = orig
            gn.reshape(-1)[k] = (up - down) / (2 * eps)
        denom = np.maximum(np.abs(ga) + np.abs(gn), 1e-8)
        worst = max(worst, float((np.abs(ga - gn) / denom).max()))
    return worst


def weighted(t, w):
    return ad.sum_all(ad.mul(t, w))


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_elementwise_and_affine_kernels(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    row = leaf(rng, 4)
    w = rng.normal(size=(3, 4))
    W, bias = leaf(rng, 4, 2), leaf(rng, 2)
    cases = [
        (lambda: weighted(ad.add(a, row), w), [a, row]),
        (lambda: weighted(ad.sub(a, b), w), [a, b]),
        (lambda: weighted(ad.mul(a, row), w), [a, row]),
        (lambda: weighted(ad.scale(a, -2.5), w), [a]),
        (lambda: weighted(ad.sigmoid(a), w), [a]),
        (lambda: weighted(ad.tanh(a), w), [a]),
        (lambda: weighted(ad.exp(a), w), [a]),
        (lambda: weighted(ad.log(ad.exp(a)), w), [a]),
        (lambda: weighted(ad.softmax(a), w), [a]),
        (lambda: ad.mean_all(ad.mul(a, b)), [a, b]),
        (lambda: ad.sum_all(ad.matmul(a, W)), [a, W]),
        (lambda: ad.sum_all(ad.mul(ad.dense(a, W, bias), ad.dense(b, W, bias))), [a, b, W, bias]),
    ]
    for build, leaves in cases:
        assert grad_check(build, leaves) <= 1e-6


def test_structural_kernels(rng):
    a, b = leaf(rng, 2, 3), leaf(rng, 2, 2)
    w5 = rng.normal(size=(2, 5))
    w_stack, w_rep = rng.normal(size=(2, 2, 3)), rng.normal(size=(4, 2, 3))
    cases = [
        (lambda: weighted(ad.concat([a, b]), w5), [a, b]),
        (lambda: weighted(ad.slice_last(a, 1, 3), w5[:, :2]), [a]),
        (lambda: weighted(ad.take(a, 1), w5[0, :3]), [a]),
        (lambda: weighted(ad.stack([a, a]), w_stack), [a]),
        (lambda: weighted(ad.repeat_leading(a, 4), w_rep), [a]),
    ]
    for build, leaves in cases:
        assert grad_check(build, leaves) <= 1e-6


def test_reparam_gradient(rng):
    mu, lv = leaf(rng, 5), leaf(rng, 5)
    noise = rng.normal(size=5)
    w = rng.normal(size=5)
    assert grad_check(lambda: weighted(ad.gaussian_reparam(mu, lv, noise), w), [mu, lv]) <= 1e-6


def test_lstm_cell_gradient(rng):
    x, h, c = leaf(rng, 3, 4), leaf(rng, 3, 5), leaf(rng, 3, 5)
    wx, wh, b = leaf(rng, 4, 20), leaf(rng, 5, 20), leaf(rng, 20)
    w1, w2 = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    mask = np.array([1.0, 0.0, 1.0])

    def build():
        h2, c2 = ad.lstm_cell(x, h, c, wx, wh, b, mask=mask)
        return ad.add(weighted(h2, w1), weighted(c2, w2))

    assert grad_check(build, [x, h, c, wx, wh, b]) <= 1e-6


def test_lstm_layer_gradient_with_mask(rng):
    xs, h0, c0 = leaf(rng, 4, 3, 2), leaf(rng, 3, 3), leaf(rng, 3, 3)
    wx, wh, b = leaf(rng, 2, 12), leaf(rng, 3, 12), leaf(rng, 12)
    mask = np.array([[1, 1, 1], [1, 1, 0], [1, 0, 0], [1, 1, 0]], dtype=float)
    w_hs, w_h, w_c = rng.normal(size=(4, 3, 3)), rng.normal(size=(3, 3)), rng.normal(size=(3, 3))

    def build():
        hs, hl, cl = ad.lstm_layer(xs, h0, c0, wx, wh, b, mask=mask)
        return ad.add(ad.add(weighted(hs, w_hs), weighted(hl, w_h)), weighted(cl, w_c))

    assert grad_check(build, [xs, h0, c0, wx, wh, b]) <= 1e-6


def test_lstm_layer_matches_unrolled_cells(rng):
    xs = rng.uniform(-1, 1, size=(5, 2, 3))
    wx, wh, b = (ad.Tensor(rng.uniform(-1, 1, size=s)) for s in [(3, 16), (4, 16), (16,)])
    mask = np.array([[1, 1], [1, 1], [1, 0], [1, 0], [0, 0]], dtype=float)
    h = c = ad.Tensor(np.zeros((2, 4)))
    hs, hl, cl = ad.lstm_layer(ad.Tensor(xs), h, c, wx, wh, b, mask=mask)
    for t in range(5):
        h, c = ad.lstm_cell(ad.Tensor(xs[t]), h, c, wx, wh, b, mask=mask[t])
        np.testing.assert_allclose(hs.data[t], h.data, rtol=0, atol=1e-14)
    np.testing.assert_allclose(hl.data, h.data, rtol=0, atol=1e-14)
    np.testing.assert_allclose(cl.data, c.data, rtol=0, atol=1e-14)
    # second row finished after two steps: its last state is the step-2 state
    np.testing.assert_array_equal(hl.data[1], hs.data[1, 1])


def test_zero_params_lstm_gives_zero_state(rng):
    z = lambda *s: ad.Tensor(np.zeros(s))
    h, c = ad.lstm_cell(ad.Tensor(rng.normal(size=(2, 3))), z(2, 4), z(2, 4), z(3, 16), z(4, 16), z(16))
    assert not h.data.any()


def test_trivial_examples():
    s = ad.softmax(ad.Tensor(np.zeros(3))).data
    np.testing.assert_allclose(s, [1 / 3] * 3, atol=1e-15)
    x = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(ad.matmul(ad.Tensor(np.eye(3)), ad.Tensor(x)).data, x)
    np.testing.assert_array_equal(ad.dense(ad.Tensor(x), ad.Tensor(np.eye(2)), ad.Tensor(np.zeros(2))).data, x)
    t = ad.Tensor(np.array(0.0), requires_grad=True)
    with ad.Tape() as tape:
        y = ad.sigmoid(t)
    ad.backward(tape, y)
    assert t.grad == 0.25


def test_softmax_is_probability_vector(rng):
    s = ad.softmax(ad.Tensor(rng.normal(scale=30, size=(50, 7)))).data
    assert (s >= 0).all()
    assert np.abs(s.sum(axis=-1) - 1).max() <= 1e-12


def test_sum_gradient_is_ones_and_accumulates(rng):
    x = leaf(rng, 4, 3)
    for expected in (1.0, 2.0):
        with ad.Tape() as tape:
            loss = ad.sum_all(x)
        ad.backward(tape, loss)
        np.testing.assert_array_equal(x.grad, np.full((4, 3), expected))


def test_backward_requires_scalar(rng):
    x = leaf(rng, 3)
    with ad.Tape() as tape:
        y = ad.tanh(x)
    with pytest.raises(ShapeError):
        ad.backward(tape, y)


def test_shape_errors_name_the_op():
    with pytest.raises(ShapeError, match="matmul"):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="add"):
        ad.add(ad.Tensor(np.ones(3)), ad.Tensor(np.ones(4)))
    with pytest.raises(ShapeError, match="lstm_cell"):
        ad.lstm_cell(*(ad.Tensor(np.ones(s)) for s in [(1, 2), (1, 3), (1, 3), (2, 8), (3, 12), (12,)]))


def test_no_tape_no_record(rng):
    x = leaf(rng, 2)
    y = ad.tanh(x)
    assert not y.requires_grad
    with ad.Tape() as tape:
        ad.tanh(ad.Tensor(np.ones(2)))
    assert len(tape) == 0


def test_reparam_limits():
    mu = ad.Tensor(np.array([0.3, -1.2]))
    np.testing.assert_array_equal(ad.gaussian_reparam(mu, ad.Tensor(np.zeros(2)), np.zeros(2)).data, mu.data)
    out = ad.gaussian_reparam(mu, ad.Tensor(np.full(2, -np.inf)), np.array([1.0, -3.0]))
    np.testing.assert_array_equal(out.data, mu.data)
    m = ad.Tensor(np.zeros(3), requires_grad=True)
    with ad.Tape() as tape:
        z = ad.gaussian_reparam(m, ad.Tensor(np.zeros(3)), np.ones(3))
        loss = ad.sum_all(z)
    ad.backward(tape, loss)
    np.testing.assert_array_equal(m.grad, np.ones(3))


def test_adam_zero_gradient_keeps_params():
    p = {"w": np.array([1.0, -2.0])}
    st = ad.AdamState()
    ad.adam_step(p, {"w": np.zeros(2)}, st)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    assert st.step == 1


def test_adam_first_step_and_constant_gradient():
    g = np.array([0.5, -3.0, 1e-3])
    p = {"w": np.zeros(3)}
    st = ad.AdamState()
    ad.adam_step(p, {"w": g}, st, lr=0.01)
    # bias-corrected first step is lr * g / (|g| + eps)
    np.testing.assert_allclose(p["w"], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    for _ in range(2000):
        before = p["w"].copy()
        ad.adam_step(p, {"w": g}, st, lr=0.01)
    np.testing.assert_allclose(before - p["w"], 0.01 * np.sign(g), rtol=1e-4)


def test_adam_rejects_non_finite():
    with pytest.raises(DivergenceError, match="w2"):
        ad.adam_step({"w2": np.zeros(1)}, {"w2": np.array([np.nan])}, ad.AdamState())


def test_clip_grad_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert ad.clip_grad_norm(grads, 1.0) == 5.0
    np.testing.assert_allclose([grads["a"][0], grads["b"][0]], [0.6, 0.8])
