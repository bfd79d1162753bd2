import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entangled import autodiff as ad
from entangled.autodiff import ShapeError, Tensor
from entangled.checks import op_cases
from entangled.entangle import make_channel_kernel, make_spatial_kernel
from entangled.gradcheck import grad_check


def naive_conv2d(x, k, circular=False):
    """Direct SAME cross-correlation, loops only."""
    h, w, _ = x.shape
    kh, kw, _, c_out = k.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((h, w, c_out))
    for i in range(h):
        for j in range(w):
            for a in range(kh):
                for b in range(kw):
                    ii, jj = i + a - ph, j + b - pw
                    if circular:
                        ii, jj = ii % h, jj % w
                    elif not (0 <= ii < h and 0 <= jj < w):
                        continue
                    out[i, j] += x[ii, jj] @ k[a, b]
    return out


@pytest.mark.parametrize("circular", [False, True])
@pytest.mark.parametrize("seed", range(3))
def test_conv2d_matches_naive(circular, seed):
    rng = np.random.default_rng(seed)
    x, k = rng.standard_normal((5, 6, 2)), rng.standard_normal((3, 3, 2, 3))
    got = ad.conv2d(Tensor(x), k, padding="circular" if circular else "zero").data
    assert np.allclose(got, naive_conv2d(x, k, circular), atol=1e-12)
    batched = ad.conv2d(Tensor(np.stack([x, 2 * x])), k, padding="circular" if circular else "zero").data
    assert np.allclose(batched[1], 2 * got, atol=1e-12)


def test_conv1d_matches_naive():
    rng = np.random.default_rng(0)
    x, k = rng.standard_normal((7, 2)), rng.standard_normal((3, 2, 4))
    want = np.zeros((7, 4))
    for i in range(7):
        for a in range(3):
            if 0 <= i + a - 1 < 7:
                want[i] += x[i + a - 1] @ k[a]
    assert np.allclose(ad.conv1d(Tensor(x), k).data, want, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 3, 5]), st.integers(1, 4), st.floats(0, 1), st.integers(0, 1000))
def test_mass_one_kernels_preserve_constants_under_circular_padding(k, c, gamma, seed):
    rng = np.random.default_rng(seed)
    per_channel = np.broadcast_to(rng.standard_normal(c), (6, 7, c)).copy()
    y = ad.conv2d(Tensor(per_channel), make_spatial_kernel(k, c, gamma).data, "circular").data
    assert np.allclose(y, per_channel, atol=1e-12)
    flat = np.full((6, 7, c), rng.standard_normal())
    y = ad.conv2d(Tensor(flat), make_channel_kernel(k, c, gamma).data, "circular").data
    assert np.allclose(y, flat, atol=1e-12)


@pytest.mark.parametrize("name", sorted(op_cases()))
def test_op_gradients(name):
    build = op_cases()[name]
    for i in range(5):
        fn, arrays = build(np.random.default_rng([i, 99]))
        assert grad_check(fn, [ad.parameter(a) for a in arrays]) <= 1e-6


def test_grad_check_rejects_bad_epsilon():
    x = ad.parameter(np.ones(2))
    with pytest.raises(ValueError):
        grad_check(lambda t: ad.sum_(t), [x], epsilon=1e-1)


def test_gradient_accumulates_over_shared_nodes():
    x = ad.parameter(np.array([1.0, 2.0]))
    y = ad.mul(x, x)
    z = ad.add(y, y)
    ad.backward(ad.sum_(z))
    assert np.allclose(x.grad, 4 * x.data)


def test_broadcast_gradients_are_reduced():
    a = ad.parameter(np.ones((3, 4)))
    b = ad.parameter(np.ones(4))
    ad.backward(ad.sum_(ad.add(a, b)))
    assert b.grad.shape == (4,) and np.allclose(b.grad, 3.0)


def test_backward_needs_scalar_or_grad():
    x = ad.parameter(np.ones(3))
    with pytest.raises(ShapeError):
        ad.backward(ad.mul(x, 2.0))
    with pytest.raises(ShapeError):
        ad.backward(ad.mul(x, 2.0), np.ones(2))
    ad.backward(ad.mul(x, 2.0), np.ones(3))
    assert np.allclose(x.grad, 2.0)


def test_constants_get_no_grad():
    c = Tensor(np.ones(2))
    x = ad.parameter(np.ones(2))
    ad.backward(ad.sum_(ad.mul(c, x)))
    assert c.grad is None


def test_graph_nodes_topological():
    x = ad.parameter(np.ones(2))
    a = ad.tanh(x)
    b = ad.mul(a, x)
    out = ad.sum_(ad.add(a, b))
    order = ad.graph_nodes(out)
    pos = {id(n): i for i, n in enumerate(order)}
    for n in order:
        for p in n._parents:
            assert pos[id(p)] < pos[id(n)]
    assert order[-1] is out and len(order) == len({id(n) for n in order})


def test_softmax_and_cross_entropy_reference():
    rng = np.random.default_rng(1)
    z = rng.standard_normal((4, 5)) * 30
    p = ad.softmax(Tensor(z)).data
    assert np.allclose(p.sum(-1), 1.0)
    labels = np.array([0, 4, 2, 2])
    ref = -np.mean(np.log(np.exp(z - z.max(-1, keepdims=True)) /
                          np.exp(z - z.max(-1, keepdims=True)).sum(-1, keepdims=True))[np.arange(4), labels])
    assert float(ad.cross_entropy_with_logits(Tensor(z), labels).data) == pytest.approx(ref, rel=1e-12)


def test_cross_entropy_sequence_shape():
    z = np.zeros((2, 3, 4))
    loss = ad.cross_entropy_with_logits(Tensor(z), np.zeros((2, 3), dtype=int))
    assert float(loss.data) == pytest.approx(np.log(4))


def test_layernorm_normalises():
    x = np.random.default_rng(2).standard_normal((3, 8)) * 5 + 2
    y = ad.layernorm(Tensor(x)).data
    assert np.allclose(y.mean(-1), 0.0, atol=1e-12)
    assert np.allclose(y.var(-1), 1.0, atol=1e-3)


def test_attention_reference():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 3))
    ws = [rng.standard_normal((3, 3)) for _ in range(4)]
    out, weights = ad.attention(Tensor(x), *[Tensor(w) for w in ws], return_weights=True)
    s = (x @ ws[0]) @ (x @ ws[1]).T / np.sqrt(3)
    p = np.exp(s - s.max(-1, keepdims=True))
    p /= p.sum(-1, keepdims=True)
    assert np.allclose(weights.data, p, atol=1e-14)
    assert np.allclose(out.data, p @ (x @ ws[2]) @ ws[3], atol=1e-12)
    with pytest.raises(ShapeError):
        ad.attention(Tensor(x), Tensor(np.eye(2)), *[Tensor(w) for w in ws[1:]])


def test_operator_sugar():
    a = ad.parameter(np.arange(6.0).reshape(2, 3))
    out = ((a + 1.0) * 2.0 - a).sum()
    ad.backward(out)
    assert np.allclose(a.grad, 1.0)
    assert (a @ np.ones((3, 1))).shape == (2, 1)
    assert a.T.shape == (3, 2)
