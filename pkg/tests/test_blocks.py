import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entangled import autodiff as ad
from entangled.autodiff import Tensor
from entangled.blocks import (BlockError, LSTMState, apply_entanglement, block_forward, init_block,
                              lstm_step, residual_forward)
from entangled.checks import REDUCTION_SPECS, input_gradient_operator, reduction_errors
from entangled.entangle import EntanglementSpec, make_dense_gamma, make_spatial_kernel

from test_autodiff import naive_conv2d


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def reference_lstm(x_seq, c, h, w, b, gamma=None):
    """Textbook LSTM with gate order i, f, o, z; ``gamma`` mixes the carried cell."""
    n = h.shape[-1]
    for x in x_seq:
        pre = np.concatenate([x, h], axis=-1) @ w + b
        i, f, o = sigmoid(pre[:, :n]), sigmoid(pre[:, n:2 * n]), sigmoid(pre[:, 2 * n:3 * n])
        z = np.tanh(pre[:, 3 * n:])
        carried = c if gamma is None else c @ gamma
        c = f * carried + i * z
        h = o * np.tanh(c)
    return c, h


def _run_cell(block, x_seq, c, h):
    st_ = LSTMState(Tensor(c), Tensor(h))
    for x in x_seq:
        st_ = lstm_step(st_, Tensor(x), block)
    return st_.c.data, st_.h.data


@pytest.mark.parametrize("seed", range(5))
def test_identity_lstm_matches_reference(seed):
    rng = np.random.default_rng(seed)
    block = init_block("lstm_cell", 4, EntanglementSpec("identity"), rng, input_width=2)
    xs, c, h = rng.standard_normal((6, 3, 2)), rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    got = _run_cell(block, xs, c, h)
    want = reference_lstm(xs, c, h, block.params["w"].data, block.params["b"].data)
    assert np.allclose(got[0], want[0], atol=1e-14) and np.allclose(got[1], want[1], atol=1e-14)


def test_dense_lstm_matches_reference():
    rng = np.random.default_rng(7)
    spec = EntanglementSpec("dense", 0.3)
    block = init_block("lstm_cell", 4, spec.with_size(4), rng, input_width=2)
    xs, c, h = rng.standard_normal((5, 2, 2)), rng.standard_normal((2, 4)), np.zeros((2, 4))
    got = _run_cell(block, xs, c, h)
    want = reference_lstm(xs, c, h, block.params["w"].data, block.params["b"].data, make_dense_gamma(4, 0.3))
    assert np.allclose(got[0], want[0], atol=1e-14)


def test_lstm_modes():
    rng = np.random.default_rng(3)
    spec = EntanglementSpec("dense", 0.5).with_size(3)
    c = Tensor(rng.standard_normal((2, 3)))
    st0 = LSTMState(c, Tensor(np.zeros((2, 3))))
    x = Tensor(rng.standard_normal((2, 3)))
    gate = {"f": 0.5, "i": 0.0}
    outs = {}
    for mode in ("gated", "gated_before", "literal"):
        block = init_block("lstm_cell", 3, spec, np.random.default_rng(0), lstm_mode=mode)
        outs[mode] = lstm_step(st0, x, block, gate_override=gate).c.data
    g = make_dense_gamma(3, 0.5)
    assert np.allclose(outs["gated"], 0.5 * (c.data @ g))
    assert np.allclose(outs["gated_before"], (0.5 * c.data) @ g)
    assert np.allclose(outs["literal"], c.data @ g)


def test_none_lstm_forgets():
    block = init_block("lstm_cell", 3, EntanglementSpec("none").with_size(3), np.random.default_rng(0))
    st0 = LSTMState(Tensor(np.full((1, 3), 100.0)), Tensor(np.zeros((1, 3))))
    out = lstm_step(st0, Tensor(np.zeros((1, 3))), block, gate_override={"i": 0.0})
    assert np.array_equal(out.c.data, np.zeros((1, 3)))


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(sorted(REDUCTION_SPECS)), st.integers(0, 10_000), st.data())
def test_identity_reduction_property(kind, seed, data):
    spec = data.draw(st.sampled_from(REDUCTION_SPECS[kind]))
    fwd, grad = reduction_errors(kind, spec, seed)
    assert fwd <= 1e-15 and grad <= 1e-12


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 1), st.integers(2, 7), st.integers(0, 1000))
def test_frozen_branch_jacobian_is_gamma_transpose(gamma, n, seed):
    rng = np.random.default_rng(seed)
    block = init_block("mlp_residual", n, EntanglementSpec("dense", gamma, dim=n), rng)
    for t in block.trainable():
        t.data[...] = 0.0
    m = input_gradient_operator(block, rng.standard_normal(n))
    assert np.allclose(m, make_dense_gamma(n, gamma).T, atol=1e-12)


def test_jacobian_distinguishes_transpose_for_orthogonal():
    rng = np.random.default_rng(1)
    block = init_block("mlp_residual", 5, EntanglementSpec("orthogonal", seed=4, dim=5), rng)
    for t in block.trainable():
        t.data[...] = 0.0
    m = input_gradient_operator(block, rng.standard_normal(5))
    assert np.allclose(m, block.operator.T, atol=1e-12)
    assert not np.allclose(m, block.operator, atol=1e-3)


def test_none_block_is_branch_only():
    rng = np.random.default_rng(0)
    block = init_block("mlp_residual", 4, EntanglementSpec("none").with_size(4), rng)
    y, f = residual_forward(Tensor(rng.standard_normal((2, 4))), block)
    assert np.array_equal(y.data, f.data)


def test_conv_skip_is_zero_padded_convolution():
    rng = np.random.default_rng(2)
    spec = EntanglementSpec("spatial", 0.7).with_size(3)
    x = rng.standard_normal((5, 5, 3))
    got = apply_entanglement(spec, Tensor(x)).data
    assert np.allclose(got, naive_conv2d(x, make_spatial_kernel(3, 3, 0.7).data), atol=1e-14)


def test_sequence_skip_uses_1d_kernel():
    spec = EntanglementSpec("spatial", 1.0, kernel_size=3).with_size(2)
    x = np.ones((5, 2))
    got = apply_entanglement(spec, Tensor(x), layout="sequence").data
    # zero padding loses a third of the mass at both ends
    assert np.allclose(got[1:-1], 1.0) and np.allclose(got[[0, -1]], 2.0 / 3.0)


@pytest.mark.parametrize("kind,shape", [("mlp_residual", (3, 4)), ("conv_residual", (2, 5, 5, 4)),
                                        ("transformer_encoder", (2, 6, 4))])
def test_block_shapes(kind, shape):
    block = init_block(kind, 4, EntanglementSpec("identity"), np.random.default_rng(0))
    assert block_forward(Tensor(np.ones(shape)), block).shape == shape


def test_block_errors():
    with pytest.raises(BlockError):
        init_block("bogus", 3, EntanglementSpec(), np.random.default_rng(0))
    block = init_block("mlp_residual", 3, EntanglementSpec(), np.random.default_rng(0))
    with pytest.raises(BlockError):
        residual_forward(Tensor(np.ones((2, 4))), block)
    with pytest.raises(BlockError):
        lstm_step(LSTMState.zeros(3, 1), Tensor(np.ones((1, 3))), block)


def test_entanglement_operator_is_constant_under_training():
    rng = np.random.default_rng(0)
    block = init_block("mlp_residual", 3, EntanglementSpec("dense", 0.5).with_size(3), rng)
    before = block.operator.copy()
    x = ad.parameter(rng.standard_normal((2, 3)))
    y, _ = residual_forward(x, block)
    ad.backward(ad.sum_(y))
    assert np.array_equal(block.operator, before)
    assert all(t.requires_grad for t in block.trainable())
