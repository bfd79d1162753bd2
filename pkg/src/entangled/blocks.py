"""Entangled residual, transformer-encoder and LSTM blocks.

The skip path of every block multiplies by a constant operator instead of the
identity. Dense operators act on row vectors (``x @ G``); convolutional ones
are SAME, stride-1 convolutions with zero padding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .entangle import EntanglementSpec, make_conv_kernel, make_matrix, make_seq_kernel

BLOCK_KINDS = ("mlp_residual", "conv_residual", "transformer_encoder", "lstm_cell")
LSTM_MODES = ("gated", "gated_before", "literal")


class BlockError(ValueError):
    pass


@lru_cache(maxsize=256)
def _operator(spec: EntanglementSpec, layout: str) -> np.ndarray | None:
    if spec.kind in ("identity", "none"):
        return None
    if layout == "vector" or spec.kind in ("dense", "orthogonal"):
        return make_matrix(spec)
    if layout == "sequence":
        return make_seq_kernel(spec).data
    return make_conv_kernel(spec).data


def entanglement_operator(spec: EntanglementSpec, layout: str) -> np.ndarray | None:
    """Constant matrix or kernel for ``spec`` (``None`` for identity/none).

    ``layout`` is ``"vector"``, ``"sequence"`` or ``"image"``. Dense and
    orthogonal kinds always yield a channel matrix, which sequence and image
    layouts apply to the last axis.
    """
    if layout not in ("vector", "sequence", "image"):
        raise BlockError(f"unknown layout {layout!r}")
    return _operator(spec, layout)


def _infer_layout(spec: EntanglementSpec, x: Tensor) -> str:
    if spec.kind in ("dense", "orthogonal", "identity", "none"):
        return "vector" if x.ndim <= 2 else ("image" if x.ndim == 4 else "sequence")
    return {2: "sequence", 3: "image", 4: "image"}.get(x.ndim, "vector")


def apply_entanglement(spec: EntanglementSpec, x: Tensor, layout: str | None = None) -> Tensor:
    """The skip path: ``x @ G`` for matrices, SAME zero-padded conv for kernels.

    ``identity`` returns ``x`` itself and ``none`` a zero tensor. Without an
    explicit ``layout`` a rank-2 input to a conv kind is read as ``(L, D)`` and
    rank 3/4 as ``(N,)H,W,C``.
    """
    x = ad.as_tensor(x)
    if spec.kind == "identity":
        return x
    if spec.kind == "none":
        return Tensor(np.zeros(x.shape))
    layout = layout or _infer_layout(spec, x)
    op = entanglement_operator(spec, layout)
    width = x.shape[-1]
    if op.shape[-1] != width:
        raise BlockError(f"entanglement operator acts on {op.shape[-1]} features, input has {width}")
    if op.ndim == 2:
        return ad.matmul(x, Tensor(op))
    if op.ndim == 3:
        if layout != "sequence":
            raise BlockError("1D entanglement kernel needs a sequence input")
        return ad.conv1d(x, op)
    if layout != "image":
        raise BlockError("2D entanglement kernel needs an image input")
    return ad.conv2d(x, op)


@dataclass
class BlockParams:
    """Trainable tensors of one block plus its constant skip operator.

    ``params`` holds only trainable tensors; the entanglement operator lives in
    ``operator`` as a read-only array and is never handed to an optimizer.
    """

    kind: str
    width: int
    entanglement: EntanglementSpec
    params: dict[str, Tensor] = field(default_factory=dict)
    hidden: int | None = None
    lstm_mode: str = "gated"

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise BlockError(f"unknown block kind {self.kind!r}")
        if self.lstm_mode not in LSTM_MODES:
            raise BlockError(f"unknown LSTM mode {self.lstm_mode!r}")
        spec = self.entanglement
        if spec.kind not in ("identity", "none"):
            if (spec.dim or self.width) != self.width or (spec.channels or self.width) != self.width:
                raise BlockError(f"entanglement width does not match block width {self.width}")
            self.entanglement = spec.with_size(self.width)

    @property
    def layout(self) -> str:
        return {"mlp_residual": "vector", "lstm_cell": "vector",
                "conv_residual": "image", "transformer_encoder": "sequence"}[self.kind]

    @property
    def operator(self) -> np.ndarray | None:
        return entanglement_operator(self.entanglement, self.layout)

    def trainable(self) -> list[Tensor]:
        return list(self.params.values())

    def skip(self, x: Tensor) -> Tensor:
        return apply_entanglement(self.entanglement, x, self.layout)


def _he(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> Tensor:
    return ad.parameter(rng.standard_normal(shape) * gain * math.sqrt(2.0 / fan_in))


def init_block(kind: str, width: int, entanglement: EntanglementSpec, rng: np.random.Generator,
               hidden: int | None = None, input_width: int | None = None,
               lstm_mode: str = "gated", residual_gain: float = 1.0) -> BlockParams:
    """Randomly initialised block of ``kind`` with ``width`` features.

    ``residual_gain`` scales the last layer of the residual branch.
    """
    p: dict[str, Tensor] = {}
    if kind == "mlp_residual":
        hidden = hidden or width
        p["w1"] = _he(rng, (width, hidden), width)
        p["b1"] = ad.parameter(np.zeros(hidden))
        p["w2"] = _he(rng, (hidden, width), hidden, residual_gain)
        p["b2"] = ad.parameter(np.zeros(width))
    elif kind == "conv_residual":
        hidden = hidden or width
        p["k1"] = _he(rng, (3, 3, width, hidden), 9 * width)
        p["b1"] = ad.parameter(np.zeros(hidden))
        p["k2"] = _he(rng, (3, 3, hidden, width), 9 * hidden, residual_gain)
        p["b2"] = ad.parameter(np.zeros(width))
    elif kind == "transformer_encoder":
        hidden = hidden or 4 * width
        for name in ("wq", "wk", "wv", "wo"):
            p[name] = ad.parameter(rng.standard_normal((width, width)) / math.sqrt(width))
        p["ln1_scale"] = ad.parameter(np.ones(width))
        p["ln1_shift"] = ad.parameter(np.zeros(width))
        p["ff_w1"] = ad.parameter(rng.standard_normal((width, hidden)) / math.sqrt(width))
        p["ff_b1"] = ad.parameter(np.zeros(hidden))
        p["ff_w2"] = ad.parameter(rng.standard_normal((hidden, width)) / math.sqrt(hidden) * residual_gain)
        p["ff_b2"] = ad.parameter(np.zeros(width))
        p["ln2_scale"] = ad.parameter(np.ones(width))
        p["ln2_shift"] = ad.parameter(np.zeros(width))
    elif kind == "lstm_cell":
        hidden = width
        n_in = input_width if input_width is not None else width
        fan = n_in + width
        p["w"] = ad.parameter(rng.uniform(-1.0, 1.0, (fan, 4 * width)) / math.sqrt(fan))
        b = np.zeros(4 * width)
        b[width:2 * width] = 1.0  # forget-gate bias
        p["b"] = ad.parameter(b)
    else:
        raise BlockError(f"unknown block kind {kind!r}")
    return BlockParams(kind, width, entanglement, p, hidden, lstm_mode)


# ---------------------------------------------------------------- residual blocks

def residual_branch(x: Tensor, block: BlockParams) -> Tensor:
    """The trainable path ``f`` of a residual block."""
    p = block.params
    if block.kind == "mlp_residual":
        h = ad.relu(ad.linear(x, p["w1"], p["b1"]))
        return ad.linear(h, p["w2"], p["b2"])
    if block.kind == "conv_residual":
        h = ad.relu(ad.add(ad.conv2d(x, p["k1"]), p["b1"]))
        return ad.add(ad.conv2d(h, p["k2"]), p["b2"])
    raise BlockError(f"{block.kind} is not a residual block")


def residual_forward(x: Tensor, block: BlockParams) -> tuple[Tensor, Tensor]:
    """``(f(x) + skip(x), f(x))``."""
    x = ad.as_tensor(x)
    if x.shape[-1] != block.width:
        raise BlockError(f"input width {x.shape[-1]} does not match block width {block.width}")
    f_out = residual_branch(x, block)
    if block.entanglement.kind == "none":
        return f_out, f_out
    return ad.add(f_out, block.skip(x)), f_out


# ---------------------------------------------------------------- transformer

def feed_forward(x: Tensor, block: BlockParams) -> Tensor:
    p = block.params
    return ad.linear(ad.gelu(ad.linear(x, p["ff_w1"], p["ff_b1"])), p["ff_w2"], p["ff_b2"])


def self_attention(x: Tensor, block: BlockParams) -> Tensor:
    p = block.params
    return ad.attention(x, p["wq"], p["wk"], p["wv"], p["wo"])


def transformer_encoder_forward(x: Tensor, block: BlockParams) -> Tensor:
    """Post-norm encoder block with entangled skips around both sublayers."""
    x = ad.as_tensor(x)
    if block.kind != "transformer_encoder":
        raise BlockError(f"{block.kind} is not a transformer block")
    if x.shape[-1] != block.width:
        raise BlockError(f"token width {x.shape[-1]} does not match entanglement width {block.width}")
    p = block.params
    h = ad.layernorm(_skip_plus(block, x, self_attention(x, block)), p["ln1_scale"], p["ln1_shift"])
    return ad.layernorm(_skip_plus(block, h, feed_forward(h, block)), p["ln2_scale"], p["ln2_shift"])


def _skip_plus(block: BlockParams, x: Tensor, sub: Tensor) -> Tensor:
    if block.entanglement.kind == "none":
        return sub
    return ad.add(block.skip(x), sub)


# ---------------------------------------------------------------- LSTM

@dataclass
class LSTMState:
    c: Tensor
    h: Tensor

    def __post_init__(self):
        if self.c.shape != self.h.shape:
            raise BlockError(f"cell and hidden widths differ: {self.c.shape} vs {self.h.shape}")

    @classmethod
    def zeros(cls, width: int, batch: int | None = None) -> "LSTMState":
        shape = (width,) if batch is None else (batch, width)
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def lstm_gates(state: LSTMState, x_t: Tensor, block: BlockParams) -> dict[str, Tensor]:
    p, width = block.params, block.width
    pre = ad.linear(ad.concat([x_t, state.h], axis=-1), p["w"], p["b"])
    sl = [(Ellipsis, slice(j * width, (j + 1) * width)) for j in range(4)]
    return {
        "i": ad.sigmoid(ad.index(pre, sl[0])),
        "f": ad.sigmoid(ad.index(pre, sl[1])),
        "o": ad.sigmoid(ad.index(pre, sl[2])),
        "z": ad.tanh(ad.index(pre, sl[3])),
    }


def lstm_step(state: LSTMState, x_t: Tensor, block: BlockParams, gate_override=None) -> LSTMState:
    """One step of the entangled LSTM cell.

    Modes: ``gated`` computes ``f * (c @ G) + i * z``; ``gated_before`` computes
    ``(f * c) @ G + i * z``; ``literal`` drops the forget gate, ``c @ G + i * z``.
    ``gate_override`` maps gate names to constants, for analysis.
    """
    if block.kind != "lstm_cell":
        raise BlockError(f"{block.kind} is not an LSTM cell")
    x_t = ad.as_tensor(x_t)
    if state.c.shape[-1] != block.width:
        raise BlockError(f"state width {state.c.shape[-1]} does not match cell width {block.width}")
    if block.params["w"].shape[0] != x_t.shape[-1] + block.width:
        raise BlockError("input width does not match the cell's input weights")
    gates = lstm_gates(state, x_t, block)
    for name, value in (gate_override or {}).items():
        gates[name] = Tensor(np.broadcast_to(np.asarray(value, dtype=np.float64), state.c.shape).copy())
    i, f, o, z = gates["i"], gates["f"], gates["o"], gates["z"]
    if block.lstm_mode == "gated":
        carry = ad.mul(f, block.skip(state.c))
    elif block.lstm_mode == "gated_before":
        carry = block.skip(ad.mul(f, state.c))
    else:
        carry = block.skip(state.c)
    c_new = ad.add(carry, ad.mul(i, z))
    h_new = ad.mul(o, ad.tanh(c_new))
    return LSTMState(c_new, h_new)


def block_forward(x: Tensor, block: BlockParams) -> Tensor:
    """Feature-to-feature forward for the stackable kinds."""
    if block.kind in ("mlp_residual", "conv_residual"):
        return residual_forward(x, block)[0]
    if block.kind == "transformer_encoder":
        return transformer_encoder_forward(x, block)
    raise BlockError("LSTM cells are stepped with lstm_step")
