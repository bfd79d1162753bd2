"""Stem -> stacked entangled blocks -> head networks for each model family."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..blocks import BlockParams, LSTMState, block_forward, init_block, lstm_step
from .config import ExperimentConfig
from .data import Dataset

PATCH = 2


@dataclass
class Model:
    """A feed-forward or recurrent classifier built from ``depth`` blocks.

    ``stem`` and ``head`` hold the trainable input/output projections;
    ``blocks`` hold the entangled blocks.
    """

    family: str
    blocks: list[BlockParams]
    stem: dict[str, Tensor] = field(default_factory=dict)
    head: dict[str, Tensor] = field(default_factory=dict)
    per_step: bool = False

    def parameters(self) -> list[Tensor]:
        params = list(self.stem.values())
        for b in self.blocks:
            params.extend(b.trainable())
        params.extend(self.head.values())
        return params

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {f"stem.{k}": v.data for k, v in self.stem.items()}
        out.update({f"head.{k}": v.data for k, v in self.head.items()})
        return out

    def operators(self) -> list[np.ndarray | None]:
        return [b.operator for b in self.blocks]

    # ------------------------------------------------------------ forward

    def features(self, x: np.ndarray) -> Tensor:
        """Input to the first block."""
        x = Tensor(x)
        s = self.stem
        if self.family == "res_mlp":
            return ad.linear(ad.reshape(x, (x.shape[0], -1)), s["w"], s["b"])
        if self.family == "res_cnn":
            return ad.add(ad.conv2d(x, s["k"]), s["b"])
        if self.family == "transformer":
            tokens = _tokens(x)
            return ad.add(ad.linear(tokens, s["w"], s["b"]), s["pos"])
        raise ValueError("recurrent models have no block-input features")

    def forward(self, x: np.ndarray) -> Tensor:
        """Class logits, ``(N, K)`` or ``(N, L, K)`` for per-step tasks."""
        if self.family == "lstm":
            return self._forward_lstm(x)
        h = self.features(x)
        for block in self.blocks:
            h = block_forward(h, block)
        if self.family == "res_cnn":
            h = ad.mean_pool(h, axes=(1, 2))
        elif self.family == "transformer" and not self.per_step:
            h = ad.mean(h, axis=1)
        return ad.linear(h, self.head["w"], self.head["b"])

    def _forward_lstm(self, x: np.ndarray) -> Tensor:
        n, length, _ = x.shape
        states = [LSTMState.zeros(b.width, n) for b in self.blocks]
        outputs = []
        for t in range(length):
            inp = Tensor(x[:, t, :])
            for j, block in enumerate(self.blocks):
                states[j] = lstm_step(states[j], inp, block)
                inp = states[j].h
            if self.per_step:
                outputs.append(inp)
        if self.per_step:
            h = ad.stack(outputs, axis=1)
        else:
            h = states[-1].h
        return ad.linear(h, self.head["w"], self.head["b"])


def _tokens(x: Tensor) -> Tensor:
    if x.ndim == 3:
        return x
    n, hgt, wid, c = x.shape
    p = PATCH
    t = ad.reshape(x, (n, hgt // p, p, wid // p, p, c))
    t = ad.swapaxes(t, 2, 3)
    return ad.reshape(t, (n, (hgt // p) * (wid // p), p * p * c))


def build_model(cfg: ExperimentConfig, data: Dataset, seed: int) -> Model:
    """Seeded initialisation of the model described by ``cfg`` for ``data``."""
    rng = np.random.default_rng([int(seed), 101])
    w, depth, spec = cfg.width, cfg.depth, cfg.entanglement
    in_shape = data.input_shape
    stem: dict[str, Tensor] = {}
    if cfg.model == "res_mlp":
        n_in = int(np.prod(in_shape))
        stem["w"] = ad.parameter(rng.standard_normal((n_in, w)) * math.sqrt(2.0 / n_in))
        stem["b"] = ad.parameter(np.zeros(w))
        kind, hidden = "mlp_residual", cfg.hidden
    elif cfg.model == "res_cnn":
        c_in = in_shape[-1]
        stem["k"] = ad.parameter(rng.standard_normal((3, 3, c_in, w)) * math.sqrt(2.0 / (9 * c_in)))
        stem["b"] = ad.parameter(np.zeros(w))
        kind, hidden = "conv_residual", cfg.hidden
    elif cfg.model == "transformer":
        if data.layout == "image":
            h, wd, c = in_shape
            n_tok, tok_dim = (h // PATCH) * (wd // PATCH), PATCH * PATCH * c
        else:
            n_tok, tok_dim = in_shape
        stem["w"] = ad.parameter(rng.standard_normal((tok_dim, w)) / math.sqrt(tok_dim))
        stem["b"] = ad.parameter(np.zeros(w))
        stem["pos"] = ad.parameter(rng.standard_normal((n_tok, w)) * 0.1)
        kind, hidden = "transformer_encoder", cfg.hidden
    else:
        kind, hidden = "lstm_cell", None
    blocks = []
    for i in range(depth):
        input_width = in_shape[-1] if (kind == "lstm_cell" and i == 0) else None
        blocks.append(init_block(kind, w, spec.with_size(w), rng, hidden=hidden, input_width=input_width,
                                 lstm_mode=cfg.lstm_mode, residual_gain=cfg.residual_gain))
    head = {
        "w": ad.parameter(rng.standard_normal((w, data.n_classes)) / math.sqrt(w)),
        "b": ad.parameter(np.zeros(data.n_classes)),
    }
    return Model(cfg.model, blocks, stem, head, per_step=data.per_step)


def model_from_checkpoint(family: str, blocks: list[BlockParams], tensors: dict[str, np.ndarray],
                          per_step: bool = False) -> Model:
    stem = {k[5:]: ad.parameter(v) for k, v in tensors.items() if k.startswith("stem.")}
    head = {k[5:]: ad.parameter(v) for k, v in tensors.items() if k.startswith("head.")}
    return Model(family, blocks, stem, head, per_step)
