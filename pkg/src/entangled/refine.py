"""Iterative-refinement ratios of residual stacks and their entangled bounds.

For a block ``y = f(x) + G x`` the plain ratio is ``|f(x)| / |x|`` and the
entangled ratio ``|f(x)| / |G x|``. Since ``(1 - gamma)|x| <= |G x| <= |G|_2 |x|``
for the interpolated dense operator, the squared entangled ratio sits between
``f^2 / (|G|^2 x^2)`` and ``f^2 / ((1 - gamma)^2 x^2)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linalg
from .autodiff import Tensor
from .blocks import BlockError, BlockParams, residual_branch
from .entangle import GAMMA_KINDS

RATIO_EPS = 1e-12
TRACE_COLUMNS = ("block_index", "x_norm", "f_norm", "gamma_x_norm", "plain_ratio",
                 "entangled_ratio", "lower_bound", "upper_bound", "gamma")


@dataclass
class RefinementTrace:
    """Norms, ratios and bounds of one block for one forward pass.

    Ratios whose denominator falls below ``RATIO_EPS`` are NaN with the
    matching ``*_valid`` flag cleared.
    """

    block_index: int
    x_norm: float
    f_norm: float
    gamma_x_norm: float
    plain_ratio: float
    entangled_ratio: float
    lower_bound: float
    upper_bound: float
    gamma: float
    spectral_norm_gamma: float
    plain_valid: bool = True
    entangled_valid: bool = True
    per_sample_plain: np.ndarray = field(default=None, repr=False)
    per_sample_entangled: np.ndarray = field(default=None, repr=False)

    @property
    def bound_holds(self) -> bool | None:
        """Whether ``lower <= entangled_ratio^2 <= upper`` (``None`` when undefined)."""
        if not self.entangled_valid:
            return None
        r2 = self.entangled_ratio**2
        slack = 1e-12 * max(1.0, r2)
        return self.lower_bound - slack <= r2 <= self.upper_bound + slack

    def row(self) -> dict:
        return {c: getattr(self, c) for c in TRACE_COLUMNS}


def lemma1_bounds(f_norm: float, x_norm: float, gamma: float,
                  spectral_norm_gamma: float) -> tuple[float, float]:
    """Lower and upper bounds on the squared entangled refinement ratio.

    ``gamma == 1`` gives an infinite upper bound; the argument behind it needs
    the smallest singular value ``1 - gamma`` to be positive.
    """
    if x_norm <= 0:
        raise ValueError("x_norm must be positive")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    f2, x2 = f_norm * f_norm, x_norm * x_norm
    if f2 == 0.0:
        return 0.0, 0.0
    lower = f2 / (spectral_norm_gamma**2 * x2) if spectral_norm_gamma > 0 else math.inf
    upper = math.inf if gamma >= 1.0 else f2 / ((1.0 - gamma) ** 2 * x2)
    return lower, upper


def bound_gamma(block: BlockParams) -> float:
    """Coefficient whose ``1 - gamma`` lower-bounds the skip operator's gain.

    Interpolated kinds use their own gamma, identity and orthogonal kinds 0
    (norm preserving) and ``none`` 1 (the skip path is zero).
    """
    spec = block.entanglement
    if spec.kind in GAMMA_KINDS:
        return spec.gamma
    return 1.0 if spec.kind == "none" else 0.0


def _flip_adjoint(kernel: np.ndarray) -> np.ndarray:
    spatial = kernel.ndim - 2
    flipped = kernel[(slice(None, None, -1),) * spatial]
    return np.swapaxes(flipped, -1, -2)


def operator_norm(block: BlockParams, feature_shape: tuple[int, ...]) -> float:
    """Spectral norm of the block's skip operator.

    Matrices and 1-tap kernels use their channel matrix; wider kernels use
    power iteration on the circularly padded convolution over ``feature_shape``.
    """
    from . import autodiff as ad

    spec = block.entanglement
    if spec.kind == "identity":
        return 1.0
    if spec.kind == "none":
        return 0.0
    op = block.operator
    if op.ndim == 2 or op.shape[0] == 1:
        c = op.shape[-1]
        return linalg.spectral_norm(op.reshape(c, c))
    conv = ad.conv2d if op.ndim == 4 else ad.conv1d
    adj = _flip_adjoint(op)
    size = int(np.prod(feature_shape))

    def matvec(v):
        return conv(Tensor(v.reshape(feature_shape)), op, padding="circular").data.ravel()

    def rmatvec(w):
        return conv(Tensor(w.reshape(feature_shape)), adj, padding="circular").data.ravel()

    return linalg.power_iteration(matvec, rmatvec, size, iters=500, tol=1e-12)


def _sample_norms(t: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(t.reshape(t.shape[0], -1) ** 2, axis=1))


def _ratio(num: np.ndarray | float, den: np.ndarray | float):
    den = np.asarray(den, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den >= RATIO_EPS, np.asarray(num) / den, np.nan)


def trace_refinement(model: list[BlockParams], batch) -> list[RefinementTrace]:
    """One forward pass through residual ``model`` recording per-block ratios.

    ``batch`` carries a leading batch axis. Norms are averaged over the batch
    before ratios are formed; per-sample ratios are kept alongside.
    """
    x = batch.data if isinstance(batch, Tensor) else np.asarray(batch, dtype=np.float64)
    traces = []
    for i, block in enumerate(model):
        if block.kind not in ("mlp_residual", "conv_residual"):
            raise BlockError(f"refinement tracing needs residual blocks, got {block.kind}")
        xt = Tensor(x)
        f_out = residual_branch(xt, block).data
        gx = block.skip(xt).data
        xs, fs, gs = _sample_norms(x), _sample_norms(f_out), _sample_norms(gx)
        x_norm, f_norm, gx_norm = float(xs.mean()), float(fs.mean()), float(gs.mean())
        gamma = bound_gamma(block)
        snorm = operator_norm(block, x.shape[1:])
        plain_ok, ent_ok = x_norm >= RATIO_EPS, gx_norm >= RATIO_EPS
        lower, upper = lemma1_bounds(f_norm, x_norm, gamma, snorm) if plain_ok else (math.nan, math.nan)
        traces.append(RefinementTrace(
            block_index=i,
            x_norm=x_norm,
            f_norm=f_norm,
            gamma_x_norm=gx_norm,
            plain_ratio=float(_ratio(f_norm, x_norm)),
            entangled_ratio=float(_ratio(f_norm, gx_norm)),
            lower_bound=lower,
            upper_bound=upper,
            gamma=gamma,
            spectral_norm_gamma=snorm,
            plain_valid=bool(plain_ok),
            entangled_valid=bool(ent_ok),
            per_sample_plain=_ratio(fs, xs),
            per_sample_entangled=_ratio(fs, gs),
        ))
        x = f_out if block.entanglement.kind == "none" else f_out + gx
    return traces


def refinement_report(traces_by_checkpoint) -> list[dict]:
    """Flatten traces from several checkpoints into table rows.

    Accepts a list of trace lists or a mapping ``checkpoint label -> traces``.
    """
    if isinstance(traces_by_checkpoint, dict):
        items = list(traces_by_checkpoint.items())
    else:
        items = list(enumerate(traces_by_checkpoint))
    rows = []
    for label, traces in items:
        for t in traces:
            rows.append({"checkpoint": label, **t.row()})
    return rows


def write_trace_csv(traces: list[RefinementTrace], path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for t in traces:
            writer.writerow({k: _csv_value(v) for k, v in t.row().items()})
    return path


def write_report_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    fields = ("checkpoint",) + TRACE_COLUMNS
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(row[k]) for k in fields})
    return path


def _csv_value(v):
    if isinstance(v, float):
        return repr(v)
    return v
