"""Built-in invariant suite behind ``entangled check``.

Each check returns a :class:`CheckResult`. Kernel-level checks build their
operators through a :class:`Constructors` object so that a deliberately
perturbed constructor set can be swapped in to prove the suite notices.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import entangle, linalg
from .autodiff import Tensor
from .blocks import BlockParams, LSTMState, init_block, lstm_step, residual_forward, \
    transformer_encoder_forward
from .entangle import EntanglementSpec
from .gradcheck import grad_check
from .refine import lemma1_bounds

PERTURBATION = 1e-6
PERTURBABLE = ("dense", "orthogonal", "spatial", "channel", "channel_spatial", "orthogonal_channel")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<28} {self.detail} ({self.seconds:.1f}s)"


@dataclass
class Constructors:
    """Entanglement constructors used by the kernel-level checks.

    ``perturb`` names kinds whose first entry gets ``+PERTURBATION``.
    """

    perturb: frozenset = field(default_factory=frozenset)

    def _bump(self, kind: str, arr: np.ndarray) -> np.ndarray:
        if kind not in self.perturb:
            return arr
        out = np.array(arr, dtype=np.float64)
        out.reshape(-1)[0] += PERTURBATION
        return out

    def dense(self, n, gamma):
        return self._bump("dense", entangle.make_dense_gamma(n, gamma))

    def orthogonal(self, n, seed):
        return self._bump("orthogonal", entangle.make_orthogonal_gamma(n, seed))

    def spatial(self, k, c, gamma):
        return self._bump("spatial", entangle.make_spatial_kernel(k, c, gamma).data)

    def channel(self, k, c, gamma):
        kind = "channel" if k == 1 else "channel_spatial"
        return self._bump(kind, entangle.make_channel_kernel(k, c, gamma).data)

    def orthogonal_channel(self, c, seed):
        return self._bump("orthogonal_channel", entangle.make_orthogonal_channel_kernel(c, seed).data)


def _timed(name, fn, *args) -> CheckResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn(*args)
    except Exception as exc:  # any raised error is a violation
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t0)


# ---------------------------------------------------------------- 1 spectrum

def check_spectrum(make: Constructors, ns=(2, 8, 64), gammas=(0.0, 0.1, 0.5, 0.9, 1.0), tol=1e-9):
    worst = 0.0
    for n in ns:
        for g in gammas:
            got = np.array(linalg.eig_symmetric(make.dense(n, g)))
            want = np.array(sorted([1.0] + [1.0 - g] * (n - 1), reverse=True))
            worst = max(worst, float(np.max(np.abs(got - want))))
    return worst <= tol, f"max |eig - expected| = {worst:.2e} (tol {tol:g})"


# ---------------------------------------------------------------- 2 orthogonality

def check_orthogonality(make: Constructors, ns=(4, 64, 256), seeds=range(10)):
    worst_gram, worst_sv = 0.0, 0.0
    for n in ns:
        for s in seeds:
            q = make.orthogonal(n, s)
            worst_gram = max(worst_gram, linalg.frobenius_norm(q.T @ q - np.eye(n)))
            sv = np.array(linalg.singular_values(q))
            worst_sv = max(worst_sv, float(np.max(np.abs(sv - 1.0))))
    ok = worst_gram <= 1e-10 and worst_sv <= 1e-9
    return ok, f"max |Q^T Q - I|_F = {worst_gram:.2e}, max |sv - 1| = {worst_sv:.2e}"


# ---------------------------------------------------------------- 3 identity reduction

def vanilla_forward(x: Tensor, block: BlockParams, state: LSTMState | None = None):
    """Plain identity-skip counterpart of ``block`` sharing its parameters."""
    p = block.params
    if block.kind == "mlp_residual":
        return ad.add(ad.linear(ad.relu(ad.linear(x, p["w1"], p["b1"])), p["w2"], p["b2"]), x)
    if block.kind == "conv_residual":
        h = ad.relu(ad.add(ad.conv2d(x, p["k1"]), p["b1"]))
        return ad.add(ad.add(ad.conv2d(h, p["k2"]), p["b2"]), x)
    if block.kind == "transformer_encoder":
        att = ad.attention(x, p["wq"], p["wk"], p["wv"], p["wo"])
        h = ad.layernorm(ad.add(x, att), p["ln1_scale"], p["ln1_shift"])
        ff = ad.linear(ad.gelu(ad.linear(h, p["ff_w1"], p["ff_b1"])), p["ff_w2"], p["ff_b2"])
        return ad.layernorm(ad.add(h, ff), p["ln2_scale"], p["ln2_shift"])
    w = block.width
    pre = ad.linear(ad.concat([x, state.h], axis=-1), p["w"], p["b"])
    i = ad.sigmoid(pre[..., 0:w])
    f = ad.sigmoid(pre[..., w:2 * w])
    o = ad.sigmoid(pre[..., 2 * w:3 * w])
    z = ad.tanh(pre[..., 3 * w:4 * w])
    c = ad.add(ad.mul(f, state.c), ad.mul(i, z))
    return LSTMState(c, ad.mul(o, ad.tanh(c)))


REDUCTION_SPECS = {
    "mlp_residual": (EntanglementSpec("identity"), EntanglementSpec("dense", 0.0),
                     EntanglementSpec("channel", 0.0)),
    "conv_residual": (EntanglementSpec("identity"), EntanglementSpec("spatial", 0.0),
                      EntanglementSpec("channel", 0.0), EntanglementSpec("channel_spatial", 0.0),
                      EntanglementSpec("dense", 0.0)),
    "transformer_encoder": (EntanglementSpec("identity"), EntanglementSpec("spatial", 0.0),
                            EntanglementSpec("channel", 0.0), EntanglementSpec("dense", 0.0)),
    "lstm_cell": (EntanglementSpec("identity"), EntanglementSpec("dense", 0.0)),
}


def _random_input(kind: str, width: int, rng) -> np.ndarray:
    if kind == "conv_residual":
        return rng.standard_normal((2, 5, 5, width))
    if kind == "transformer_encoder":
        return rng.standard_normal((2, 5, width))
    return rng.standard_normal((3, width))


def _block_output(block: BlockParams, x: Tensor, state=None):
    if block.kind == "lstm_cell":
        return lstm_step(state, x, block)
    if block.kind == "transformer_encoder":
        return transformer_encoder_forward(x, block)
    return residual_forward(x, block)[0]


def _lstm_loss(st: LSTMState, wc, wh):
    return ad.add(ad.sum_(ad.mul(st.c, wc)), ad.sum_(ad.mul(st.h, wh)))


def reduction_errors(kind: str, spec: EntanglementSpec, seed: int, width: int = 4) -> tuple[float, float]:
    """Forward and gradient max-abs differences between ``spec`` and the vanilla block."""
    rng = np.random.default_rng([seed, 3])
    block = init_block(kind, width, spec.with_size(width), rng)
    x = ad.parameter(_random_input(kind, width, rng))
    state = None
    if kind == "lstm_cell":
        n = x.shape[0]
        state = LSTMState(ad.parameter(rng.standard_normal((n, width))),
                          ad.parameter(rng.standard_normal((n, width))))
    out_e = _block_output(block, x, state)
    out_v = vanilla_forward(x, block, state)
    leaves = [x] + block.trainable() + ([state.c, state.h] if state else [])
    if kind == "lstm_cell":
        wc, wh = rng.standard_normal(out_e.c.shape), rng.standard_normal(out_e.h.shape)
        fwd = max(np.max(np.abs(out_e.c.data - out_v.c.data)), np.max(np.abs(out_e.h.data - out_v.h.data)))
        losses = (_lstm_loss(out_e, wc, wh), _lstm_loss(out_v, wc, wh))
    else:
        w = rng.standard_normal(out_e.shape)
        fwd = np.max(np.abs(out_e.data - out_v.data))
        losses = (ad.sum_(ad.mul(out_e, w)), ad.sum_(ad.mul(out_v, w)))
    grads = []
    for loss in losses:
        for t in leaves:
            t.grad = None
        ad.backward(loss)
        grads.append([np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in leaves])
    gerr = max(float(np.max(np.abs(a - b))) for a, b in zip(*grads))
    return float(fwd), gerr


def check_identity_reduction(n_inputs: int = 50):
    worst_f, worst_g = 0.0, 0.0
    for kind, specs in REDUCTION_SPECS.items():
        for i in range(n_inputs):
            f, g = reduction_errors(kind, specs[i % len(specs)], seed=i)
            worst_f, worst_g = max(worst_f, f), max(worst_g, g)
    ok = worst_f <= 1e-15 and worst_g <= 1e-12
    return ok, f"max forward diff {worst_f:.1e}, max grad diff {worst_g:.1e}"


# ---------------------------------------------------------------- 4 jacobian

def input_gradient_operator(block: BlockParams, x: np.ndarray) -> np.ndarray:
    """Matrix whose row ``j`` is d<e_j, y>/dx for a single input row ``x``."""
    n = block.width
    rows = []
    for j in range(n):
        xt = ad.parameter(x)
        y, _ = residual_forward(xt, block)
        ad.backward(y, np.eye(n)[j])
        rows.append(xt.grad.copy())
    return np.array(rows)


def jacobian_specs(count: int = 10, width: int = 6) -> list[EntanglementSpec]:
    rng = np.random.default_rng(44)
    specs = []
    for i in range(count):
        if i % 2:
            specs.append(EntanglementSpec("orthogonal", seed=int(rng.integers(0, 2**32)), dim=width))
        else:
            specs.append(EntanglementSpec("dense", float(rng.uniform(0, 1)), dim=width))
    return specs


def check_jacobian(count: int = 10, width: int = 6):
    worst = 0.0
    for i, spec in enumerate(jacobian_specs(count, width)):
        rng = np.random.default_rng([i, 4])
        block = init_block("mlp_residual", width, spec, rng)
        for t in block.trainable():
            t.data[...] = 0.0
        m = input_gradient_operator(block, rng.standard_normal(width))
        worst = max(worst, float(np.max(np.abs(m - block.operator.T))))
    return worst <= 1e-12, f"max |dR/dx - G^T| = {worst:.1e} over {count} specs"


# ---------------------------------------------------------------- 5 gradients

def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return ad.sum_(ad.mul(out, w))


def op_cases():
    """``name -> builder(rng) -> (fn, inputs)`` for every differentiable op."""
    def unary(op, shape=(3, 4)):
        def build(rng):
            x = rng.standard_normal(shape)
            w = rng.standard_normal(op(Tensor(x)).shape)
            return (lambda x: _weighted(op(x), w)), [x]
        return build

    def binary(op, sa, sb, out):
        def build(rng):
            w = rng.standard_normal(out)
            return (lambda a, b: _weighted(op(a, b), w)), [rng.standard_normal(sa), rng.standard_normal(sb)]
        return build

    def conv(op, xs, ks, padding):
        def build(rng):
            w = rng.standard_normal(xs[:-1] + (ks[-1],))
            return (lambda x, k: _weighted(op(x, k, padding), w)), [rng.standard_normal(xs), rng.standard_normal(ks)]
        return build

    def attention(rng):
        w = rng.standard_normal((3, 4))
        ins = [rng.standard_normal((3, 4))] + [rng.standard_normal((4, 4)) * 0.7 for _ in range(4)]
        return (lambda x, *ws: _weighted(ad.attention(x, *ws), w)), ins

    def layernorm(rng):
        w = rng.standard_normal((2, 6))
        ins = [rng.standard_normal((2, 6)), rng.standard_normal(6), rng.standard_normal(6)]
        return (lambda x, s, b: _weighted(ad.layernorm(x, s, b), w)), ins

    def xent(rng):
        labels = rng.integers(0, 5, size=4)
        return (lambda z: ad.cross_entropy_with_logits(z, labels)), [rng.standard_normal((4, 5))]

    def index_stack(rng):
        w = rng.standard_normal((3, 2, 2))
        return (lambda x: _weighted(ad.stack([x[:, 1:3], ad.tanh(x[:, 0:2])], axis=1), w)), \
            [rng.standard_normal((3, 4))]

    return {
        "add": binary(ad.add, (3, 4), (4,), (3, 4)),
        "mul": binary(ad.mul, (3, 4), (3, 1), (3, 4)),
        "matmul": binary(ad.matmul, (2, 3, 4), (4, 5), (2, 3, 5)),
        "relu": unary(ad.relu),
        "gelu": unary(ad.gelu),
        "sigmoid": unary(ad.sigmoid),
        "tanh": unary(ad.tanh),
        "softmax": unary(ad.softmax),
        "log_softmax": unary(ad.log_softmax),
        "cross_entropy": xent,
        "layernorm": layernorm,
        "mean_pool": unary(lambda x: ad.mean_pool(x, axes=(1, 2)), (2, 3, 3, 2)),
        "avg_pool2d": unary(lambda x: ad.avg_pool2d(x, 2), (1, 4, 4, 2)),
        "conv2d_zero": conv(ad.conv2d, (2, 4, 4, 2), (3, 3, 2, 3), "zero"),
        "conv2d_circular": conv(ad.conv2d, (4, 4, 2), (3, 3, 2, 2), "circular"),
        "conv1d_zero": conv(ad.conv1d, (2, 5, 2), (3, 2, 3), "zero"),
        "conv1d_circular": conv(ad.conv1d, (5, 3), (3, 3, 2), "circular"),
        "attention": attention,
        "index_stack": index_stack,
        "concat_swapaxes": binary(lambda a, b: ad.swapaxes(ad.concat([a, b], axis=-1), 0, 1),
                                  (2, 3), (2, 2), (5, 2)),
    }


BLOCK_GRAD_SPECS = (
    EntanglementSpec("identity"),
    EntanglementSpec("none"),
    EntanglementSpec("dense", 0.3),
    EntanglementSpec("orthogonal", seed=5),
    EntanglementSpec("spatial", 0.6),
    EntanglementSpec("channel", 0.4),
    EntanglementSpec("channel_spatial", 0.7),
    EntanglementSpec("orthogonal_channel", seed=9),
)


def block_specs(kind: str) -> tuple[EntanglementSpec, ...]:
    if kind in ("mlp_residual", "lstm_cell"):
        return tuple(s for s in BLOCK_GRAD_SPECS if s.kind not in ("spatial", "channel_spatial"))
    return BLOCK_GRAD_SPECS


def block_grad_error(kind: str, spec: EntanglementSpec, seed: int, width: int = 3) -> float:
    rng = np.random.default_rng([seed, 5])
    block = init_block(kind, width, spec.with_size(width), rng)
    x = ad.parameter(_random_input(kind, width, rng)[:2] if kind != "conv_residual"
                     else rng.standard_normal((1, 4, 4, width)))
    leaves = [x] + block.trainable()
    if kind == "lstm_cell":
        c0 = ad.parameter(rng.standard_normal((2, width)))
        h0 = ad.parameter(rng.standard_normal((2, width)))
        x2 = rng.standard_normal((2, width))
        wc, wh = rng.standard_normal((2, width)), rng.standard_normal((2, width))
        leaves += [c0, h0]

        def fn(x, *rest):
            st = lstm_step(LSTMState(c0, h0), x, block)
            st = lstm_step(st, Tensor(x2), block)
            return _lstm_loss(st, wc, wh)
    else:
        out_shape = _block_output(block, x).shape
        w = rng.standard_normal(out_shape)

        def fn(x, *rest):
            return _weighted(_block_output(block, x), w)
    return grad_check(fn, leaves, 1e-5)


GRAD_BLOCK_KINDS = ("mlp_residual", "conv_residual", "transformer_encoder", "lstm_cell")


def check_gradients(instances: int = 20, tol: float = 1e-4):
    worst, worst_name = 0.0, ""
    for name, build in op_cases().items():
        for i in range(instances):
            rng = np.random.default_rng([i, 6, len(name)])
            fn, arrays = build(rng)
            err = grad_check(fn, [ad.parameter(a) for a in arrays], 1e-5)
            if err > worst:
                worst, worst_name = err, name
    for kind in GRAD_BLOCK_KINDS:
        specs = block_specs(kind)
        for i in range(instances):
            err = block_grad_error(kind, specs[i % len(specs)], seed=i)
            if err > worst:
                worst, worst_name = err, f"{kind}/{specs[i % len(specs)].kind}"
    return worst <= tol, f"max rel. error {worst:.1e} ({worst_name}); tol {tol:g}"


# ---------------------------------------------------------------- 6 refinement-bound sandwich

def sandwich_draws(count: int = 1000, seed: int = 2024):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(2, 65))
        gamma = float(rng.uniform(0.0, 0.99))
        direction = rng.standard_normal(n)
        x = direction / np.linalg.norm(direction) * float(rng.uniform(0.01, 10.0))
        f_norm = float(rng.uniform(0.0, 5.0))
        yield n, gamma, x, f_norm


def check_sandwich(make: Constructors, count: int = 1000, slack: float = 1e-12):
    violations = 0
    for n, gamma, x, f_norm in sandwich_draws(count):
        g = make.dense(n, gamma)
        gx = linalg.l2_norm(x @ g)
        xn = linalg.l2_norm(x)
        sn = linalg.spectral_norm(g)
        lower, upper = lemma1_bounds(f_norm, xn, gamma, sn)
        r2 = (f_norm / gx) ** 2
        tol = slack * max(1.0, r2)
        if not (lower - tol <= r2 <= upper + tol):
            violations += 1
        elif gx > sn * xn + slack * max(1.0, xn) or (1.0 - gamma) * xn > gx + slack * max(1.0, xn):
            violations += 1
    return violations == 0, f"{violations} violations in {count} draws"


# ---------------------------------------------------------------- 7 mass conservation

def check_mass(make: Constructors, sizes=(1, 3, 5), channels=(1, 4, 16), gammas=(0.0, 0.3, 0.9, 1.0)):
    worst_mass, worst_cross, worst_const, worst_orth = 0.0, 0.0, 0.0, 0.0
    rng = np.random.default_rng(7)
    for k in sizes:
        for c in channels:
            for g in gammas:
                for kern, per_channel in ((make.spatial(k, c, g), True), (make.channel(k, c, g), False)):
                    mass = kern.sum(axis=(0, 1, 2))
                    worst_mass = max(worst_mass, float(np.max(np.abs(mass - 1.0))))
                    if per_channel:
                        off = kern * (1.0 - np.eye(c))[None, None]
                        worst_cross = max(worst_cross, float(np.max(np.abs(off))))
                        vals = rng.standard_normal(c)
                    else:
                        vals = np.full(c, rng.standard_normal())
                    x = np.broadcast_to(vals, (6, 6, c)).copy()
                    y = ad.conv2d(Tensor(x), kern, padding="circular").data
                    worst_const = max(worst_const, float(np.max(np.abs(y - x))))
            if k == 1:
                m = make.orthogonal_channel(c, seed=c).reshape(c, c)
                worst_orth = max(worst_orth, linalg.frobenius_norm(m.T @ m - np.eye(c)))
    ok = worst_mass <= 1e-12 and worst_cross == 0.0 and worst_const <= 1e-12 and worst_orth <= 1e-10
    return ok, (f"mass dev {worst_mass:.1e}, cross-channel {worst_cross:.1e}, "
                f"constant-input dev {worst_const:.1e}, orth-channel {worst_orth:.1e}")


def run_checks(perturb=()) -> list[CheckResult]:
    """Run the kernel, reduction, gradient and bound checks; ``perturb`` selects kinds to corrupt."""
    make = Constructors(frozenset(perturb))
    return [
        _timed("1 dense spectrum", check_spectrum, make),
        _timed("2 orthogonality", check_orthogonality, make),
        _timed("3 identity reduction", check_identity_reduction),
        _timed("4 jacobian = G^T", check_jacobian),
        _timed("5 gradient checks", check_gradients),
        _timed("6 refinement sandwich", check_sandwich, make),
        _timed("7 kernel mass", check_mass, make),
    ]


def all_passed(results) -> bool:
    return all(r.passed for r in results) and not any(math.isnan(r.seconds) for r in results)
