"""Constant entanglement operators that replace the identity on a skip path.

Vector kinds produce an ``n x n`` matrix; convolutional kinds produce a 2D
kernel of shape ``(k, k, C, C)`` or a 1D kernel of shape ``(k, C, C)``
laid out as ``(taps..., C_in, C_out)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg

KINDS = (
    "identity",
    "none",
    "dense",
    "orthogonal",
    "spatial",
    "channel",
    "channel_spatial",
    "orthogonal_channel",
)
VECTOR_KINDS = ("dense", "orthogonal")
CONV_KINDS = ("spatial", "channel", "channel_spatial", "orthogonal_channel")
GAMMA_KINDS = ("dense", "spatial", "channel", "channel_spatial")


class SpecError(ValueError):
    """Invalid entanglement description."""


@dataclass(frozen=True)
class EntanglementSpec:
    """Declarative description of one entanglement operator.

    ``kernel_size`` defaults to 1 for ``channel`` and 3 for the other spatial
    kinds when left as ``None``.
    """

    kind: str = "identity"
    gamma: float = 0.0
    kernel_size: int | None = None
    channels: int | None = None
    dim: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.kind not in KINDS:
            raise SpecError(f"unknown entanglement kind {self.kind!r}; expected one of {KINDS}")
        if not (0.0 <= float(self.gamma) <= 1.0) or math.isnan(self.gamma):
            raise SpecError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.kernel_size is not None and (self.kernel_size < 1 or self.kernel_size % 2 == 0):
            raise SpecError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if not (0 <= int(self.seed) < 2**64):
            raise SpecError("seed must fit in an unsigned 64-bit integer")

    @property
    def k(self) -> int:
        if self.kind not in ("spatial", "channel", "channel_spatial"):
            return 1
        if self.kernel_size is not None:
            return self.kernel_size
        return 3 if self.kind in ("spatial", "channel_spatial") else 1

    def with_size(self, width: int) -> "EntanglementSpec":
        """Copy with ``dim`` and ``channels`` set to the feature width of a block."""
        return EntanglementSpec(self.kind, self.gamma, self.kernel_size, width, width, self.seed)

    def label(self) -> str:
        if self.kind in ("identity", "none"):
            return self.kind
        if self.kind in ("orthogonal", "orthogonal_channel"):
            return f"{self.kind}(seed={self.seed})"
        if self.kind == "dense":
            return f"dense(gamma={self.gamma:g})"
        return f"{self.kind}(gamma={self.gamma:g},k={self.k})"

    def to_text(self) -> str:
        """Single-line ``key=value`` rendering used by the file formats."""
        def opt(v):
            return "-" if v is None else str(v)
        return (f"kind={self.kind} gamma={self.gamma!r} k={opt(self.kernel_size)} "
                f"c={opt(self.channels)} n={opt(self.dim)} seed={self.seed}")

    @classmethod
    def from_text(cls, text: str) -> "EntanglementSpec":
        fields = dict(item.split("=", 1) for item in text.split())
        def opt(v):
            return None if v in (None, "-", "") else int(v)
        try:
            return cls(
                kind=fields["kind"],
                gamma=float(fields.get("gamma", 0.0)),
                kernel_size=opt(fields.get("k")),
                channels=opt(fields.get("c")),
                dim=opt(fields.get("n")),
                seed=int(fields.get("seed", 0)),
            )
        except KeyError as exc:
            raise SpecError(f"spec line is missing {exc}") from None


@dataclass(frozen=True)
class ConvKernel:
    """Constant convolution kernel, ``(k, k, C_in, C_out)`` or ``(k, C_in, C_out)``."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim not in (3, 4):
            raise SpecError(f"kernel must have rank 3 or 4, got {data.ndim}")
        if data.shape[-1] != data.shape[-2]:
            raise SpecError("entanglement kernels map C channels onto C channels")
        if any(s != data.shape[0] for s in data.shape[:-2]) or data.shape[0] % 2 == 0:
            raise SpecError(f"kernel taps must be square and odd, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise SpecError("kernel has non-finite entries")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def kernel_size(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[-1]

    @property
    def spatial_rank(self) -> int:
        return self.data.ndim - 2

    def channel_matrix(self) -> np.ndarray:
        """``C_in x C_out`` mixing matrix of a 1-tap kernel."""
        if self.kernel_size != 1:
            raise SpecError("channel matrix is defined only for kernel_size 1")
        return self.data.reshape(self.channels, self.channels)


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not 0.0 <= gamma <= 1.0:
        raise SpecError(f"gamma must lie in [0, 1], got {gamma}")
    return gamma


def _check_odd(kernel_size: int) -> int:
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise SpecError(f"kernel_size must be a positive odd integer, got {kernel_size}")
    return kernel_size


def standard_normal(seed: int, size: int) -> np.ndarray:
    """Seeded standard-normal draws: PCG64 raw 64-bit words through Box-Muller.

    Only the raw bit stream of the generator is used, so the values depend on
    nothing but ``seed``.
    """
    pairs = (size + 1) // 2
    raw = np.random.PCG64(int(seed)).random_raw(2 * pairs)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    u1, u2 = u[0::2], u[1::2]
    rad = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * pairs)
    z[0::2] = rad * np.cos(2.0 * np.pi * u2)
    z[1::2] = rad * np.sin(2.0 * np.pi * u2)
    return z[:size]


def make_dense_gamma(n: int, gamma: float) -> np.ndarray:
    """``gamma/n * ones + (1 - gamma) * I``: one eigenvalue 1, the rest ``1 - gamma``."""
    gamma = _check_gamma(gamma)
    if n < 1:
        raise SpecError("n must be >= 1")
    g = np.full((n, n), gamma / n)
    g[np.diag_indices(n)] += 1.0 - gamma
    return linalg.as_matrix(g)


def make_orthogonal_gamma(n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise SpecError("n must be >= 1")
    a = standard_normal(seed, n * n).reshape(n, n)
    q, _ = linalg.qr_decompose(a)
    return linalg.as_matrix(q)


def make_spatial_kernel(kernel_size: int, channels: int, gamma: float) -> ConvKernel:
    kernel_size, gamma = _check_odd(kernel_size), _check_gamma(gamma)
    c = kernel_size // 2
    kern = np.zeros((kernel_size, kernel_size, channels, channels))
    for i in range(channels):
        kern[:, :, i, i] += gamma / kernel_size**2
        kern[c, c, i, i] += 1.0 - gamma
    return ConvKernel(kern)


def make_channel_kernel(kernel_size: int, channels: int, gamma: float) -> ConvKernel:
    """Uniform mixing over all taps and channels plus ``1 - gamma`` on the centre diagonal."""
    kernel_size, gamma = _check_odd(kernel_size), _check_gamma(gamma)
    c = kernel_size // 2
    kern = np.ones((kernel_size, kernel_size, channels, channels)) * gamma / (kernel_size**2 * channels)
    for i in range(channels):
        kern[c, c, i, i] += 1.0 - gamma
    return ConvKernel(kern)


def make_orthogonal_channel_kernel(channels: int, seed: int) -> ConvKernel:
    q = make_orthogonal_gamma(channels, seed)
    return ConvKernel(q.reshape(1, 1, channels, channels))


def make_identity_kernel(channels: int, spatial_rank: int = 2) -> ConvKernel:
    eye = np.eye(channels)
    return ConvKernel(eye.reshape((1,) * spatial_rank + (channels, channels)))


def make_seq_kernel(spec: EntanglementSpec) -> ConvKernel:
    """1D analogue of the 2D constructors for ``(L, D)`` feature sequences."""
    if spec.kind not in CONV_KINDS + ("identity",):
        raise SpecError(f"no 1D kernel for kind {spec.kind!r}")
    channels = spec.channels
    if channels is None or channels < 1:
        raise SpecError("channels must be set for a sequence kernel")
    k = _check_odd(spec.k)
    gamma = _check_gamma(spec.gamma)
    c = k // 2
    if spec.kind == "identity":
        return make_identity_kernel(channels, spatial_rank=1)
    if spec.kind == "orthogonal_channel":
        return ConvKernel(make_orthogonal_gamma(channels, spec.seed).reshape(1, channels, channels))
    if spec.kind == "spatial":
        kern = np.zeros((k, channels, channels))
        for i in range(channels):
            kern[:, i, i] += gamma / k
            kern[c, i, i] += 1.0 - gamma
        return ConvKernel(kern)
    kern = np.ones((k, channels, channels)) * gamma / (k * channels)
    for i in range(channels):
        kern[c, i, i] += 1.0 - gamma
    return ConvKernel(kern)


def make_conv_kernel(spec: EntanglementSpec) -> ConvKernel:
    """2D kernel for a conv kind (or the 1x1 identity)."""
    channels = spec.channels
    if channels is None or channels < 1:
        raise SpecError("channels must be set for a convolutional kernel")
    if spec.kind == "identity":
        return make_identity_kernel(channels)
    if spec.kind == "spatial":
        return make_spatial_kernel(spec.k, channels, spec.gamma)
    if spec.kind in ("channel", "channel_spatial"):
        return make_channel_kernel(spec.k, channels, spec.gamma)
    if spec.kind == "orthogonal_channel":
        return make_orthogonal_channel_kernel(channels, spec.seed)
    raise SpecError(f"no 2D kernel for kind {spec.kind!r}")


def make_matrix(spec: EntanglementSpec) -> np.ndarray:
    """Square mixing matrix for vector kinds and 1-tap conv kinds."""
    n = spec.dim if spec.dim is not None else spec.channels
    if n is None or n < 1:
        raise SpecError("dim (or channels) must be set to build a matrix")
    if spec.kind == "identity":
        return linalg.as_matrix(np.eye(n))
    if spec.kind == "none":
        return linalg.as_matrix(np.zeros((n, n)))
    if spec.kind == "dense":
        return make_dense_gamma(n, spec.gamma)
    if spec.kind in ("orthogonal", "orthogonal_channel"):
        return make_orthogonal_gamma(n, spec.seed)
    if spec.kind in ("channel", "channel_spatial", "spatial") and spec.k == 1:
        return linalg.as_matrix(make_conv_kernel(spec).channel_matrix())
    raise SpecError(f"kind {spec.kind!r} with kernel_size {spec.k} has no single channel matrix")


def spectrum_report(spec: EntanglementSpec) -> dict:
    """Spectrum summary of the operator described by ``spec``.

    Matrix-valued operators report eigenvalues (symmetric only), singular
    values, spectral norm and orthogonality. Spatial kernels with more than
    one tap report the l1/l2 norms of the per-channel tap vector instead.
    """
    if spec.kind == "spatial" and spec.k > 1:
        kern = make_spatial_kernel(spec.k, spec.channels or 1, spec.gamma)
        taps = kern.data[:, :, 0, 0].ravel()
        return {
            "spec": spec.label(),
            "tap_l1": float(np.sum(np.abs(taps))),
            "tap_l2": linalg.l2_norm(taps),
        }
    if spec.kind == "channel_spatial" or (spec.kind == "channel" and spec.k > 1):
        kern = make_channel_kernel(spec.k, spec.channels or 1, spec.gamma)
        taps = kern.data[..., 0].ravel()
        return {
            "spec": spec.label(),
            "tap_l1": float(np.sum(np.abs(taps))),
            "tap_l2": linalg.l2_norm(taps),
        }
    m = make_matrix(spec)
    n = m.shape[0]
    sym = linalg.frobenius_norm(m - m.T) <= 1e-12 * max(linalg.frobenius_norm(m), 1.0)
    return {
        "spec": spec.label(),
        "eigenvalues": linalg.eig_symmetric(m) if sym else None,
        "singular_values": linalg.singular_values(m),
        "spectral_norm": linalg.spectral_norm(m),
        "is_orthogonal": linalg.frobenius_norm(m.T @ m - np.eye(n)) <= 1e-8,
    }
