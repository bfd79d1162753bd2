"""Dense matrix primitives in float64.

QR by Householder reflections, a cyclic Jacobi symmetric eigensolver, one-sided
Jacobi singular values and a deterministic power iteration. Matrices are plain
2D ``numpy.ndarray`` values; :func:`as_matrix` enforces the shared invariants.
"""
from __future__ import annotations

import numpy as np


class LinalgError(ValueError):
    """Raised when an input violates a precondition of a matrix routine."""


class SymmetryError(LinalgError):
    pass


def as_matrix(a, square: bool = False) -> np.ndarray:
    """Validate ``a`` as a finite 2D float64 matrix and return a read-only copy."""
    m = np.array(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise LinalgError(f"expected a non-empty 2D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise LinalgError("matrix has non-finite entries")
    if square and m.shape[0] != m.shape[1]:
        raise LinalgError(f"expected a square matrix, got shape {m.shape}")
    m.setflags(write=False)
    return m


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


def l2_norm(v) -> float:
    """Euclidean norm of a tensor of any rank, taken over all entries."""
    return frobenius_norm(v)


def qr_decompose(a) -> tuple[np.ndarray, np.ndarray]:
    """Householder QR of a square matrix with a nonnegative diagonal of R.

    Rank-deficient inputs are fine: a zero column below the diagonal simply
    skips its reflection.
    """
    a = as_matrix(a, square=True)
    n = a.shape[0]
    r = a.copy()
    q = np.eye(n)
    for k in range(n - 1):
        x = r[k:, k]
        normx = np.sqrt(x @ x)
        if normx == 0.0:
            continue
        v = x.copy()
        v[0] += normx if x[0] >= 0 else -normx
        v /= np.sqrt(v @ v)
        r[k:, k:] -= 2.0 * np.outer(v, v @ r[k:, k:])
        # accumulate Q = H_0 H_1 ... H_{n-2}
        q[:, k:] -= 2.0 * np.outer(q[:, k:] @ v, v)
        r[k + 1:, k] = 0.0
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    r = signs[:, None] * r
    q = q * signs[None, :]
    return q, r


def _jacobi_sweep_pairs(n: int):
    for p in range(n - 1):
        for q in range(p + 1, n):
            yield p, q


def eig_symmetric(a, tol: float = 1e-12, max_sweeps: int = 100) -> list[float]:
    """Eigenvalues of a symmetric matrix in descending order (cyclic Jacobi).

    Sweeps stop once the off-diagonal Frobenius norm drops below
    ``tol * ||A||_F`` (absolute ``tol`` for a zero matrix).
    """
    a = as_matrix(a, square=True)
    scale = frobenius_norm(a)
    if frobenius_norm(a - a.T) > 1e-12 * scale:
        raise SymmetryError("matrix is not symmetric within 1e-12 relative Frobenius tolerance")
    m = 0.5 * (a + a.T)
    n = m.shape[0]
    threshold = tol * max(scale, 1.0)
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(m * m) - np.sum(np.diag(m) ** 2), 0.0))
        if off <= threshold:
            break
        for p, q in _jacobi_sweep_pairs(n):
            apq = m[p, q]
            if apq == 0.0:
                continue
            with np.errstate(over="ignore"):  # huge theta just means t -> 0
                theta = (m[q, q] - m[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0)) if theta != 0 else 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rp = m[p, :].copy()
            rq = m[q, :].copy()
            m[p, :] = c * rp - s * rq
            m[q, :] = s * rp + c * rq
            cp = m[:, p].copy()
            cq = m[:, q].copy()
            m[:, p] = c * cp - s * cq
            m[:, q] = s * cp + c * cq
            m[p, q] = m[q, p] = 0.0
    return sorted(np.diag(m).tolist(), reverse=True)


def singular_values(a, tol: float = 1e-15, max_sweeps: int = 100) -> list[float]:
    """Singular values in descending order by one-sided (Hestenes) Jacobi.

    Columns are rotated pairwise until mutually orthogonal; the column norms
    are then the singular values. An already orthogonal matrix converges
    without a single rotation.
    """
    a = as_matrix(a)
    u = a.copy() if a.shape[0] >= a.shape[1] else a.T.copy()
    n = u.shape[1]
    for _ in range(max_sweeps):
        g = u.T @ u
        d = np.sqrt(np.outer(np.diag(g), np.diag(g)))
        off = np.abs(g - np.diag(np.diag(g)))
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(d > 0, off / d, 0.0)
        if rel.max(initial=0.0) <= tol:
            break
        rotated = False
        for p, q in _jacobi_sweep_pairs(n):
            alpha = u[:, p] @ u[:, p]
            beta = u[:, q] @ u[:, q]
            gamma = u[:, p] @ u[:, q]
            if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                continue
            rotated = True
            with np.errstate(over="ignore"):
                zeta = (beta - alpha) / (2.0 * gamma)
            t = np.sign(zeta) / (abs(zeta) + np.hypot(zeta, 1.0)) if zeta != 0 else 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            up = u[:, p].copy()
            u[:, p] = c * up - s * u[:, q]
            u[:, q] = s * up + c * u[:, q]
        if not rotated:
            break
    return sorted(np.sqrt(np.sum(u * u, axis=0)).tolist(), reverse=True)


def power_iteration(matvec, rmatvec, n: int, iters: int = 1000, tol: float = 1e-12) -> float:
    """Largest singular value of a matrix-free operator.

    Iterates ``v <- A^T A v`` from the normalized all-ones vector. If that
    start is orthogonal to the dominant subspace (Rayleigh quotient stuck at
    zero) it restarts once from an index-weighted vector.
    """
    if iters < 1:
        raise LinalgError("iters must be >= 1")
    starts = [np.ones(n), np.arange(1, n + 1, dtype=np.float64)]
    sigma = 0.0
    for attempt, v in enumerate(starts):
        v = v / np.sqrt(v @ v)
        prev = None
        sigma = 0.0
        for _ in range(iters):
            w = rmatvec(matvec(v))
            rq = float(v @ w)
            sigma = np.sqrt(max(rq, 0.0))
            nw = np.sqrt(w @ w)
            if nw == 0.0:
                break
            v = w / nw
            if prev is not None and abs(sigma - prev) <= tol * max(sigma, 1e-300):
                break
            prev = sigma
        if sigma > 0.0 or attempt == len(starts) - 1:
            break
    return float(sigma)


def spectral_norm(a, iters: int = 1000, tol: float = 1e-12) -> float:
    """Largest singular value of ``a`` by power iteration on ``A^T A``."""
    a = as_matrix(a)
    return power_iteration(lambda v: a @ v, lambda w: a.T @ w, a.shape[1], iters, tol)


def det_bruteforce(a) -> float:
    """Determinant by cofactor expansion; an oracle for small matrices only."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if n == 1:
        return float(a[0, 0])
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(a, 0, axis=0), j, axis=1)
        total += (-1) ** j * a[0, j] * det_bruteforce(minor)
    return total
