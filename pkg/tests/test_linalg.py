import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from entangled import linalg

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def square(max_n=6):
    return st.integers(1, max_n).flatmap(lambda n: arrays(np.float64, (n, n), elements=finite))


@settings(max_examples=60, deadline=None)
@given(square())
def test_qr_reconstructs_and_is_orthogonal(a):
    q, r = linalg.qr_decompose(a)
    n = a.shape[0]
    scale = max(1.0, np.abs(a).max())
    assert np.allclose(q @ r, a, atol=1e-12 * scale * n)
    assert np.allclose(q.T @ q, np.eye(n), atol=1e-12 * n)
    assert np.allclose(np.tril(r, -1), 0.0)
    assert np.all(np.diag(r) >= 0.0)


def test_qr_permutation_matrix():
    q, r = linalg.qr_decompose([[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(np.abs(q), [[0, 1], [1, 0]], atol=1e-15)
    assert np.allclose(r, np.eye(2), atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(square(7))
def test_eig_symmetric_matches_lapack(a):
    s = a + a.T
    got = linalg.eig_symmetric(s)
    want = np.sort(np.linalg.eigvalsh(s))[::-1]
    assert got == sorted(got, reverse=True)
    assert np.allclose(got, want, atol=1e-9 * max(1.0, np.abs(s).max()))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5).flatmap(lambda n: arrays(np.float64, (n, n), elements=st.floats(-3, 3))))
def test_eigen_product_is_determinant(a):
    s = a + a.T
    assert np.prod(linalg.eig_symmetric(s)) == pytest.approx(linalg.det_bruteforce(s), abs=1e-8)


def test_eig_symmetric_rejects_asymmetric():
    with pytest.raises(linalg.SymmetryError):
        linalg.eig_symmetric([[1.0, 2.0], [0.0, 1.0]])


@pytest.mark.parametrize("bad", [[[np.nan]], [[1.0, np.inf], [0.0, 1.0]], np.zeros((0, 0)), [1.0, 2.0]])
def test_as_matrix_rejects(bad):
    with pytest.raises(linalg.LinalgError):
        linalg.as_matrix(bad)


def test_as_matrix_is_read_only():
    m = linalg.as_matrix(np.eye(2))
    with pytest.raises(ValueError):
        m[0, 0] = 3.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_singular_values_match_lapack(m, n, seed):
    a = np.random.default_rng(seed).standard_normal((m, n))
    got = linalg.singular_values(a)
    want = np.linalg.svd(a, compute_uv=False)
    assert np.allclose(got[:len(want)], want, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_spectral_norm_matches_lapack(seed):
    a = np.random.default_rng(seed).standard_normal((12, 9))
    assert linalg.spectral_norm(a) == pytest.approx(np.linalg.norm(a, 2), rel=1e-6)


def test_power_iteration_restarts_when_start_is_orthogonal():
    # the all-ones start lies in the null space of this operator
    a = np.array([[1.0, -1.0], [0.0, 0.0]])
    assert linalg.spectral_norm(a) == pytest.approx(np.sqrt(2.0), rel=1e-12)


def test_power_iteration_zero_operator():
    assert linalg.spectral_norm(np.zeros((3, 3))) == 0.0


def test_det_bruteforce_small():
    assert linalg.det_bruteforce([[2.0, 1.0], [1.0, 3.0]]) == pytest.approx(5.0)
    assert linalg.det_bruteforce(np.eye(4)) == 1.0
