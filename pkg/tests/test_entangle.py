import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entangled import entangle, linalg
from entangled.entangle import EntanglementSpec, SpecError

gammas = st.floats(0.0, 1.0, allow_nan=False)


def reference_spatial(k, c, gamma):
    out = np.zeros((k, k, c, c))
    for i in range(c):
        out[:, :, i, i] += gamma / k**2
        out[k // 2, k // 2, i, i] += 1.0 - gamma
    return out


def reference_channel(k, c, gamma):
    out = np.full((k, k, c, c), gamma / (k**2 * c))
    for i in range(c):
        out[k // 2, k // 2, i, i] += 1.0 - gamma
    return out


def test_dense_small_case():
    g = entangle.make_dense_gamma(3, 0.4)
    assert np.allclose(g, 0.4 / 3 + 0.6 * np.eye(3), atol=0)
    assert linalg.eig_symmetric(g) == pytest.approx([1.0, 0.6, 0.6], abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), gammas)
def test_dense_spectrum_and_rows(n, gamma):
    g = entangle.make_dense_gamma(n, gamma)
    assert np.allclose(g, g.T, atol=0)
    assert np.allclose(g.sum(axis=1), 1.0, atol=1e-12)
    want = sorted([1.0] + [1.0 - gamma] * (n - 1), reverse=True)
    assert np.allclose(linalg.eig_symmetric(g), want, atol=1e-10)
    # the largest singular value is exactly 1, not below it
    assert linalg.spectral_norm(g) == pytest.approx(1.0, abs=1e-10)


def test_dense_endpoints():
    assert np.array_equal(entangle.make_dense_gamma(4, 0.0), np.eye(4))
    assert np.allclose(entangle.make_dense_gamma(4, 1.0), np.full((4, 4), 0.25))


@pytest.mark.parametrize("bad", [-0.1, 1.5, float("nan")])
def test_gamma_out_of_range(bad):
    with pytest.raises(SpecError):
        entangle.make_dense_gamma(3, bad)
    with pytest.raises(SpecError):
        EntanglementSpec("dense", bad)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**64 - 1))
def test_orthogonal_gamma(n, seed):
    q = entangle.make_orthogonal_gamma(n, seed)
    assert np.allclose(q.T @ q, np.eye(n), atol=1e-12)
    assert np.array_equal(q, entangle.make_orthogonal_gamma(n, seed))


def test_orthogonal_seeds_differ():
    assert not np.allclose(entangle.make_orthogonal_gamma(5, 1), entangle.make_orthogonal_gamma(5, 2))


def test_standard_normal_moments():
    z = entangle.standard_normal(7, 200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01
    assert np.array_equal(z[:10], entangle.standard_normal(7, 10))


@pytest.mark.parametrize("k", [1, 3, 5])
@pytest.mark.parametrize("c", [1, 4])
@pytest.mark.parametrize("gamma", [0.0, 0.25, 1.0])
def test_kernels_match_reference(k, c, gamma):
    assert np.allclose(entangle.make_spatial_kernel(k, c, gamma).data, reference_spatial(k, c, gamma),
                       atol=1e-15)
    assert np.allclose(entangle.make_channel_kernel(k, c, gamma).data, reference_channel(k, c, gamma),
                       atol=1e-15)


def test_orthogonal_channel_kernel():
    kern = entangle.make_orthogonal_channel_kernel(6, seed=3)
    assert kern.shape == (1, 1, 6, 6)
    m = kern.channel_matrix()
    assert np.allclose(m.T @ m, np.eye(6), atol=1e-12)


def test_kernel_validation():
    with pytest.raises(SpecError):
        entangle.make_spatial_kernel(2, 3, 0.1)
    with pytest.raises(SpecError):
        entangle.ConvKernel(np.zeros((3, 3, 2, 3)))
    with pytest.raises(SpecError):
        entangle.ConvKernel(np.zeros((3, 5, 2, 2)))


def test_kernel_is_read_only():
    kern = entangle.make_spatial_kernel(3, 2, 0.5)
    with pytest.raises(ValueError):
        kern.data[0, 0, 0, 0] = 1.0


def test_spec_defaults_and_text_roundtrip():
    assert EntanglementSpec("channel", 0.3).k == 1
    assert EntanglementSpec("channel_spatial", 0.3).k == 3
    assert EntanglementSpec("spatial", 0.3).k == 3
    spec = EntanglementSpec("spatial", 0.25, kernel_size=5, channels=4, seed=9)
    assert EntanglementSpec.from_text(spec.to_text()) == spec
    with pytest.raises(SpecError):
        EntanglementSpec("bogus")
    with pytest.raises(SpecError):
        EntanglementSpec.from_text("gamma=0.1")


def test_seq_kernel_is_normalised_by_length():
    spec = EntanglementSpec("spatial", 0.6, kernel_size=3, channels=2)
    kern = entangle.make_seq_kernel(spec).data
    assert kern.shape == (3, 2, 2)
    assert np.allclose(kern.sum(axis=(0, 1)), 1.0)
    assert kern[0, 0, 0] == pytest.approx(0.2)


def test_spectrum_report_dense_and_spatial():
    rep = entangle.spectrum_report(EntanglementSpec("dense", 0.4, dim=3))
    assert rep["eigenvalues"] == pytest.approx([1.0, 0.6, 0.6])
    assert rep["spectral_norm"] == pytest.approx(1.0)
    assert not rep["is_orthogonal"]
    rep = entangle.spectrum_report(EntanglementSpec("orthogonal", dim=8, seed=1))
    assert rep["is_orthogonal"] and rep["eigenvalues"] is None
    rep = entangle.spectrum_report(EntanglementSpec("spatial", 0.9, kernel_size=3, channels=2))
    assert rep["tap_l1"] == pytest.approx(1.0)
