from __future__ import annotations

import numpy as np
import pytest

from fedmanip import gst
from fedmanip.mathcore import SeededRng, cosine


def _random_graph(n, seed, low=0.0):
    gen = SeededRng(seed).split("g").generator
    raw = gen.uniform(low, 1.0, size=(n, n))
    upper = np.triu(raw, 1)
    return upper + upper.T


# -- laplacian ---------------------------------------------------------------

def test_laplacian_path_graph():
    lap = gst.laplacian(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.array_equal(lap, [[1.0, -1.0], [-1.0, 1.0]])


def test_laplacian_empty_graph():
    assert np.array_equal(gst.laplacian(np.zeros((3, 3))), np.zeros((3, 3)))


def test_laplacian_row_sums_zero():
    adj = _random_graph(7, 1)
    lap = gst.laplacian(adj)
    assert np.max(np.abs(lap @ np.ones(7))) <= 1e-12


def test_laplacian_rejects_asymmetric_and_negative():
    with pytest.raises(ValueError):
        gst.laplacian(np.array([[0.0, 1.0], [0.5, 0.0]]))
    with pytest.raises(ValueError):
        gst.laplacian(np.array([[0.0, -0.5], [-0.5, 0.0]]))


# -- gft_basis ----------------------------------------------------------------

def test_gft_basis_path_spectrum():
    basis = gst.gft_basis(gst.laplacian(np.array([[0.0, 1.0], [1.0, 0.0]])))
    assert basis.eigenvalues == pytest.approx([0.0, 2.0], abs=1e-12)


def test_gft_basis_complete_graph_spectrum():
    k3 = np.ones((3, 3)) - np.eye(3)
    basis = gst.gft_basis(gst.laplacian(k3))
    assert basis.eigenvalues == pytest.approx([0.0, 3.0, 3.0], abs=1e-9)


def test_gft_basis_reconstruction_oracle():
    lap = gst.laplacian(_random_graph(8, 2))
    basis = gst.gft_basis(lap)
    recon = basis.basis @ np.diag(basis.eigenvalues) @ basis.basis.T
    assert np.linalg.norm(recon - lap) <= 1e-8 * max(1.0, np.linalg.norm(lap))
    assert np.max(np.abs(basis.basis.T @ basis.basis - np.eye(8))) <= 1e-10
    assert basis.eigenvalues.min() >= -1e-9


# -- spectral_coeffs / reconstruct_features --------------------------------------

def test_coeffs_identity_basis():
    n = 5
    basis = gst.SpectralBasis(np.zeros((n, n)), np.eye(n), np.zeros(n))
    feats = SeededRng(3).split("f").generator.standard_normal((3, n))
    assert np.array_equal(gst.spectral_coeffs(feats, basis), feats)
    assert np.array_equal(gst.reconstruct_features(feats, basis), feats)


def test_coeffs_zero_row_stays_zero():
    basis = gst.gft_basis(gst.laplacian(_random_graph(4, 4)))
    feats = np.vstack([np.zeros(4), np.ones(4)])
    coeffs = gst.spectral_coeffs(feats, basis)
    assert np.array_equal(coeffs[0], np.zeros(4))


def test_coeffs_norm_preserved():
    basis = gst.gft_basis(gst.laplacian(_random_graph(6, 5)))
    feats = SeededRng(6).split("f").generator.standard_normal((4, 6))
    coeffs = gst.spectral_coeffs(feats, basis)
    assert np.linalg.norm(coeffs) == pytest.approx(np.linalg.norm(feats), abs=1e-9)


def test_roundtrip_same_basis_is_identity():
    adj = _random_graph(9, 7)
    basis = gst.gft_basis(gst.laplacian(adj))
    feats = SeededRng(8).split("f").generator.standard_normal((5, 9))
    back = gst.reconstruct_features(gst.spectral_coeffs(feats, basis), basis)
    assert np.linalg.norm(back - feats) <= 1e-10


def test_reconstruction_error_monotone_in_perturbation():
    # Perturbation-sweep oracle: reconstructing on the basis of increasingly
    # perturbed adjacencies moves the features increasingly far.
    adj = _random_graph(7, 9)
    basis = gst.gft_basis(gst.laplacian(adj))
    feats = SeededRng(10).split("f").generator.standard_normal((4, 7))
    coeffs = gst.spectral_coeffs(feats, basis)
    bump = _random_graph(7, 11)
    errors = []
    for scale in (1e-6, 1e-3, 0.5):
        perturbed = np.clip(adj + scale * bump, 0.0, None)
        basis_hat = gst.gft_basis(gst.laplacian(perturbed))
        back = gst.reconstruct_features(coeffs, basis_hat)
        errors.append(float(np.linalg.norm(back - feats)))
    assert errors[0] < errors[1] < errors[2]
    assert errors[0] <= 1e-4


# -- initial_malicious -------------------------------------------------------------

def test_initial_malicious_cycle_policy():
    f_hat = np.arange(12, dtype=float).reshape(3, 4)
    row = gst.initial_malicious(f_hat, "cycle", SeededRng(0), adversary_index=0)
    assert np.array_equal(row, f_hat[0])
    row = gst.initial_malicious(f_hat, "cycle", SeededRng(0), adversary_index=4)
    assert np.array_equal(row, f_hat[1])


def test_initial_malicious_random_reproducible():
    f_hat = SeededRng(12).split("f").generator.standard_normal((5, 6))
    a = gst.initial_malicious(f_hat, "random", SeededRng(13).split("r"))
    b = gst.initial_malicious(f_hat, "random", SeededRng(13).split("r"))
    assert np.array_equal(a, b)


def test_initial_malicious_nearest_global_matches_row_scan():
    f_hat = SeededRng(14).split("f").generator.standard_normal((6, 5))
    reference = SeededRng(15).split("r").generator.standard_normal(5)
    row = gst.initial_malicious(f_hat, "nearest-global", SeededRng(0), reference=reference)
    sims = [cosine(f_hat[i], reference) for i in range(6)]
    assert np.array_equal(row, f_hat[int(np.argmax(sims))])


def test_initial_malicious_bad_policy():
    with pytest.raises(ValueError):
        gst.initial_malicious(np.ones((2, 2)), "bogus", SeededRng(0))


# -- embed_full ----------------------------------------------------------------------

def test_embed_full_mixes_selected_and_fill():
    fill = np.zeros(6)
    out = gst.embed_full(np.array([5.0, 7.0]), np.array([1, 4]), fill)
    assert np.array_equal(out, [0.0, 5.0, 0.0, 0.0, 7.0, 0.0])
    assert np.array_equal(fill, np.zeros(6))  # input untouched
