"""Graph spectral transformation: from adjacency pairs to candidate updates.

The benign adjacency and the autoencoder's reconstruction each induce a
combinatorial Laplacian whose eigenvector matrix serves as a graph Fourier
basis.  Projecting the observed feature matrix onto the benign basis and
resynthesising on the reconstructed basis yields feature rows that keep the
benign spectral content but follow the learned correlation structure; one
row becomes the adversary's starting update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathcore import EigenPair, SeededRng, as_matrix, cosine, sym_eig

__all__ = [
    "SpectralBasis",
    "embed_full",
    "gft_basis",
    "initial_malicious",
    "laplacian",
    "reconstruct_features",
    "spectral_coeffs",
]


@dataclass(frozen=True)
class SpectralBasis:
    """Laplacian together with its eigenbasis (ascending eigenvalues)."""

    laplacian: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray


def laplacian(adjacency: np.ndarray) -> np.ndarray:
    """Combinatorial Laplacian L = diag(degree) - A for nonnegative A."""
    a = as_matrix(adjacency)
    n, m = a.shape
    if n != m:
        raise ValueError("adjacency must be square")
    scale = max(1.0, float(np.max(np.abs(a))) if n else 1.0)
    if n and float(np.max(np.abs(a - a.T))) > 1e-9 * scale:
        raise ValueError("adjacency must be symmetric")
    if n and float(a.min()) < -1e-9:
        raise ValueError("adjacency must be nonnegative (clamp before calling)")
    degrees = a.sum(axis=1)
    return np.diag(degrees) - a


def gft_basis(lap: np.ndarray) -> SpectralBasis:
    """Eigendecompose a Laplacian into the graph Fourier basis."""
    pair: EigenPair = sym_eig(lap)
    return SpectralBasis(as_matrix(lap), pair.eigenvectors, pair.eigenvalues)


def spectral_coeffs(features: np.ndarray, basis: SpectralBasis) -> np.ndarray:
    """Project features onto the basis: S = F B (Frobenius norm preserved)."""
    f = as_matrix(features)
    if f.shape[1] != basis.basis.shape[0]:
        raise ValueError("feature width does not match basis size")
    return f @ basis.basis


def reconstruct_features(coeffs: np.ndarray, basis_hat: SpectralBasis) -> np.ndarray:
    """Resynthesise features on another basis: F_hat = S B_hat^T."""
    s = as_matrix(coeffs)
    if s.shape[1] != basis_hat.basis.shape[0]:
        raise ValueError("coefficient width does not match basis size")
    return s @ basis_hat.basis.T


def initial_malicious(
    f_hat: np.ndarray,
    row_policy: str,
    rng: SeededRng,
    adversary_index: int = 0,
    reference: np.ndarray | None = None,
) -> np.ndarray:
    """Pick one reconstructed row as the starting malicious update.

    Policies: ``"random"`` draws a seeded uniform row, ``"cycle"`` takes
    row (adversary_index mod B), ``"nearest-global"`` takes the row with the
    highest cosine similarity to ``reference`` (the predicted global update
    restricted to the selected coordinates).
    """
    f_hat = as_matrix(f_hat)
    rows = f_hat.shape[0]
    if rows == 0:
        raise ValueError("empty reconstructed feature matrix")
    if row_policy == "random":
        pick = int(rng.generator.integers(rows))
    elif row_policy == "cycle":
        pick = adversary_index % rows
    elif row_policy == "nearest-global":
        if reference is None:
            raise ValueError("nearest-global policy needs a reference vector")
        sims = [cosine(f_hat[i], reference) for i in range(rows)]
        pick = int(np.argmax(sims))
    else:
        raise ValueError(f"unknown row policy {row_policy!r}")
    return f_hat[pick].copy()


def embed_full(
    selected_values: np.ndarray, selected_idx: np.ndarray, fill: np.ndarray
) -> np.ndarray:
    """Place selected-coordinate values into a full-length vector.

    Unselected coordinates take the values of ``fill`` (the benign
    coordinate-wise mean), so the untouched part of the update stays
    indistinguishable from honest traffic.
    """
    out = np.asarray(fill, dtype=np.float64).copy()
    out[np.asarray(selected_idx, dtype=np.int64)] = selected_values
    return out
