"""Shared numerical kernel: metrics, symmetric eigensolver, seeded randomness.

Everything downstream (the federated loop, the correlation graph, the
spectral transform, the defenses) goes through the handful of primitives in
this module, so they are written for determinism first: the eigensolver is a
plain cyclic Jacobi iteration with a fixed rotation order and an explicit
eigenvector gauge, and random streams are derived from a root seed by
hashing labels rather than by sharing mutable generator state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConvergenceError",
    "EigenPair",
    "SeededRng",
    "as_matrix",
    "as_vector",
    "cosine",
    "euclid",
    "rng_split",
    "sym_eig",
]

#: Maximum cyclic sweeps before the Jacobi iteration is declared stuck.
JACOBI_MAX_SWEEPS = 100
#: Off-diagonal Frobenius norm target, relative to the input norm.
JACOBI_TOL = 1e-12


class ConvergenceError(RuntimeError):
    """Raised when an iterative routine exceeds its iteration cap."""


def as_vector(x) -> np.ndarray:
    """Coerce to a finite 1-D float64 array, rejecting NaN/Inf."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    return v


def as_matrix(x) -> np.ndarray:
    """Coerce to a finite 2-D float64 array, rejecting NaN/Inf."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def cosine(u, v, zero_policy: str = "zero") -> float:
    """Cosine similarity u.v / (|u||v|).

    Args:
        u, v: equal-length vectors with at least one entry.
        zero_policy: what to do when either vector has zero norm.
            ``"zero"`` (default) defines the similarity as 0.0, which is the
            right call for early-round adapter deltas that are all zeros;
            ``"error"`` raises instead.
    """
    u = as_vector(u)
    v = as_vector(v)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape[0]} vs {v.shape[0]}")
    if u.shape[0] == 0:
        raise ValueError("cosine of empty vectors")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        if zero_policy == "zero":
            return 0.0
        raise ValueError("zero-norm vector in cosine similarity")
    return float(np.dot(u, v) / (nu * nv))


def euclid(u, v) -> float:
    """Euclidean distance |u - v|_2."""
    u = as_vector(u)
    v = as_vector(v)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape[0]} vs {v.shape[0]}")
    return float(np.linalg.norm(u - v))


@dataclass(frozen=True)
class EigenPair:
    """Eigendecomposition S = B diag(values) B^T of a symmetric matrix.

    ``eigenvalues`` are sorted ascending; column j of ``eigenvectors`` is the
    unit eigenvector for ``eigenvalues[j]``.  The gauge is fixed: in every
    eigenvector the entry of largest magnitude is nonnegative (first such
    entry on ties), and within a cluster of numerically equal eigenvalues
    the columns are ordered by their first differing entry.  This makes the
    decomposition a deterministic function of its input, which is what the
    spectral round-trip downstream relies on; for repeated eigenvalues it is
    a gauge-fixing convention, not a claim of uniqueness.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _fix_gauge(values: np.ndarray, vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply the sign convention and the degenerate-cluster ordering."""
    n = values.shape[0]
    vectors = vectors.copy()
    for j in range(n):
        col = vectors[:, j]
        k = int(np.argmax(np.abs(col)))  # argmax takes the lowest index on ties
        if col[k] < 0.0:
            vectors[:, j] = -col
    # Order columns inside clusters of equal eigenvalues by lexicographic
    # comparison of the (sign-fixed) entries.
    cluster_tol = 1e-10 * max(1.0, float(np.max(np.abs(values))) if n else 1.0)
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and values[stop] - values[stop - 1] <= cluster_tol:
            stop += 1
        if stop - start > 1:
            order = sorted(range(start, stop), key=lambda j: tuple(vectors[:, j]))
            values[start:stop] = values[order]
            vectors[:, start:stop] = vectors[:, order]
        start = stop
    return values, vectors


def sym_eig(s, max_sweeps: int = JACOBI_MAX_SWEEPS, tol: float = JACOBI_TOL) -> EigenPair:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    The iteration visits the strict upper triangle row by row and annihilates
    each off-diagonal element with a two-sided Givens rotation, accumulating
    the rotations into the eigenvector matrix.  One sweep is one full pass;
    convergence is declared when the off-diagonal Frobenius norm falls below
    ``tol`` times the input norm.  Slow, simple, and bit-deterministic, which
    is all that is needed at the matrix sizes this simulator works with.

    Args:
        s: square symmetric matrix (asymmetry beyond 1e-9 relative rejected).
        max_sweeps: sweep cap; exceeding it raises :class:`ConvergenceError`.
        tol: relative off-diagonal tolerance.

    Returns:
        :class:`EigenPair` with ascending eigenvalues and gauge-fixed
        orthonormal eigenvectors.
    """
    s = as_matrix(s)
    n, m = s.shape
    if n != m:
        raise ValueError(f"matrix is not square: {s.shape}")
    scale = max(1.0, float(np.max(np.abs(s))) if n else 1.0)
    if n and float(np.max(np.abs(s - s.T))) > 1e-9 * scale:
        raise ValueError("matrix is not symmetric within 1e-9 relative tolerance")
    if n == 0:
        return EigenPair(np.zeros(0), np.zeros((0, 0)))

    a = 0.5 * (s + s.T)
    v = np.eye(n)
    norm = float(np.linalg.norm(a))
    if norm == 0.0:
        return EigenPair(np.zeros(n), np.eye(n))
    threshold = tol * norm
    # Elements this small cannot push the off-norm above the threshold even
    # if every one of them is left untouched.
    skip = threshold / (n * n)

    def off_norm(mat: np.ndarray) -> float:
        return float(np.linalg.norm(mat - np.diag(np.diag(mat))))

    off = off_norm(a)
    sweeps = 0
    while off > threshold:
        if sweeps >= max_sweeps:
            raise ConvergenceError(
                f"Jacobi iteration did not converge in {max_sweeps} sweeps "
                f"(off-diagonal norm {off:.3e}, target {threshold:.3e})"
            )
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                sign = 1.0 if tau >= 0.0 else -1.0
                t = sign / (abs(tau) + np.hypot(1.0, tau))
                c = 1.0 / np.hypot(1.0, t)
                sn = t * c
                # Two-sided rotation on rows/columns p and q.
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - sn * col_q
                a[:, q] = sn * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - sn * row_q
                a[q, :] = sn * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = c * vec_p - sn * vec_q
                v[:, q] = sn * vec_p + c * vec_q
        sweeps += 1
        off = off_norm(a)

    values = np.diag(a).copy()
    order = np.argsort(values, kind="stable")
    values = values[order]
    vectors = v[:, order]
    values, vectors = _fix_gauge(values, vectors)
    return EigenPair(values, vectors)


@dataclass(frozen=True)
class SeededRng:
    """Splittable deterministic random stream.

    A stream is identified by a root seed plus a path of split labels; the
    underlying generator state is derived by hashing that identity, so child
    streams are independent of sibling order and of how much the parent has
    been consumed.  Split with distinct labels for distinct purposes, e.g.
    ``rng.split("agent-3").split("round-17")``.
    """

    seed: int
    path: tuple[str, ...] = ()
    _generator: list = field(default_factory=list, repr=False, compare=False)

    def split(self, label: str) -> "SeededRng":
        return SeededRng(self.seed, self.path + (str(label),))

    @property
    def generator(self) -> np.random.Generator:
        """The numpy generator for this stream (created once, then reused)."""
        if not self._generator:
            digest = hashlib.sha256(
                ("%d/" % self.seed + "/".join(self.path)).encode("utf-8")
            ).digest()
            entropy = int.from_bytes(digest[:16], "big")
            self._generator.append(np.random.Generator(np.random.PCG64(entropy)))
        return self._generator[0]


def rng_split(rng: SeededRng, label: str) -> SeededRng:
    """Derive the child stream of ``rng`` for ``label``."""
    return rng.split(label)
