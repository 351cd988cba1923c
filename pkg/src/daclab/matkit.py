"""Dense linear-algebra kernel: SVD rank, pseudoinverse, projectors, PSD helpers.

Everything here works on plain ``numpy`` arrays. Singular-value cutoffs are
relative to the largest singular value (``tol * s_max``), with ``tol`` used as
an absolute floor when the matrix is zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TOL = 1e-9


class InvalidInputError(ValueError):
    """Raised for non-finite, mis-shaped or otherwise unusable inputs."""


class NotPSDError(InvalidInputError):
    pass


class NoFiniteScalarError(ValueError):
    """No finite c exists with a <= c * b (range of a escapes range of b)."""


def as_matrix(a, name="a") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return a


def _check_tol(tol):
    if not tol > 0:
        raise InvalidInputError(f"tol must be positive, got {tol}")


def _cutoff(s: np.ndarray, tol: float) -> float:
    smax = s[0] if s.size else 0.0
    return tol * smax if smax > 0 else tol


def _svd(a: np.ndarray, tol: float):
    u, s, vt = np.linalg.svd(a, full_matrices=True)
    r = int(np.count_nonzero(s > _cutoff(s, tol)))
    return u, s, vt, r


def rank_tol(a, tol: float = DEFAULT_TOL) -> int:
    """Numerical rank: number of singular values above ``tol * s_max``."""
    _check_tol(tol)
    a = as_matrix(a)
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    return int(np.count_nonzero(s > _cutoff(s, tol)))


def pinv(a, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse with a relative singular-value cutoff."""
    _check_tol(tol)
    a = as_matrix(a)
    m, n = a.shape
    if a.size == 0:
        return np.zeros((n, m))
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    keep = s > _cutoff(s, tol)
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def null_basis(a, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal basis (columns) of Null(a); shape ``(n, n - rank)``."""
    _check_tol(tol)
    a = as_matrix(a)
    n = a.shape[1]
    if a.shape[0] == 0:
        return np.eye(n)
    _, _, vt, r = _svd(a, tol)
    return vt[r:].T.copy()


def row_basis(a, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal basis (columns) of Row(a) = Range(a^T)."""
    _check_tol(tol)
    a = as_matrix(a)
    if a.shape[0] == 0:
        return np.zeros((a.shape[1], 0))
    _, _, vt, r = _svd(a, tol)
    return vt[:r].T.copy()


def col_basis(a, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal basis (columns) of Range(a)."""
    _check_tol(tol)
    a = as_matrix(a)
    if a.shape[1] == 0:
        return np.zeros((a.shape[0], 0))
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    r = int(np.count_nonzero(s > _cutoff(s, tol)))
    return u[:, :r].copy()


@dataclass(frozen=True)
class Projector:
    """Orthogonal projector stored as an explicit square matrix."""

    p: np.ndarray
    rank: int
    tol: float = DEFAULT_TOL

    @property
    def dim(self) -> int:
        return self.p.shape[0]

    def __matmul__(self, other):
        return self.p @ np.asarray(other)

    def __rmatmul__(self, other):
        return np.asarray(other) @ self.p

    def complement(self) -> "Projector":
        return Projector(np.eye(self.dim) - self.p, self.dim - self.rank, self.tol)

    def check(self, sym_tol=1e-10, idem_tol=1e-8, trace_tol=1e-6):
        """Assert symmetry, idempotence and trace == rank."""
        p = self.p
        if np.max(np.abs(p - p.T), initial=0.0) > sym_tol:
            raise AssertionError("projector is not symmetric")
        if np.max(np.abs(p @ p - p), initial=0.0) > idem_tol:
            raise AssertionError("projector is not idempotent")
        if abs(np.trace(p) - self.rank) > trace_tol:
            raise AssertionError(f"trace {np.trace(p)} != rank {self.rank}")
        return self


def _outer(basis: np.ndarray) -> np.ndarray:
    p = basis @ basis.T
    return 0.5 * (p + p.T)


def proj(a, which: str = "row_space", tol: float = DEFAULT_TOL) -> Projector:
    """Orthogonal projector onto the row space, null space or column space of ``a``.

    Mathematically ``row_space`` is ``pinv(a) @ a``, ``null_space`` is
    ``I - pinv(a) @ a`` and ``column_space`` is ``a @ pinv(a)``. They are
    assembled from SVD bases so the result is symmetric to round-off.
    """
    a = as_matrix(a)
    if which == "row_space":
        q = row_basis(a, tol)
    elif which == "null_space":
        q = null_basis(a, tol)
    elif which == "column_space":
        q = col_basis(a, tol)
    else:
        raise InvalidInputError(f"unknown subspace {which!r}")
    return Projector(_outer(q), q.shape[1], tol)


def is_symmetric(a: np.ndarray, atol: float = 1e-8) -> bool:
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
    return bool(np.max(np.abs(a - a.T), initial=0.0) <= atol * scale)


def check_psd(sigma, name="sigma", rel_tol: float = 1e-8) -> np.ndarray:
    """Validate a symmetric PSD matrix; returns it as a float array."""
    sigma = as_matrix(sigma, name)
    if sigma.shape[0] != sigma.shape[1]:
        raise InvalidInputError(f"{name} must be square, got {sigma.shape}")
    if not is_symmetric(sigma):
        raise NotPSDError(f"{name} is not symmetric")
    w = np.linalg.eigvalsh(0.5 * (sigma + sigma.T))
    norm = float(np.max(np.abs(w), initial=0.0))
    if w.size and w[0] < -rel_tol * max(norm, 1.0):
        raise NotPSDError(f"{name} has a negative eigenvalue {w[0]:.3e}")
    return sigma


def seminorm_sq(u, sigma, check: bool = True) -> float:
    """Squared (semi)norm u^T sigma u for a PSD ``sigma``; clamped at zero."""
    u = np.asarray(u, dtype=float).reshape(-1)
    sigma = check_psd(sigma) if check else np.asarray(sigma, dtype=float)
    if sigma.shape != (u.size, u.size):
        raise InvalidInputError(
            f"dimension mismatch: u has {u.size} entries, sigma is {sigma.shape}"
        )
    val = float(u @ sigma @ u)
    return max(val, 0.0)


def psd_sqrt_pinv(b: np.ndarray, tol: float = DEFAULT_TOL):
    """Return (B^{+1/2}, orthonormal basis of Range(b)) for a PSD matrix."""
    w, v = np.linalg.eigh(0.5 * (b + b.T))
    wmax = float(np.max(np.abs(w), initial=0.0))
    keep = w > (tol * wmax if wmax > 0 else tol)
    vr = v[:, keep]
    return (vr / np.sqrt(w[keep])) @ vr.T, vr


def min_dominating_scalar(a, b, tol: float = DEFAULT_TOL, range_tol: float = 1e-8) -> float:
    """Smallest c with ``a <= c * b`` in the Loewner order.

    Both matrices must be symmetric PSD and Range(a) must lie inside Range(b);
    c is the top eigenvalue of B^{+1/2} A B^{+1/2}.
    """
    _check_tol(tol)
    a = check_psd(a, "a")
    b = check_psd(b, "b")
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {a.shape} vs {b.shape}")
    b_half, vr = psd_sqrt_pinv(b, tol)
    a_norm = float(np.linalg.norm(a, 2)) if a.size else 0.0
    if a_norm == 0.0:
        return 0.0
    outside = a - vr @ (vr.T @ a @ vr) @ vr.T
    if np.linalg.norm(outside, 2) > range_tol * a_norm:
        raise NoFiniteScalarError("Range(a) is not contained in Range(b)")
    m = b_half @ a @ b_half
    return float(np.linalg.eigvalsh(0.5 * (m + m.T))[-1])


def lstsq_min_norm(a, b) -> np.ndarray:
    """Minimum-norm least-squares solve with LAPACK's default (eps-level) cutoff.

    Used where the relative cutoff of :func:`pinv` would discard legitimately
    small singular values (e.g. heavily penalised stacked systems).
    """
    sol, *_ = np.linalg.lstsq(np.asarray(a, float), np.asarray(b, float), rcond=None)
    return sol
