"""Dense linear algebra primitives: thin SVD, rank-k projection, null-space bases.

All functions are pure and operate on float64 numpy arrays. Matrices are
validated to be finite 2-d arrays at the boundary via :func:`as_matrix`.
"""

from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg

from .errors import ContractViolationError, NumericalError

ORTHONORMAL_TOL = 1e-8


def as_matrix(a, name="matrix"):
    """Validate and return ``a`` as a finite 2-d float64 array."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


class SvdTriple(NamedTuple):
    u: np.ndarray
    d: np.ndarray
    v: np.ndarray


def svd(a) -> SvdTriple:
    """Thin SVD ``a = u @ diag(d) @ v.T`` with r = min(m, n) columns.

    Columns carry a deterministic sign convention: the largest-magnitude
    entry of each left singular vector is made positive.
    """
    a = as_matrix(a)
    m, n = a.shape
    try:
        u, d, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails where the plain QR-iteration driver succeeds
        try:
            u, d, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd")
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError(f"SVD did not converge for {m}x{n} matrix") from exc
    v = vt.T.copy()
    u = u.copy()
    idx = np.argmax(np.abs(u), axis=0)
    flip = u[idx, np.arange(u.shape[1])] < 0
    u[:, flip] *= -1.0
    v[:, flip] *= -1.0
    return SvdTriple(u, d, v)


def rank_k_projection(y, k: int) -> np.ndarray:
    """Least-squares projection of ``y`` onto the set of rank-k matrices."""
    y = as_matrix(y)
    r = min(y.shape)
    if not 0 <= k <= r:
        raise ValueError(f"rank k={k} out of range [0, {r}]")
    if k == 0:
        return np.zeros_like(y)
    u, d, v = svd(y)
    return (u[:, :k] * d[:k]) @ v[:, :k].T


def null_basis(ua: Optional[np.ndarray], ambient: Optional[int] = None) -> np.ndarray:
    """Orthonormal basis for the null space of the columns of ``ua``.

    ``ua`` is an m x c matrix with orthonormal columns, 0 <= c < m; the
    empty case (c = 0, or ``ua`` None with ``ambient`` given) returns the
    identity. The result has m - c columns, each with its first
    non-negligible entry made positive so the basis is deterministic.
    """
    if ua is None:
        if ambient is None:
            raise ValueError("ambient dimension required when ua is None")
        ua = np.zeros((ambient, 0))
    ua = np.asarray(ua, dtype=float)
    if ua.ndim != 2:
        raise ValueError("ua must be 2-dimensional")
    m, c = ua.shape
    if ambient is not None and ambient != m:
        raise ValueError(f"ambient dimension {ambient} does not match ua rows {m}")
    if c >= m:
        raise ValueError(f"null space is empty for {m}x{c} input")
    if c == 0:
        return np.eye(m)
    gram = ua.T @ ua
    if np.max(np.abs(gram - np.eye(c))) > ORTHONORMAL_TOL:
        raise ContractViolationError("ua columns are not orthonormal")
    u_full = np.linalg.svd(ua, full_matrices=True)[0]
    basis = u_full[:, c:].copy()
    for col in range(basis.shape[1]):
        nz = np.flatnonzero(np.abs(basis[:, col]) > 1e-10)
        if nz.size and basis[nz[0], col] < 0:
            basis[:, col] *= -1.0
    return basis


def frobenius_sq(a) -> float:
    """Sum of squared entries of ``a``."""
    a = as_matrix(a)
    return float(np.sum(a * a))
