"""3x3 tensor algebra: deviators, unimodular parts, SPD roots, matrix exponentials.

All tensors are plain numpy arrays of shape (3, 3); several routines also accept
batches of shape (..., 3, 3).  Symmetric tensors are kept exactly symmetric by
construction: every routine that returns a mathematically symmetric result
passes it through :func:`sym` so that ``A[i, j] == A[j, i]`` holds bitwise.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DomainError",
    "I3",
    "sym",
    "dev",
    "tr",
    "det",
    "inv",
    "unimodular",
    "frob_norm",
    "sqrt_spd",
    "inv_sqrt_spd",
    "eigh_spd",
    "is_spd",
    "principal_sqrt_of_spd_product",
    "matrix_exp",
]

# Scale-invariant positivity test: smallest eigenvalue must exceed this
# fraction of the largest one.
SPD_RTOL = 1.0e-12

I3 = np.eye(3)


class DomainError(ValueError):
    """Input violates a mathematical precondition (non-SPD, det <= 0, ...)."""


def sym(A: np.ndarray) -> np.ndarray:
    """Exactly symmetric part 0.5*(A + A^T)."""
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def tr(A: np.ndarray) -> float | np.ndarray:
    return np.einsum("...ii", A)


def det(A: np.ndarray) -> float | np.ndarray:
    return np.linalg.det(A)


def inv(A: np.ndarray) -> np.ndarray:
    return np.linalg.inv(A)


def dev(A: np.ndarray) -> np.ndarray:
    """Deviatoric part A - (tr A / 3) * 1."""
    t = np.einsum("...ii", A) / 3.0
    out = A.copy()
    idx = np.arange(3)
    out[..., idx, idx] -= t[..., None] if np.ndim(t) else t
    return out


def unimodular(A: np.ndarray) -> np.ndarray:
    """Unit-determinant part (det A)^(-1/3) * A.  Requires det A > 0."""
    d = np.linalg.det(A)
    if d.ndim == 0:
        d = float(d)
        if d <= 0.0:
            raise DomainError("unimodular part requires det A > 0")
        return A * d ** (-1.0 / 3.0)
    if np.any(d <= 0.0):
        raise DomainError("unimodular part requires det A > 0")
    return A * (d ** (-1.0 / 3.0))[..., None, None]


def frob_norm(A: np.ndarray) -> float:
    """Frobenius norm sqrt(tr(A^T A)); equals sqrt(tr(A^2)) for symmetric A."""
    return float(np.sqrt(np.sum(A * A)))


def eigh_spd(A: np.ndarray, what: str = "tensor") -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric tensor, verified SPD.

    Returns ascending eigenvalues ``w`` and orthonormal columns ``Q``.  Raises
    :class:`DomainError` unless ``w[0] > SPD_RTOL * w[-1] > 0``.
    """
    w, Q = np.linalg.eigh(sym(A))
    if not (w[-1] > 0.0 and w[0] > SPD_RTOL * w[-1]):
        raise DomainError(f"{what} is not symmetric positive definite "
                          f"(eigenvalues {w})")
    return w, Q


def is_spd(A: np.ndarray) -> bool:
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-9 * max(1.0, abs(A).max())):
        return False
    w = np.linalg.eigvalsh(sym(A))
    return bool(w[-1] > 0.0 and w[0] > SPD_RTOL * w[-1])


def sqrt_spd(A: np.ndarray) -> np.ndarray:
    """Unique SPD square root of an SPD tensor."""
    w, Q = eigh_spd(A)
    return sym((Q * np.sqrt(w)) @ Q.T)


def inv_sqrt_spd(A: np.ndarray) -> np.ndarray:
    """Inverse SPD square root A^(-1/2)."""
    w, Q = eigh_spd(A)
    return sym((Q / np.sqrt(w)) @ Q.T)


def principal_sqrt_of_spd_product(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Principal square root of P^(-1) Q for SPD P and Q.

    The product P^(-1) Q is similar to the SPD tensor P^(-1/2) Q P^(-1/2), so
    the root is computed through that similarity; all eigenvalues of the
    result are real and positive by construction.
    """
    wp, Qp = eigh_spd(P, "P")
    sq = np.sqrt(wp)
    P_half = sym((Qp * sq) @ Qp.T)
    P_inv_half = sym((Qp / sq) @ Qp.T)
    M = sym(P_inv_half @ Q @ P_inv_half)
    S = sqrt_spd(M)
    return P_inv_half @ S @ P_half


def _exp_series(B: np.ndarray) -> np.ndarray:
    """Truncated exponential series for a (batch of) small-norm matrix."""
    term = np.broadcast_to(I3, B.shape).copy()
    out = term.copy()
    for k in range(1, 40):
        term = term @ B / k
        out = out + term
        if np.max(np.abs(term)) <= 1e-16 * max(np.max(np.abs(out)), 1.0):
            break
    return out


def matrix_exp(A: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a truncated series.

    Accepts (3, 3) or batched (..., 3, 3) input; relative truncation error of
    the series is below 1e-13.
    """
    A = np.asarray(A, dtype=float)
    norm = np.max(np.sqrt(np.sum(A * A, axis=(-2, -1)))) if A.size else 0.0
    s = 0
    if norm > 0.5:
        s = int(np.ceil(np.log2(norm / 0.5)))
    E = _exp_series(A / (2.0 ** s))
    for _ in range(s):
        E = E @ E
    return E
