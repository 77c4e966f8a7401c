"""Dense matrix functions used across the package.

``expm`` is a scaling-and-squaring Padé implementation (Higham 2005): the
Padé degree is picked from {3, 5, 7, 9, 13} by the 1-norm of the input and
degree 13 with scaling is used beyond that.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.linalg

# Padé numerator coefficients b_0..b_m.
_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}

# Largest 1-norm for which the degree-m approximant is accurate to unit roundoff.
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}


def _pade_uv(A: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    b = _PADE[m]
    ident = np.eye(A.shape[0])
    A2 = A @ A
    if m < 13:
        powers = [ident, A2]
        for _ in range(2, m // 2 + 1):
            powers.append(powers[-1] @ A2)
        odd = sum(b[2 * k + 1] * powers[k] for k in range(m // 2 + 1))
        even = sum(b[2 * k] * powers[k] for k in range(m // 2 + 1))
        return A @ odd, even
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    return U, V


def expm(A: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a Padé approximant."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if A.shape[0] == 0:
        return A.copy()
    norm1 = np.linalg.norm(A, 1)
    s = 0
    for m in (3, 5, 7, 9):
        if norm1 <= _THETA[m]:
            break
    else:
        m = 13
        if norm1 > _THETA[13]:
            s = max(0, math.ceil(math.log2(norm1 / _THETA[13])))
            A = A / 2.0**s
    U, V = _pade_uv(A, m)
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def logm_real(A: np.ndarray, *, tol: float = 1e-6) -> np.ndarray:
    """Principal real logarithm of a real matrix.

    Raises ``ValueError`` when an eigenvalue lies on the closed negative real
    axis (within ``tol``), where the principal branch is undefined or not real.
    """
    A = np.asarray(A, dtype=np.float64)
    eig = np.linalg.eigvals(A)
    bad = (np.abs(eig.imag) <= tol * max(1.0, np.max(np.abs(eig)))) & (eig.real <= tol)
    if np.any(bad):
        worst = eig[bad][np.argmin(np.abs(eig[bad] + 1.0))]
        raise ValueError(
            f"no real principal logarithm: eigenvalue {worst:.6g} on the negative real axis")
    L = scipy.linalg.logm(A)
    if np.iscomplexobj(L):
        if np.max(np.abs(L.imag)) > 1e-8 * max(1.0, np.max(np.abs(L.real))):
            raise ValueError("matrix logarithm is not real")
        L = L.real
    return np.asarray(L, dtype=np.float64)


def polar_orthogonal(M: np.ndarray) -> np.ndarray:
    """Nearest orthogonal matrix to ``M`` in Frobenius norm (``U @ Vt`` of its SVD)."""
    U, _, Vt = np.linalg.svd(M)
    return U @ Vt


def block_diag(blocks) -> np.ndarray:
    blocks = [np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in blocks]
    if not blocks:
        return np.zeros((0, 0))
    return scipy.linalg.block_diag(*blocks)
