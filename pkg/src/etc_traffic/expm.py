"""Matrix exponential by scaling and squaring with a degree-13 Pade approximant,
vectorised over a batch of matrices (Higham, SIAM J. Matrix Anal. Appl. 2005)."""

from __future__ import annotations

import numpy as np

_B13 = np.array([
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
])
_THETA13 = 5.371920351148152


def expm_batch(mats: np.ndarray) -> np.ndarray:
    """``exp`` of every matrix in a ``(..., k, k)`` stack."""
    mats = np.asarray(mats, dtype=float)
    shape = mats.shape
    if mats.ndim < 2 or shape[-1] != shape[-2]:
        raise ValueError("expected a stack of square matrices")
    A = mats.reshape((-1,) + shape[-2:])
    k = shape[-1]
    norms = np.abs(A).sum(axis=1).max(axis=1)
    with np.errstate(divide="ignore"):
        s = np.where(norms > _THETA13, np.ceil(np.log2(norms / _THETA13)), 0).astype(int)
    A = A / (2.0 ** s)[:, None, None]
    eye = np.broadcast_to(np.eye(k), A.shape)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    b = _B13
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * eye)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * eye)
    R = np.linalg.solve(V - U, V + U)
    for step in range(int(s.max(initial=0))):
        mask = s > step
        R[mask] = R[mask] @ R[mask]
    return R.reshape(shape)


def expm(A: np.ndarray) -> np.ndarray:
    return expm_batch(np.asarray(A, dtype=float)[None])[0]


def expm_scaled(A: np.ndarray, scalars) -> np.ndarray:
    """``exp(A * s)`` for each scalar ``s``; returns ``(len(s), k, k)``."""
    s = np.atleast_1d(np.asarray(scalars, dtype=float))
    return expm_batch(s[:, None, None] * np.asarray(A, dtype=float)[None])
