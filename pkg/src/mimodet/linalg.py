"""Dense linear algebra with explicit add/multiply accounting.

Every routine that takes an :class:`OpCounter` charges it with the number of
real additions and multiplications the textbook algorithm performs for the
given shapes.  One multiply-accumulate is one add plus one multiply; an
``n``-term dot product is therefore ``n`` multiplies and ``n - 1`` adds.
Divisions and square roots are charged as multiplies, comparisons are free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class RankDeficientError(np.linalg.LinAlgError):
    pass


@dataclass
class OpCounter:
    adds: int = 0
    muls: int = 0
    visited_nodes: int = 0

    def charge(self, adds: int = 0, muls: int = 0) -> None:
        self.adds += adds
        self.muls += muls

    @property
    def ops(self) -> int:
        return self.adds + self.muls

    def copy(self) -> "OpCounter":
        return OpCounter(self.adds, self.muls, self.visited_nodes)

    def __sub__(self, other: "OpCounter") -> "OpCounter":
        return OpCounter(self.adds - other.adds, self.muls - other.muls,
                         self.visited_nodes - other.visited_nodes)


@dataclass(frozen=True)
class QrFactors:
    Q1: np.ndarray
    Q2: np.ndarray
    R: np.ndarray

    @property
    def Q(self) -> np.ndarray:
        return np.hstack([self.Q1, self.Q2])


def matvec_ops(rows: int, cols: int) -> tuple[int, int]:
    """(adds, muls) of a dense ``rows x cols`` matrix-vector product."""
    return rows * (cols - 1), rows * cols


def gram_ops(n: int, m: int) -> tuple[int, int]:
    """(adds, muls) of ``A^T A`` for ``A`` of shape ``n x m``, every entry computed."""
    return m * m * (n - 1), m * m * n


def counted_matvec(A: np.ndarray, x: np.ndarray, counter: OpCounter | None = None,
                   transpose: bool = False) -> np.ndarray:
    """``A @ x`` (or ``A.T @ x``) with the product's flops charged to ``counter``."""
    A = np.asarray(A, dtype=float)
    x = np.asarray(x, dtype=float)
    op = A.T if transpose else A
    if op.ndim != 2 or x.ndim != 1 or op.shape[1] != x.shape[0]:
        raise ValueError(f"shape mismatch: {op.shape} @ {x.shape}")
    if counter is not None:
        counter.charge(*matvec_ops(*op.shape))
    return op @ x


def counted_gram(A: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {A.shape}")
    if counter is not None:
        counter.charge(*gram_ops(*A.shape))
    return A.T @ A


def counted_matmul(A: np.ndarray, B: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise ValueError(f"shape mismatch: {A.shape} @ {B.shape}")
    if counter is not None:
        n, k = A.shape
        m = B.shape[1]
        counter.charge(n * m * (k - 1), n * m * k)
    return A @ B


def counted_inverse(A: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """Inverse of a square matrix, charged as Gauss-Jordan elimination (n^3 each)."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"expected a square matrix, got {A.shape}")
    if counter is not None:
        counter.charge(n ** 3, n ** 3)
    return np.linalg.inv(A)


def householder_ops(n: int, m: int) -> tuple[int, int]:
    """(adds, muls) charged by :func:`qr_decompose` for an ``n x m`` matrix."""
    adds = muls = 0
    for k in range(m):
        rows = n - k
        if rows <= 1:
            break
        # norm, sqrt, v0, |v|^2 via 2(|x|^2 - x0*alpha), beta
        adds += (rows - 1) + 1 + 1
        muls += rows + 1 + 2 + 1
        cols = m - k - 1
        adds += cols * ((rows - 1) + rows)
        muls += cols * (rows + 1 + rows)
    return adds, muls


def qr_decompose(H: np.ndarray, counter: OpCounter | None = None) -> QrFactors:
    """Householder QR ``H = Q1 R`` with a positive diagonal on ``R``.

    Raises :class:`RankDeficientError` when a diagonal entry of ``R`` falls
    below ``1e-12 * ||H||_F``.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {H.shape}")
    N, M = H.shape
    if N < M:
        raise ValueError(f"need N >= M, got {N}x{M}")
    # factor at unit scale so tiny or huge entries neither underflow nor overflow
    scale = np.max(np.abs(H)) if H.size else 0.0
    if M and scale == 0.0:
        raise RankDeficientError("channel matrix is (numerically) rank deficient")
    # fixed layout so BLAS summation order, and hence R, is layout independent
    A = np.ascontiguousarray(H / scale if M else H)
    Q = np.eye(N)
    for k in range(M):
        if N - k <= 1:
            break
        x = A[k:, k]
        nx = np.sqrt(x @ x)
        if nx == 0.0:
            continue
        alpha = -nx if x[0] >= 0 else nx
        v = x.copy()
        v[0] -= alpha
        vv = v @ v
        if vv == 0.0:
            continue
        beta = 2.0 / vv
        A[k:, k:] -= np.outer(beta * v, v @ A[k:, k:])
        Q[:, k:] -= np.outer(Q[:, k:] @ v, beta * v)
    if counter is not None:
        counter.charge(*householder_ops(N, M))
    R = np.triu(A[:M, :])
    d = np.diag(R)
    if M and np.min(np.abs(d)) <= 1e-12 * np.linalg.norm(A):
        raise RankDeficientError("channel matrix is (numerically) rank deficient")
    sign = np.where(d < 0, -1.0, 1.0)
    R = sign[:, None] * R * scale if M else R
    Q1 = Q[:, :M] * sign[None, :]
    return QrFactors(Q1, Q[:, M:].copy(), R)
