"""Reference detectors: linear ZF/MMSE, MMSE-OSIC, OSIC-seeded SD and exhaustive ML."""

from __future__ import annotations

import numpy as np

from .linalg import (OpCounter, RankDeficientError, counted_gram, counted_inverse,
                     counted_matvec, qr_decompose)
from .model import RealSystem, quantize
from .sphere import (DEFAULT_ALPHA, DetectionResult, Ordering, _prepare, enumerate_sphere,
                     ml_metric)

ML_LIMIT = 2 ** 20
_COND_LIMIT = 1e12


def _regularizer(sys: RealSystem) -> float:
    return sys.noise_var / sys.constellation.symbol_energy


def _linear(sys: RealSystem, reg: float, counter: OpCounter | None) -> np.ndarray:
    G = counted_gram(sys.H, counter)
    if reg:
        G = G + reg * np.eye(sys.M)
        if counter is not None:
            counter.charge(sys.M, 0)
    h = counted_matvec(sys.H, sys.y, counter, transpose=True)
    Ginv = counted_inverse(G, counter)
    return counted_matvec(Ginv, h, counter)


def detect_zf(sys: RealSystem, counter: OpCounter | None = None) -> np.ndarray:
    """Quantized least-squares estimate ``quantize((H^T H)^-1 H^T y)``.

    Raises :class:`RankDeficientError` when ``H`` is (numerically) rank deficient.
    """
    if sys.N < sys.M or np.linalg.cond(sys.H) > _COND_LIMIT:
        raise RankDeficientError("zero forcing needs a full column rank channel")
    return quantize(_linear(sys, 0.0, counter), sys.constellation)


def detect_mmse(sys: RealSystem, counter: OpCounter | None = None) -> np.ndarray:
    """Quantized regularized estimate with ``noise_var / symbol_energy`` loading."""
    return quantize(_linear(sys, _regularizer(sys), counter), sys.constellation)


def osic_order_step(H: np.ndarray, reg: float):
    """One MMSE-OSIC step: index of the strongest remaining stream and its nulling row.

    The stream with the smallest diagonal entry of ``(H^T H + reg I)^-1`` has
    the largest post-detection SINR; ties resolve to the lowest index.
    """
    P = np.linalg.inv(H.T @ H + reg * np.eye(H.shape[1]))
    k = int(np.argmin(np.diag(P)))
    return k, P[k] @ H.T


def detect_osic(sys: RealSystem, counter: OpCounter | None = None) -> np.ndarray:
    """MMSE ordered successive interference cancellation.

    Repeatedly detects the remaining stream with the largest post-detection
    SINR, subtracts its contribution from ``y`` and drops its column.
    """
    reg = _regularizer(sys)
    H = np.array(sys.H, dtype=float)
    y = np.array(sys.y, dtype=float)
    remaining = list(range(sys.M))
    x = np.zeros(sys.M)
    N = sys.N
    while remaining:
        m = len(remaining)
        k, w = osic_order_step(H, reg)
        if counter is not None:
            a, b = m * m * (N - 1) + m, m * m * N
            counter.charge(a + m ** 3 + m * (N - 1) + (N - 1) + N,
                           b + m ** 3 + m * N + N + N)
        xk = float(quantize(w @ y, sys.constellation))
        x[remaining[k]] = xk
        y = y - H[:, k] * xk
        H = np.delete(H, k, axis=1)
        del remaining[k]
    return x


def decode_osic_sd(sys: RealSystem, alpha: float = DEFAULT_ALPHA) -> DetectionResult:
    """Schnorr-Euchner SD whose radius is capped by the OSIC solution's metric.

    The initial squared radius is ``min(alpha N_r noise_var, phi(x_osic))``;
    an empty sphere is retried once at ``phi(x_osic)``, and if that also
    yields nothing the OSIC solution is returned.
    """
    counter = OpCounter()
    x0 = detect_osic(sys, counter)
    prep = _prepare(sys.H, sys.y, counter)
    M = sys.M
    phi0 = ml_metric(x0, prep.z, prep.qr.R)
    counter.charge(M * (M - 1) // 2 + 2 * M, M * (M - 1) // 2 + 2 * M)
    d2 = min(alpha * sys.n_r * sys.noise_var - prep.offset, phi0)
    out = enumerate_sphere(prep.qr.R, prep.z, d2, sys.constellation, Ordering.SCHNORR_EUCHNER)
    counter.charge(out.adds, out.muls)
    visited, trace, restarts = out.visited, list(out.trace), 0
    if out.x is None and d2 < phi0:
        restarts = 1
        out = enumerate_sphere(prep.qr.R, prep.z, phi0, sys.constellation,
                               Ordering.SCHNORR_EUCHNER, visited_offset=visited)
        counter.charge(out.adds, out.muls)
        visited += out.visited
        trace.extend(out.trace)
    x, metric = (out.x, out.radius_sq) if out.x is not None else (x0, phi0)
    trace = [(0, phi0)] + [(i, v) for i, v in trace if v < phi0]
    return DetectionResult(np.array(x), metric, counter.adds, counter.muls, visited,
                           restarts, prep.qr_ops, 0, trace)


def detect_ml_bruteforce(sys: RealSystem, chunk: int = 1 << 16) -> DetectionResult:
    """Exhaustive ``argmin ||y - H x||^2`` over the full lattice.

    Candidates are enumerated in lexicographic alphabet order and the first
    minimizer wins.  ``metric`` is reported in the rotated frame
    (``||y - H x||^2 - ||Q2^T y||^2``) when ``H`` has full column rank.
    """
    A = sys.constellation.alphabet
    M = sys.M
    if len(A) ** M > ML_LIMIT:
        raise ValueError(f"search space {len(A)}^{M} exceeds the {ML_LIMIT} limit")
    H = np.asarray(sys.H, dtype=float)
    y = np.asarray(sys.y, dtype=float)
    total = len(A) ** M
    place = len(A) ** np.arange(M - 1, -1, -1)
    best_x, best_val = None, np.inf
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        block = A[(idx[:, None] // place[None, :]) % len(A)]
        res = y[None, :] - block @ H.T
        vals = np.einsum("ij,ij->i", res, res)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val, best_x = float(vals[i]), block[i].copy()
    try:
        qr = qr_decompose(H)
        metric = ml_metric(best_x, qr.Q1.T @ y, qr.R)
    except RankDeficientError:
        metric = best_val
    return DetectionResult(best_x, metric, visited_nodes=len(A) ** M,
                           info={"residual": best_val})
