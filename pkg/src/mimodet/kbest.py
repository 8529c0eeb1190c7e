"""Breadth-first K-best decoding, plain and FS-Net aided.

Paths are processed layer by layer from the root (last row of ``R``).  The
children of all surviving paths are generated in (parent rank, ascending
symbol) order and a stable sort on the metric picks the ``K`` best, so ties
resolve towards earlier parents and smaller symbols.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sphere import DEFAULT_ALPHA, DetectionResult, _prepare, _unpermute, fsnet_seed
from .linalg import OpCounter
from .model import RealSystem


@dataclass(frozen=True)
class KbestConfig:
    K: int = 16
    early_reject: bool = True
    layer_order: bool = True
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")


@dataclass
class _Sweep:
    paths: np.ndarray
    metrics: np.ndarray
    survivors: list
    visited: int
    adds: int
    muls: int
    layer_best: list

    @property
    def terminated(self) -> bool:
        return len(self.metrics) == 0


def kbest_sweep(R, z, alphabet, K: int, threshold: float = np.inf) -> _Sweep:
    """Run the layer-by-layer K-best expansion.

    After truncation to ``K`` paths, any path whose metric exceeds
    ``threshold`` is dropped.  The sweep stops as soon as no path is left;
    the survivor counts of the remaining layers are then zero.
    """
    R = np.asarray(R, dtype=float)
    z = np.asarray(z, dtype=float)
    alphabet = np.asarray(alphabet, dtype=float)
    M = len(z)
    A = len(alphabet)
    paths = np.zeros((1, M))
    metrics = np.zeros(1)
    survivors = [0] * M
    layer_best = []
    visited = adds = muls = 0
    for depth, k in enumerate(range(M - 1, -1, -1)):
        P = len(metrics)
        acc = np.full(P, z[k])
        for i in range(k + 1, M):
            acc = acc - R[k, i] * paths[:, i]
        n = M - 1 - k
        adds += P * n
        muls += P * n
        e = acc[:, None] - R[k, k] * alphabet[None, :]
        child = (metrics[:, None] + e * e).ravel()
        visited += P * A
        adds += 2 * P * A
        muls += 2 * P * A
        keep = np.argsort(child, kind="stable")[:K]
        keep = keep[child[keep] <= threshold]
        parent, sym = np.divmod(keep, A)
        paths = paths[parent]
        paths[:, k] = alphabet[sym]
        metrics = child[keep]
        survivors[depth] = len(keep)
        if len(keep) == 0:
            break
        layer_best.append(float(metrics[0]))
    return _Sweep(paths, metrics, survivors, visited, adds, muls, layer_best)


def decode_ksd(sys: RealSystem, K: int) -> DetectionResult:
    """Conventional K-best detection in natural column order."""
    if K < 1:
        raise ValueError("K must be >= 1")
    counter = OpCounter()
    prep = _prepare(sys.H, sys.y, counter)
    sweep = kbest_sweep(prep.qr.R, prep.z, sys.constellation.alphabet, K)
    counter.charge(sweep.adds, sweep.muls)
    return DetectionResult(sweep.paths[0].copy(), float(sweep.metrics[0]), counter.adds,
                           counter.muls, sweep.visited, 0, prep.qr_ops, 0,
                           radius_trace=sweep.layer_best, survivors=sweep.survivors)


def decode_fdl_ksd(sys: RealSystem, params, cfg: KbestConfig | None = None) -> DetectionResult:
    """K-best detection with FS-Net layer ordering and early rejection.

    Paths whose metric exceeds ``min(alpha N_r noise_var, phi(s_hat))`` are
    dropped after each truncation.  If every path is dropped the FS-Net
    decision is returned, unless the ``alpha`` radius was the binding one:
    then the sweep is repeated once against ``phi(s_hat)`` so the answer is
    never worse than either plain K-best or FS-Net.
    """
    cfg = cfg or KbestConfig()
    seed = fsnet_seed(sys, params, cfg.layer_order)
    prep = seed.prep
    counter = prep.counter
    alphabet = sys.constellation.alphabet
    alpha_radius = cfg.alpha * sys.n_r * sys.noise_var - prep.offset
    threshold = min(alpha_radius, seed.phi_hat) if cfg.early_reject else np.inf
    sweep = kbest_sweep(prep.qr.R, prep.z, alphabet, cfg.K, threshold)
    counter.charge(sweep.adds, sweep.muls)
    visited, restarts = sweep.visited, 0
    if sweep.terminated and threshold < seed.phi_hat:
        restarts = 1
        sweep = kbest_sweep(prep.qr.R, prep.z, alphabet, cfg.K, seed.phi_hat)
        counter.charge(sweep.adds, sweep.muls)
        visited += sweep.visited
    if sweep.terminated:
        x, metric = seed.s_hard, seed.phi_hat
    else:
        x, metric = sweep.paths[0], float(sweep.metrics[0])
    info = {"early_terminated": sweep.terminated, "phi_fsnet": seed.phi_hat}
    return DetectionResult(_unpermute(x, seed.perm), metric, counter.adds, counter.muls,
                           visited, restarts, prep.qr_ops, seed.fsnet_ops,
                           radius_trace=sweep.layer_best, survivors=sweep.survivors, info=info)


def survivor_profile(run: DetectionResult) -> list[int]:
    """Surviving path count per layer, root layer first."""
    if run.survivors is None:
        raise ValueError("not a K-best run")
    return list(run.survivors)
