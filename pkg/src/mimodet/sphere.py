"""Depth-first sphere decoding (Fincke-Pohst, Schnorr-Euchner, FS-Net aided).

All three decoders share :func:`enumerate_sphere`.  They differ only in how
the admissible symbols of a layer are ordered and in the initial radius.

Layer indexing is 0-based here: layer ``M - 1`` is the root of the search
tree (last row of ``R``) and layer ``0`` holds the leaves.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .linalg import OpCounter, QrFactors, counted_matvec, qr_decompose
from .model import Constellation, RealSystem

DEFAULT_ALPHA = 2.0


class Ordering(enum.Enum):
    NATURAL = "natural"
    SCHNORR_EUCHNER = "se"
    FDL = "fdl"


@dataclass
class DetectionResult:
    """Output of one detection call.

    ``metric`` is ``||z - R s_hat||^2``, i.e. ``||y - H s_hat||^2`` minus the
    part of ``y`` outside the column space of ``H``.  ``adds``/``muls``
    include the FS-Net forward pass when one was run (``fsnet_ops`` is that
    share) but not the QR factorization, which is reported in ``qr_ops``.
    """

    s_hat: np.ndarray
    metric: float
    adds: int = 0
    muls: int = 0
    visited_nodes: int = 0
    restarts: int = 0
    qr_ops: int = 0
    fsnet_ops: int = 0
    radius_trace: list = field(default_factory=list)
    survivors: list | None = None
    info: dict = field(default_factory=dict)

    @property
    def ops(self) -> int:
        return self.adds + self.muls


@dataclass
class SearchOutcome:
    x: np.ndarray | None
    radius_sq: float
    visited: int
    adds: int
    muls: int
    trace: list


def layer_bounds(z_adj: float, d: float, r: float, c: Constellation) -> tuple[float, float]:
    """Smallest/largest alphabet symbols inside ``[(z_adj - d)/r, (z_adj + d)/r]``.

    An empty interval comes back with ``LB > UB``.
    """
    q = c.q
    lo = (z_adj - d) / r
    hi = (z_adj + d) / r
    lb = max(math.ceil((lo + q) / 2), 0)
    ub = min(math.floor((hi + q) / 2), c.size - 1)
    return float(2 * lb - q), float(2 * ub - q)


_NATURAL, _SE, _FDL = 0, 1, 2
_MODE = {Ordering.NATURAL: _NATURAL, Ordering.SCHNORR_EUCHNER: _SE, Ordering.FDL: _FDL}


@njit(cache=True)
def _adjusted(R, z, x, k):
    M = z.shape[0]
    acc = z[k]
    for i in range(k + 1, M):
        acc -= R[k, i] * x[i]
    return acc


@njit(cache=True)
def _metric_kernel(R, z, x):
    M = z.shape[0]
    total = 0.0
    for k in range(M - 1, -1, -1):
        e = _adjusted(R, z, x, k) - R[k, k] * x[k]
        total = total + e * e
    return total


def ml_metric(x, z, R) -> float:
    """``||z - R x||^2``, accumulated root-to-leaf exactly as the search does."""
    return float(_metric_kernel(np.ascontiguousarray(R, dtype=float),
                                np.ascontiguousarray(z, dtype=float),
                                np.ascontiguousarray(x, dtype=float)))


@njit(cache=True)
def _order(row, cnt, target, mode):
    """In-place insertion sort of ``row[:cnt]`` by distance to ``target``.

    Ties: SE puts the smaller symbol first; FDL puts the smaller magnitude
    first (then the smaller symbol), matching :func:`~mimodet.model.quantize`.
    """
    for j in range(1, cnt):
        a = row[j]
        da = abs(a - target)
        i = j - 1
        while i >= 0:
            b = row[i]
            db = abs(b - target)
            if mode == 1:
                before = da < db or (da == db and a < b)
            else:
                before = da < db or (da == db and (abs(a) < abs(b) or (abs(a) == abs(b) and a < b)))
            if not before:
                break
            row[i + 1] = b
            i -= 1
        row[i + 1] = a


def symbol_order(symbols, target: float = 0.0,
                 ordering: Ordering = Ordering.NATURAL) -> np.ndarray:
    """Visiting order of admissible ``symbols`` (ascending) for one layer.

    ``target`` is ``z_adj / r`` for Schnorr-Euchner and the soft FS-Net
    output for FDL; it is ignored for the natural order.
    """
    row = np.array(symbols, dtype=float)
    if ordering is not Ordering.NATURAL:
        _order(row, len(row), float(target), _MODE[ordering])
    return row


@njit(cache=True)
def _enter(k, R, z, x, partial, zadj, cands, ncand, pos, d2, q, nsym, mode, anchor):
    """Fill the ordered admissible symbols of layer ``k``; returns (adds, muls)."""
    M = z.shape[0]
    za = _adjusted(R, z, x, k)
    zadj[k] = za
    n = M - 1 - k
    adds = n + 1
    muls = n
    pos[k] = 0
    ncand[k] = 0
    dk2 = d2 - partial[k + 1]
    if dk2 < 0.0:
        return adds, muls
    d = np.sqrt(dk2)
    r = R[k, k]
    muls += 3
    adds += 2
    # clamp in floating point so an infinite radius stays well defined
    lbf = max(np.ceil(((za - d) / r + q) / 2.0), 0.0)
    ubf = min(np.floor(((za + d) / r + q) / 2.0), nsym - 1.0)
    if lbf > ubf:
        return adds, muls
    lb = int(lbf)
    ub = int(ubf)
    if lb > ub:
        return adds, muls
    cnt = ub - lb + 1
    for j in range(cnt):
        cands[k, j] = 2.0 * (lb + j) - q
    ncand[k] = cnt
    if mode == 0:
        return adds, muls
    if mode == 1:
        target = za / r
        muls += 1
    else:
        target = anchor[k]
    adds += cnt
    _order(cands[k], cnt, target, mode)
    return adds, muls


@njit(cache=True)
def _search_kernel(R, z, d2, q, nsym, mode, anchor, visited_offset):
    M = z.shape[0]
    x = np.zeros(M)
    partial = np.zeros(M + 1)
    zadj = np.zeros(M)
    cands = np.zeros((M, nsym))
    ncand = np.zeros(M, np.int64)
    pos = np.zeros(M, np.int64)
    best = np.zeros(M)
    found = False
    cap = 64
    t_idx = np.empty(cap, np.int64)
    t_val = np.empty(cap)
    nt = 0
    visited = 0
    k = M - 1
    adds, muls = _enter(k, R, z, x, partial, zadj, cands, ncand, pos, d2, q, nsym, mode, anchor)
    while True:
        if pos[k] < ncand[k]:
            a = cands[k, pos[k]]
            pos[k] += 1
            visited += 1
            e = zadj[k] - R[k, k] * a
            p = partial[k + 1] + e * e
            adds += 2
            muls += 2
            if p > d2:
                if mode == 1:
                    # distances to the center only grow from here on
                    pos[k] = ncand[k]
                continue
            if k == 0 and found and p == d2:
                # ties do not replace the incumbent
                continue
            x[k] = a
            if k == 0:
                d2 = p
                best[:] = x
                found = True
                if nt == cap:
                    cap *= 2
                    ti = np.empty(cap, np.int64)
                    tv = np.empty(cap)
                    ti[:nt] = t_idx
                    tv[:nt] = t_val
                    t_idx = ti
                    t_val = tv
                t_idx[nt] = visited_offset + visited
                t_val[nt] = p
                nt += 1
                continue
            partial[k] = p
            k -= 1
            da, dm = _enter(k, R, z, x, partial, zadj, cands, ncand, pos, d2, q, nsym, mode, anchor)
            adds += da
            muls += dm
        else:
            k += 1
            if k == M:
                break
    return found, best, d2, visited, adds, muls, t_idx[:nt].copy(), t_val[:nt].copy()


def enumerate_sphere(R, z, radius_sq: float, c: Constellation,
                     ordering: Ordering = Ordering.NATURAL, anchor=None,
                     visited_offset: int = 0) -> SearchOutcome:
    """Find ``argmin ||z - R x||^2`` over ``x`` in the sphere of ``radius_sq``.

    Returns the best leaf (``x = None`` if the sphere holds no lattice
    point) and the final squared radius.  A leaf is accepted when its metric
    does not exceed the current radius (later leaves must beat it strictly);
    the radius then shrinks to it.
    ``anchor`` gives the per-layer target of :attr:`Ordering.FDL`.
    """
    R = np.ascontiguousarray(R, dtype=float)
    z = np.ascontiguousarray(z, dtype=float)
    if ordering is Ordering.FDL:
        if anchor is None:
            raise ValueError("FDL ordering needs an anchor vector")
        anchor = np.ascontiguousarray(anchor, dtype=float)
    else:
        anchor = np.zeros(len(z))
    found, best, d2, visited, adds, muls, ti, tv = _search_kernel(
        R, z, float(radius_sq), float(c.q), c.size, _MODE[ordering], anchor, visited_offset)
    trace = list(zip(ti.tolist(), tv.tolist()))
    return SearchOutcome(best if found else None, float(d2), int(visited),
                         int(adds), int(muls), trace)


@dataclass(frozen=True)
class RadiusPolicy:
    """Initial squared radius ``alpha * N_r * noise_var``; doubled after an empty search."""

    alpha: float = DEFAULT_ALPHA
    growth: float = 2.0
    max_restarts: int = 200

    def initial(self, sys: RealSystem) -> float:
        return self.alpha * sys.n_r * sys.noise_var


@dataclass
class _Prepared:
    qr: QrFactors
    z: np.ndarray
    offset: float
    counter: OpCounter
    qr_ops: int


def _prepare(H, y, counter: OpCounter) -> _Prepared:
    qr_counter = OpCounter()
    qr = qr_decompose(H, qr_counter)
    z = counted_matvec(qr.Q1, y, counter, transpose=True)
    offset = 0.0
    if qr.Q2.shape[1]:
        w = counted_matvec(qr.Q2, y, counter, transpose=True)
        offset = float(w @ w)
        counter.charge(len(w) - 1, len(w))
    return _Prepared(qr, z, offset, counter, qr_counter.ops)


def _tiny(sys: RealSystem) -> float:
    return 1e-12 * (1.0 + float(sys.y @ sys.y))


def _decode_conventional(sys: RealSystem, ordering: Ordering,
                         radius_policy: RadiusPolicy | None) -> DetectionResult:
    policy = radius_policy or RadiusPolicy()
    counter = OpCounter()
    prep = _prepare(sys.H, sys.y, counter)
    radius_y = policy.initial(sys)
    restarts = 0
    visited = 0
    trace: list = []
    while True:
        d2 = radius_y - prep.offset
        out = enumerate_sphere(prep.qr.R, prep.z, d2, sys.constellation, ordering,
                               visited_offset=visited)
        visited += out.visited
        counter.charge(out.adds, out.muls)
        trace.extend(out.trace)
        if out.x is not None:
            break
        restarts += 1
        if restarts > policy.max_restarts:
            raise RuntimeError("sphere stayed empty after repeated radius growth")
        radius_y = max(radius_y * policy.growth, prep.offset + _tiny(sys))
    return DetectionResult(np.array(out.x), out.radius_sq, counter.adds, counter.muls,
                           visited, restarts, prep.qr_ops, 0, trace)


def decode_fp(sys: RealSystem, radius_policy: RadiusPolicy | None = None) -> DetectionResult:
    """Fincke-Pohst: admissible symbols visited in increasing order."""
    return _decode_conventional(sys, Ordering.NATURAL, radius_policy)


def decode_se(sys: RealSystem, radius_policy: RadiusPolicy | None = None) -> DetectionResult:
    """Schnorr-Euchner: admissible symbols visited outward from the layer center."""
    return _decode_conventional(sys, Ordering.SCHNORR_EUCHNER, radius_policy)


def layer_permutation(s_soft, s_hard) -> np.ndarray:
    """Column order putting the least reliable FS-Net symbols at the leaves.

    Returns indices sorted by decreasing ``|s_hard - s_soft|`` (stable), so
    the first entry becomes leaf layer of the search tree.
    """
    e = np.abs(np.asarray(s_hard, dtype=float) - np.asarray(s_soft, dtype=float))
    return np.argsort(-e, kind="stable")


@dataclass
class FsNetSeed:
    """FS-Net output mapped into a (possibly permuted) QR frame."""

    prep: _Prepared
    perm: np.ndarray
    s_soft: np.ndarray
    s_hard: np.ndarray
    phi_hat: float
    fsnet_ops: int


def fsnet_seed(sys: RealSystem, params, layer_order: bool = True) -> FsNetSeed:
    """Run FS-Net, reorder the channel columns and factor the reordered channel."""
    from .fsnet import forward

    if params.M != sys.M:
        raise ValueError(f"network expects M={params.M}, system has M={sys.M}")
    if params.constellation != sys.constellation:
        raise ValueError("network and system constellations differ")
    counter = OpCounter()
    s_soft, s_hard, _ = forward(params, sys.H, sys.y, counter)
    fs_ops = counter.ops
    if layer_order:
        # e = |s_hard - s_soft|
        counter.charge(sys.M, 0)
        perm = layer_permutation(s_soft, s_hard)
    else:
        perm = np.arange(sys.M)
    prep = _prepare(sys.H[:, perm], sys.y, counter)
    sh, ss = s_hard[perm], s_soft[perm]
    phi = ml_metric(sh, prep.z, prep.qr.R)
    M = sys.M
    counter.charge(M * (M - 1) // 2 + 2 * M, M * (M - 1) // 2 + 2 * M)
    return FsNetSeed(prep, perm, ss, sh, phi, fs_ops)


def _unpermute(x, perm) -> np.ndarray:
    out = np.empty(len(perm))
    out[perm] = x
    return out


def decode_fdl(sys: RealSystem, params, alpha: float = DEFAULT_ALPHA,
               layer_order: bool = True) -> DetectionResult:
    """Sphere decoding seeded by FS-Net.

    Candidates in every layer are visited by distance to the soft FS-Net
    output, layers are ordered so the least reliable symbols sit at the
    leaves, and the initial radius is ``min(alpha N_r noise_var, phi(s_hat))``
    with the search's incumbent initialized to the FS-Net decision.  If the
    ``alpha`` sphere turns out empty the search is repeated once with radius
    ``phi(s_hat)``, which always contains the FS-Net decision.
    """
    seed = fsnet_seed(sys, params, layer_order)
    prep = seed.prep
    counter = prep.counter
    alpha_radius = alpha * sys.n_r * sys.noise_var - prep.offset
    d2 = min(alpha_radius, seed.phi_hat)
    out = enumerate_sphere(prep.qr.R, prep.z, d2, sys.constellation, Ordering.FDL, seed.s_soft)
    counter.charge(out.adds, out.muls)
    visited, trace, restarts = out.visited, list(out.trace), 0
    x, metric = out.x, out.radius_sq
    if x is None and d2 < seed.phi_hat:
        restarts = 1
        out = enumerate_sphere(prep.qr.R, prep.z, seed.phi_hat, sys.constellation,
                               Ordering.FDL, seed.s_soft, visited_offset=visited)
        counter.charge(out.adds, out.muls)
        visited += out.visited
        trace.extend(out.trace)
        x, metric = out.x, out.radius_sq
    if x is None:
        x, metric = seed.s_hard, seed.phi_hat
    # incumbent trace: FS-Net decision first, then strict improvements on it
    trace = [(0, seed.phi_hat)] + [(i, v) for i, v in trace if v < seed.phi_hat]
    info = {"alpha_radius_negative": alpha_radius < 0, "phi_fsnet": seed.phi_hat}
    return DetectionResult(_unpermute(x, seed.perm), metric, counter.adds, counter.muls,
                           visited, restarts, prep.qr_ops, seed.fsnet_ops, trace, info=info)
