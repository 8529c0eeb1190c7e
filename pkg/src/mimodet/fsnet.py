"""FS-Net: an unfolded projected-gradient detector with elementwise weights.

Layer ``l`` computes::

    z   = H^T H s_prev - H^T y
    s_l = psi_t(w1 * s_prev + b1) + psi_t(w2 * z + b2)

starting from ``s_0 = 0``; the hard decision is ``quantize(s_L)``.  The step
size of the underlying gradient iteration lives inside ``w2``.

Everything here is batched over a leading axis so the same code serves
detection (batch of one) and training.  Gradients are written out by hand.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .linalg import OpCounter, counted_gram, counted_matvec, matvec_ops
from .model import Constellation, Kind, parse_kind, quantize, sample_batch

log = logging.getLogger(__name__)

MAGIC = b"FSNT"
VERSION = 1
_HEADER = struct.Struct("<4sIIIBd")


class WeightFileError(ValueError):
    pass


@dataclass
class FsNetParams:
    """Per-layer weights, each array of shape ``(L, M)``."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    constellation: Constellation
    t: float = 0.5

    def __post_init__(self):
        shape = np.shape(self.w1)
        for name in ("b1", "w2", "b2"):
            if np.shape(getattr(self, name)) != shape:
                raise ValueError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shape}")
        if len(shape) != 2:
            raise ValueError("weights must have shape (L, M)")
        if not self.t > 0:
            raise ValueError("t must be positive")

    @property
    def L(self) -> int:
        return self.w1.shape[0]

    @property
    def M(self) -> int:
        return self.w1.shape[1]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return self.w1, self.b1, self.w2, self.b2

    def copy(self) -> "FsNetParams":
        return replace(self, w1=self.w1.copy(), b1=self.b1.copy(),
                       w2=self.w2.copy(), b2=self.b2.copy())

    def __eq__(self, other):
        return (isinstance(other, FsNetParams) and self.t == other.t
                and self.constellation == other.constellation
                and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())))

    @classmethod
    def zeros(cls, M: int, L: int, constellation: Constellation, t: float = 0.5):
        z = lambda: np.zeros((L, M))
        return cls(z(), z(), z(), z(), constellation, t)

    @classmethod
    def init(cls, M: int, L: int, constellation: Constellation, rng=None, t: float = 0.5):
        """Identity path on the previous estimate, (almost) no gradient step.

        The untrained network therefore outputs ~0, the uninformed guess, and
        ``w2`` only has to learn a small negative step (about ``-2/M`` for
        unit-variance Rayleigh channels) to turn into projected gradient
        descent.
        """
        rng = np.random.default_rng(rng)
        jitter = lambda: 1e-3 * rng.standard_normal((L, M))
        return cls(1.0 + jitter(), jitter(), jitter(), jitter(), constellation, t)


def psi_t(x, c: Constellation, t: float = 0.5) -> np.ndarray:
    """Saturating staircase built from ReLU pairs; range ``[-q, q]``."""
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, -float(c.q))
    for i in c.omega:
        out += (np.maximum(x + i + t, 0.0) - np.maximum(x + i - t, 0.0)) / abs(t)
    return out


def psi_t_grad(x, c: Constellation, t: float = 0.5) -> np.ndarray:
    """Derivative of :func:`psi_t`, taking the left limit at the kinks."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    for i in c.omega:
        out += ((x + i + t) > 0).astype(float) - ((x + i - t) > 0).astype(float)
    return out / abs(t)


@dataclass
class ForwardTrace:
    """Intermediate values of a (batched) forward pass.

    ``s`` has shape ``(L + 1, B, M)`` with ``s[0] = 0``; ``a``, ``c`` and
    ``z`` have shape ``(L, B, M)`` and hold the two ``psi_t`` arguments and
    the gradient-like residual of each layer.
    """

    s: np.ndarray
    a: np.ndarray
    c: np.ndarray
    z: np.ndarray
    G: np.ndarray = field(repr=False)
    h: np.ndarray = field(repr=False)

    @property
    def L(self) -> int:
        return self.a.shape[0]

    @property
    def outputs(self) -> np.ndarray:
        return self.s[1:]


def layer_ops(M: int) -> tuple[int, int]:
    """(adds, muls) of one FS-Net layer; ``psi_t`` itself is not charged."""
    adds, muls = matvec_ops(M, M)
    # -h, +b1, +b2, psi + psi
    adds += 4 * M
    # w1*s, w2*z
    muls += 2 * M
    return adds, muls


def fsnet_ops(M: int, N: int, L: int) -> int:
    """Operations charged by :func:`forward` for an ``N x M`` channel.

    ``M(2N-1) + M^2(2N-1) + L(2M^2 + 5M)``; for square systems this is the
    usual ``M(2N-1) + M^2(2M-1) + L(2N^2 + 5N)``.
    """
    return M * (2 * N - 1) + M * M * (2 * N - 1) + L * (2 * M * M + 5 * M)


def square_fsnet_ops(M: int, N: int, L: int) -> int:
    """The closed form as usually quoted, exact only for ``N == M``."""
    return M * (2 * N - 1) + M * M * (2 * M - 1) + L * (2 * N * N + 5 * N)


def _layers(params: FsNetParams, G: np.ndarray, h: np.ndarray) -> ForwardTrace:
    B, M = h.shape
    L = params.L
    cst, t = params.constellation, params.t
    s = np.zeros((L + 1, B, M))
    a = np.empty((L, B, M))
    c = np.empty((L, B, M))
    z = np.empty((L, B, M))
    for l in range(L):
        z[l] = np.matmul(G, s[l][..., None])[..., 0] - h
        a[l] = params.w1[l] * s[l] + params.b1[l]
        c[l] = params.w2[l] * z[l] + params.b2[l]
        s[l + 1] = psi_t(a[l], cst, t) + psi_t(c[l], cst, t)
    return ForwardTrace(s, a, c, z, G, h)


def forward(params: FsNetParams, H: np.ndarray, y: np.ndarray,
            counter: OpCounter | None = None):
    """Run the network on one system.

    Returns ``(s_soft, s_hard, trace)`` where ``s_soft`` is the last layer's
    output and ``s_hard`` its quantization.
    """
    H = np.asarray(H, dtype=float)
    y = np.asarray(y, dtype=float)
    N, M = H.shape
    if M != params.M:
        raise ValueError(f"network expects M={params.M}, channel has M={M}")
    if y.shape != (N,):
        raise ValueError(f"y has shape {y.shape}, expected ({N},)")
    G = counted_gram(H, counter)
    h = counted_matvec(H, y, counter, transpose=True)
    trace = _layers(params, G[None], h[None])
    if counter is not None:
        adds, muls = layer_ops(M)
        counter.charge(params.L * adds, params.L * muls)
    s_soft = trace.s[-1, 0].copy()
    return s_soft, quantize(s_soft, params.constellation), trace


def forward_batch(params: FsNetParams, H: np.ndarray, y: np.ndarray) -> ForwardTrace:
    """Uncounted forward pass on ``H`` of shape ``(B, N, M)`` and ``y`` of shape ``(B, N)``."""
    Ht = np.swapaxes(H, 1, 2)
    G = np.matmul(Ht, H)
    h = np.matmul(Ht, y[..., None])[..., 0]
    return _layers(params, G, h)


def _layer_weights(L: int) -> np.ndarray:
    return np.log(np.arange(1, L + 1, dtype=float))


def _corr(s_true: np.ndarray, out: np.ndarray):
    """Pieces of ``r = 1 - |s^T x| / (|s| |x|)`` for outputs ``x`` of shape (L, B, M)."""
    dot = np.einsum("bm,lbm->lb", s_true, out)
    ns = np.linalg.norm(s_true, axis=-1)[None, :]
    nx = np.linalg.norm(out, axis=-1)
    return dot, ns, nx


def per_sample_loss(trace: ForwardTrace, s_true, xi: float = 0.1) -> np.ndarray:
    s_true = np.atleast_2d(np.asarray(s_true, dtype=float))
    out = trace.outputs
    lw = _layer_weights(trace.L)
    se = np.sum((s_true[None] - out) ** 2, axis=-1)
    dot, ns, nx = _corr(s_true, out)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(nx > 0, 1.0 - np.abs(dot) / (ns * nx), 1.0)
    return np.einsum("l,lb->b", lw, se + xi * r)


def loss(trace: ForwardTrace, s_true, xi: float = 0.1) -> float:
    """Mean over the batch of ``sum_l log(l) (|s - s_l|^2 + xi r(s_l, s))``."""
    return float(np.mean(per_sample_loss(trace, s_true, xi)))


def backward(params: FsNetParams, trace: ForwardTrace, s_true, xi: float = 0.1):
    """Exact gradient of :func:`loss` w.r.t. ``(w1, b1, w2, b2)``.

    Returns a tuple of four ``(L, M)`` arrays in that order.
    """
    s_true = np.atleast_2d(np.asarray(s_true, dtype=float))
    B = s_true.shape[0]
    L = trace.L
    cst, t = params.constellation, params.t
    out = trace.outputs
    lw = _layer_weights(L)

    dot, ns, nx = _corr(s_true, out)
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = nx > 0
        inv = np.where(safe, 1.0 / (ns * nx), 0.0)
        coef_s = np.sign(dot) * inv
        coef_x = np.where(safe, np.abs(dot) * inv / np.where(safe, nx, 1.0) ** 2, 0.0)
    # d r / d x = -(sign(dot) s / (|s||x|) - |dot| x / (|s| |x|^3))
    dr = -(coef_s[..., None] * s_true[None] - coef_x[..., None] * out)
    direct = lw[:, None, None] * (2.0 * (out - s_true[None]) + xi * dr) / B

    gw1 = np.zeros((L, params.M))
    gb1 = np.zeros_like(gw1)
    gw2 = np.zeros_like(gw1)
    gb2 = np.zeros_like(gw1)
    g = np.zeros_like(trace.s[0])
    for l in range(L - 1, -1, -1):
        g = g + direct[l]
        da = g * psi_t_grad(trace.a[l], cst, t)
        dc = g * psi_t_grad(trace.c[l], cst, t)
        gw1[l] = np.sum(da * trace.s[l], axis=0)
        gb1[l] = np.sum(da, axis=0)
        gw2[l] = np.sum(dc * trace.z[l], axis=0)
        gb2[l] = np.sum(dc, axis=0)
        dz = dc * params.w2[l]
        # G is symmetric
        g = da * params.w1[l] + np.matmul(trace.G, dz[..., None])[..., 0]
    return gw1, gb1, gw2, gb2


@dataclass
class TrainConfig:
    n_t: int = 8
    n_r: int = 8
    constellation: str = "QPSK"
    layers: int = 10
    epochs: int = 2000
    batch_size: int = 500
    lr_start: float = 1e-3
    lr_decay: float = 0.97
    decay_every: int = 100
    xi: float = 0.1
    snr_lo: float = 0.0
    snr_hi: float = 12.0
    t: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("n_t", "n_r", "layers", "epochs", "batch_size", "decay_every"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_r < self.n_t:
            raise ValueError("need n_r >= n_t")
        if self.lr_start < 0:
            raise ValueError("lr_start must be >= 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.xi < 0 or not self.t > 0:
            raise ValueError("xi must be >= 0 and t > 0")
        if self.snr_lo > self.snr_hi:
            raise ValueError("snr_lo must not exceed snr_hi")
        parse_kind(self.constellation)

    def lr(self, epoch: int) -> float:
        return self.lr_start * self.lr_decay ** (epoch // self.decay_every)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainResult:
    params: FsNetParams
    losses: list[float]


class Adam:
    def __init__(self, shapes, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.step_count = 0

    def step(self, params: list[np.ndarray], grads, lr: float) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(cfg: TrainConfig, callback=None) -> TrainResult:
    """Train with Adam on fresh random batches, one batch per epoch.

    ``callback(epoch, loss, lr)`` is called after every epoch.  Raises
    ``FloatingPointError`` if the loss stops being finite.
    """
    cst = Constellation.from_kind(cfg.constellation)
    rng = np.random.default_rng(cfg.seed)
    M = 2 * cfg.n_t
    params = FsNetParams.init(M, cfg.layers, cst, rng, cfg.t)
    arrays = list(params.arrays())
    opt = Adam([a.shape for a in arrays])
    losses = []
    for epoch in range(cfg.epochs):
        snr = rng.uniform(cfg.snr_lo, cfg.snr_hi, size=cfg.batch_size)
        H, y, s = sample_batch(cfg.n_t, cfg.n_r, cst, snr, cfg.batch_size, rng)
        trace = forward_batch(params, H, y)
        value = loss(trace, s, cfg.xi)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        grads = backward(params, trace, s, cfg.xi)
        lr = cfg.lr(epoch)
        if lr > 0:
            opt.step(arrays, grads, lr)
        losses.append(value)
        if callback is not None:
            callback(epoch, value, lr)
    return TrainResult(params, losses)


def save_params(params: FsNetParams, path) -> None:
    header = _HEADER.pack(MAGIC, VERSION, params.M, params.L,
                          int(params.constellation.kind), float(params.t))
    body = np.stack(params.arrays(), axis=1).astype("<f8")  # (L, 4, M)
    Path(path).write_bytes(header + body.tobytes())


def load_params(path, expected_M: int | None = None,
                expected_constellation=None) -> FsNetParams:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise WeightFileError(f"{path}: truncated header")
    magic, version, M, L, kind, t = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise WeightFileError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise WeightFileError(f"{path}: unsupported version {version}")
    try:
        kind = Kind(kind)
    except ValueError:
        raise WeightFileError(f"{path}: unknown constellation code {kind}") from None
    expected = _HEADER.size + 8 * 4 * L * M
    if len(data) != expected:
        raise WeightFileError(f"{path}: expected {expected} bytes for M={M}, L={L}, got {len(data)}")
    if expected_M is not None and M != expected_M:
        raise WeightFileError(f"{path}: network has M={M}, expected {expected_M}")
    if expected_constellation is not None and kind != parse_kind(
            getattr(expected_constellation, "kind", expected_constellation)):
        raise WeightFileError(f"{path}: network is for {kind.name}")
    if not t > 0:
        raise WeightFileError(f"{path}: invalid t={t}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(L, 4, M)
    w1, b1, w2, b2 = (np.array(body[:, k, :], dtype=float) for k in range(4))
    return FsNetParams(w1, b1, w2, b2, Constellation.from_kind(kind), t)


def write_loss_log(path, cfg: TrainConfig, losses) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"config": cfg.to_dict()}) + "\n")
        for epoch, value in enumerate(losses):
            fh.write(json.dumps({"epoch": epoch, "loss": value, "lr": cfg.lr(epoch)}) + "\n")
