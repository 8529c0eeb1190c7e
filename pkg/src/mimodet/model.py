"""Constellations, the real-valued MIMO system model and instance sampling.

Symbols are kept on the unnormalized odd-integer grid (``±1``, ``±1, ±3``,
...), so the saturation levels of the FS-Net nonlinearity line up exactly with
the outermost symbols.  The average symbol energy is carried explicitly and
enters only through the SNR -> noise variance conversion.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Kind(enum.IntEnum):
    QPSK = 0
    QAM16 = 1
    QAM64 = 2


_LEVELS = {Kind.QPSK: 2, Kind.QAM16: 4, Kind.QAM64: 8}


@dataclass(frozen=True)
class Constellation:
    """Real-valued per-dimension alphabet of a square QAM constellation.

    Attributes
    ----------
    kind : Kind
    alphabet : np.ndarray
        Odd integers ``-q, -q+2, ..., q``.
    q : int
        Largest symbol magnitude (saturation level of ``psi_t``).
    omega : np.ndarray
        Offsets of the ReLU pairs inside ``psi_t``.
    symbol_energy : float
        Average energy ``E|s|^2`` of one complex symbol.
    """

    kind: Kind
    alphabet: np.ndarray = field(repr=False)
    q: int
    omega: np.ndarray = field(repr=False)
    symbol_energy: float

    @classmethod
    def from_kind(cls, kind) -> "Constellation":
        kind = parse_kind(kind)
        levels = _LEVELS[kind]
        q = levels - 1
        alphabet = np.arange(-q, q + 1, 2, dtype=float)
        omega = np.arange(-(q - 1), q, 2, dtype=float)
        # two independent real dimensions per complex symbol
        energy = 2.0 * float(np.mean(alphabet ** 2))
        alphabet.setflags(write=False)
        omega.setflags(write=False)
        return cls(kind, alphabet, q, omega, energy)

    @property
    def size(self) -> int:
        return len(self.alphabet)

    @property
    def bits_per_dim(self) -> int:
        return int(np.log2(self.size))

    def __eq__(self, other):
        return isinstance(other, Constellation) and other.kind == self.kind

    def __hash__(self):
        return hash(self.kind)


def parse_kind(kind) -> Kind:
    if isinstance(kind, Kind):
        return kind
    if isinstance(kind, (int, np.integer)):
        return Kind(int(kind))
    key = str(kind).strip().upper().replace("-", "")
    aliases = {"QPSK": Kind.QPSK, "4QAM": Kind.QPSK, "QAM4": Kind.QPSK,
               "16QAM": Kind.QAM16, "QAM16": Kind.QAM16,
               "64QAM": Kind.QAM64, "QAM64": Kind.QAM64}
    try:
        return aliases[key]
    except KeyError:
        raise ValueError(f"unknown constellation {kind!r}") from None


QPSK = Constellation.from_kind(Kind.QPSK)
QAM16 = Constellation.from_kind(Kind.QAM16)
QAM64 = Constellation.from_kind(Kind.QAM64)


@dataclass(frozen=True)
class ComplexSystem:
    H: np.ndarray
    s: np.ndarray
    n: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class RealSystem:
    """One real-valued detection problem ``y = H s + n``.

    ``noise_var`` is the complex-domain noise variance; each real noise
    component has variance ``noise_var / 2``.
    """

    H: np.ndarray
    y: np.ndarray
    noise_var: float
    constellation: Constellation
    s_true: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.H.shape[0]

    @property
    def M(self) -> int:
        return self.H.shape[1]

    @property
    def n_r(self) -> int:
        return self.H.shape[0] // 2

    @property
    def n_t(self) -> int:
        return self.H.shape[1] // 2


def to_real(sys: ComplexSystem, constellation: Constellation = QPSK,
            noise_var: float = 0.0) -> RealSystem:
    Hc = np.asarray(sys.H, dtype=complex)
    H = np.block([[Hc.real, -Hc.imag], [Hc.imag, Hc.real]])
    y = np.concatenate([np.real(sys.y), np.imag(sys.y)])
    s = np.concatenate([np.real(sys.s), np.imag(sys.s)])
    return RealSystem(H, y, float(noise_var), constellation, s)


def to_complex(real: RealSystem) -> ComplexSystem:
    """Inverse of :func:`to_real` (noise is recovered as ``y - H s``)."""
    nr, nt = real.n_r, real.n_t
    H = real.H[:nr, :nt] + 1j * real.H[nr:, :nt]
    y = real.y[:nr] + 1j * real.y[nr:]
    s = real.s_true[:nt] + 1j * real.s_true[nt:]
    return ComplexSystem(H, s, y - H @ s, y)


def noise_variance(n_t: int, snr_db: float, symbol_energy: float) -> float:
    """Complex noise variance for ``SNR = n_t * symbol_energy / noise_var``."""
    if np.isinf(snr_db) and snr_db > 0:
        return 0.0
    return n_t * symbol_energy / 10.0 ** (snr_db / 10.0)


def sample_instance(n_t: int, n_r: int, constellation: Constellation,
                    snr_db: float, rng_seed=None,
                    symbol_energy: float | None = None) -> RealSystem:
    """Draw a Rayleigh channel, uniform symbols and AWGN at ``snr_db``.

    ``rng_seed`` is anything :func:`numpy.random.default_rng` accepts.
    ``snr_db = inf`` gives a noiseless instance.
    """
    if n_r < n_t:
        raise ValueError(f"need n_r >= n_t, got n_r={n_r}, n_t={n_t}")
    if n_t < 1:
        raise ValueError("n_t must be positive")
    if np.isnan(snr_db) or snr_db == -np.inf:
        raise ValueError(f"invalid SNR {snr_db}")
    rng = np.random.default_rng(rng_seed)
    es = constellation.symbol_energy if symbol_energy is None else symbol_energy
    nv = noise_variance(n_t, snr_db, es)
    Hc = (rng.standard_normal((n_r, n_t)) + 1j * rng.standard_normal((n_r, n_t))) * np.sqrt(0.5)
    idx = rng.integers(0, constellation.size, size=2 * n_t)
    s = constellation.alphabet[idx]
    sc = s[:n_t] + 1j * s[n_t:]
    nc = (rng.standard_normal(n_r) + 1j * rng.standard_normal(n_r)) * np.sqrt(nv / 2)
    yc = Hc @ sc + nc
    real = to_real(ComplexSystem(Hc, sc, nc, yc), constellation, nv)
    # rebuild y in the real domain so that y == H s exactly when noiseless
    y = real.H @ real.s_true + np.concatenate([nc.real, nc.imag])
    return RealSystem(real.H, y, real.noise_var, constellation, real.s_true)


def sample_batch(n_t: int, n_r: int, constellation: Constellation, snr_db,
                 batch: int, rng: np.random.Generator):
    """Vectorized real-model batch ``(H, y, s)`` for training.

    ``snr_db`` may be a scalar or a length-``batch`` array.
    """
    N, M = 2 * n_r, 2 * n_t
    Hr = rng.standard_normal((batch, n_r, n_t)) * np.sqrt(0.5)
    Hi = rng.standard_normal((batch, n_r, n_t)) * np.sqrt(0.5)
    H = np.empty((batch, N, M))
    H[:, :n_r, :n_t] = Hr
    H[:, :n_r, n_t:] = -Hi
    H[:, n_r:, :n_t] = Hi
    H[:, n_r:, n_t:] = Hr
    s = constellation.alphabet[rng.integers(0, constellation.size, size=(batch, M))]
    snr = np.broadcast_to(np.asarray(snr_db, dtype=float), (batch,))
    nv = n_t * constellation.symbol_energy / 10.0 ** (snr / 10.0)
    n = rng.standard_normal((batch, N)) * np.sqrt(nv / 2)[:, None]
    y = np.matmul(H, s[..., None])[..., 0] + n
    return H, y, s


def quantize(v, c: Constellation) -> np.ndarray:
    """Map each entry to the nearest alphabet symbol.

    Exact midpoints go to the symbol of smaller magnitude; at 0 the
    magnitudes tie as well and the smaller (negative) symbol wins.
    """
    v = np.asarray(v, dtype=float)
    u = (v + c.q) / 2.0
    lo = np.floor(u)
    frac = u - lo
    idx = np.where(frac > 0.5, lo + 1, lo)
    tie = frac == 0.5
    idx = np.where(tie & (v < 0), lo + 1, idx)
    idx = np.clip(idx, 0, c.size - 1)
    return -c.q + 2.0 * idx


def symbol_index(v, c: Constellation) -> np.ndarray:
    return ((np.asarray(v, dtype=float) + c.q) / 2).round().astype(int)


def gray_bits(c: Constellation) -> np.ndarray:
    """Gray label table, shape ``(|A|, bits)``; row k labels symbol ``-q + 2k``.

    Labels are the binary-reflected Gray code of the level index, MSB first,
    so neighbouring levels differ in exactly one bit.
    """
    k = np.arange(c.size)
    g = k ^ (k >> 1)
    nb = c.bits_per_dim
    return ((g[:, None] >> np.arange(nb - 1, -1, -1)[None, :]) & 1).astype(np.uint8)


def _infer(*vectors) -> Constellation:
    q = max(float(np.max(np.abs(v))) for v in vectors)
    for c in (QPSK, QAM16, QAM64):
        if q <= c.q:
            return c
    raise ValueError("symbols exceed the 64-QAM range")


def bit_errors(detected, s_true, c: Constellation | None = None) -> tuple[int, int]:
    """Return ``(bit errors, total bits)`` under the Gray labeling."""
    detected = np.asarray(detected, dtype=float)
    s_true = np.asarray(s_true, dtype=float)
    if detected.shape != s_true.shape:
        raise ValueError(f"length mismatch: {detected.shape} vs {s_true.shape}")
    c = c or _infer(detected, s_true)
    table = gray_bits(c)
    a = table[symbol_index(detected, c)]
    b = table[symbol_index(s_true, c)]
    return int(np.count_nonzero(a != b)), int(a.size)


def ber(detected, s_true, c: Constellation | None = None) -> float:
    errs, bits = bit_errors(detected, s_true, c)
    return errs / bits
