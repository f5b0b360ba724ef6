"""OFDM transmit/receive chain: unitary (I)DFT, cyclic prefix, pilots,
power normalization and amplitude clipping.

Conventions (fixed across the package):

* DFT and IDFT are both scaled by ``1/sqrt(N)``, so they are unitary and
  Parseval holds exactly in both directions.
* A packet is ``n_p`` pilot symbols followed by ``n_s`` data symbols, each an
  ``l_fft``-point symbol with an ``l_cp``-sample cyclic prefix, serialized
  row-major and normalized to unit average power *before* clipping.
* Amplitude clipping ``y -> min(A, rho*sqrt(P_s)) * exp(j*phase)`` preserves
  phase; the backward pass uses the exact Jacobian of that map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from . import cplx
from .autodiff import Node
from .cplx import CplxNode

P_S = 1.0  # nominal average transmit power after normalization

_QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / math.sqrt(2.0)


@dataclass(frozen=True)
class OfdmConfig:
    """Static dimensions of the OFDM frame."""

    l_fft: int = 64
    l_cp: int = 16
    n_p: int = 2
    n_s: int = 6
    pilot_seed: int = 7

    def __post_init__(self):
        if self.l_fft < 2:
            raise ValueError(f"l_fft must be >= 2, got {self.l_fft}")
        if not 0 <= self.l_cp < self.l_fft:
            raise ValueError(f"l_cp must be in [0, l_fft), got {self.l_cp}")
        if self.n_p < 1 or self.n_s < 1:
            raise ValueError("need at least one pilot and one data symbol")

    @property
    def rows(self) -> int:
        return self.n_p + self.n_s

    @property
    def symbol_len(self) -> int:
        return self.l_fft + self.l_cp

    @property
    def packet_len(self) -> int:
        return self.rows * self.symbol_len


def channel_uses_per_pixel(cfg: OfdmConfig, height: int, width: int, channels: int) -> float:
    """Complex channel uses per source pixel for one image per packet."""
    return cfg.packet_len / float(height * width * channels)


@lru_cache(maxsize=None)
def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix F[n, k] = exp(-2j*pi*n*k/N) / sqrt(N) (symmetric)."""
    idx = np.arange(n)
    f = np.exp(-2j * np.pi * np.outer(idx, idx) / n) / math.sqrt(n)
    f.setflags(write=False)
    return f


def dft(x: CplxNode) -> CplxNode:
    """Unitary DFT along the last axis."""
    return cplx.matmul_const(x, dft_matrix(x.shape[-1]))


def idft(x: CplxNode) -> CplxNode:
    """Unitary inverse DFT along the last axis (conjugate of :func:`dft`)."""
    return cplx.matmul_const(x, np.conj(dft_matrix(x.shape[-1])))


def add_cp(x: CplxNode, l_cp: int) -> CplxNode:
    """Prepend the last ``l_cp`` samples of each symbol (last axis)."""
    n = x.shape[-1]
    if not 0 <= l_cp < n:
        raise ValueError(f"add_cp: l_cp={l_cp} out of range for symbol length {n}")
    if l_cp == 0:
        return x
    key = (Ellipsis, slice(n - l_cp, None))
    return cplx.concat([cplx.slice_(x, key), x], axis=-1)


def remove_cp(x: CplxNode, l_cp: int) -> CplxNode:
    return cplx.slice_(x, (Ellipsis, slice(l_cp, None)))


def make_pilots(seed: int, n_p: int, l_fft: int) -> np.ndarray:
    """Known pilot grid: one QPSK row repeated ``n_p`` times.

    Procedure (fixed; receivers regenerate the same grid from the seed):
    ``rng = np.random.default_rng(seed)`` draws ``l_fft`` integers in [0, 4)
    indexing the unit-modulus set {(+-1 +- 1j)/sqrt(2)}.
    """
    rng = np.random.default_rng(seed)
    row = _QPSK[rng.integers(0, 4, size=l_fft)]
    return np.tile(row, (n_p, 1))


def normalize_power(y: CplxNode) -> CplxNode:
    """Scale to unit average power. 1-D input is treated as one signal;
    otherwise the leading axis indexes independent signals."""
    a2 = cplx.abs2(y)
    n = y.shape[-1] if y.re.value.ndim > 1 else y.re.value.size
    if y.re.value.ndim == 1:
        p = ad.mul_const(ad.sum_all(a2), 1.0 / n)
        if float(p.value) == 0.0:
            raise ValueError("normalize_power: all-zero signal")
        return cplx.scale_all(y, ad.recip(ad.sqrt(p)))
    axes = tuple(range(1, y.re.value.ndim))
    count = int(np.prod([y.shape[i] for i in axes]))
    p = ad.mul_const(ad.sum_axes(a2, axes), 1.0 / count)
    if np.any(p.value == 0.0):
        raise ValueError("normalize_power: all-zero signal in batch")
    return cplx.scale_first(y, ad.recip(ad.sqrt(p)))


def clip(y: CplxNode, rho: float, p_s: float = P_S) -> CplxNode:
    """Amplitude clipping at threshold ``rho * sqrt(p_s)``; phase preserved.

    ``rho = inf`` is the identity. Gradients follow the exact Jacobian:
    identity below threshold, ``(t/A)(I - a a^T / A^2)`` above it.
    """
    if rho == math.inf:
        return y
    if not (rho > 0.0):
        raise ValueError(f"clip: rho must be > 0 or inf, got {rho}")
    t = rho * math.sqrt(p_s)
    s = ad.clip_scale(cplx.abs2(y), t)
    return cplx.mul_real(y, s)


def papr_db(y: np.ndarray) -> np.ndarray | float:
    """Peak-to-average power ratio (dB) along the last axis of a complex array."""
    y = np.asarray(y)
    p = np.abs(y) ** 2
    mean = p.mean(axis=-1)
    if np.any(mean == 0.0):
        raise ValueError("papr_db: zero-power signal")
    out = 10.0 * np.log10(p.max(axis=-1) / mean)
    return float(out) if np.isscalar(out) or out.ndim == 0 else out


@dataclass(frozen=True)
class TxPacket:
    """Transmitted packet plus the pre-clipping waveform (for PAPR reporting)."""

    tx: CplxNode        # (B, packet_len), after normalize + clip
    preclip: CplxNode   # (B, packet_len), after normalize only


def assemble_packet(grid: CplxNode, pilots: np.ndarray, cfg: OfdmConfig,
                    clip_ratio: float = math.inf) -> TxPacket:
    """Build the transmit waveform from a batch of data grids.

    ``grid`` has shape (B, n_s, l_fft); ``pilots`` is the known (n_p, l_fft)
    complex grid. Pipeline: per-row IDFT -> cyclic prefix -> serialize
    (pilots first) -> normalize to P_s = 1 -> clip.
    """
    if grid.re.value.ndim != 3 or grid.shape[1:] != (cfg.n_s, cfg.l_fft):
        raise ValueError(f"assemble_packet: grid must be (B, {cfg.n_s}, {cfg.l_fft}), "
                         f"got {grid.shape}")
    if pilots.shape != (cfg.n_p, cfg.l_fft):
        raise ValueError(f"assemble_packet: pilots must be ({cfg.n_p}, {cfg.l_fft}), "
                         f"got {pilots.shape}")
    b = grid.shape[0]
    prow = cplx.tile(cplx.reshape(cplx.const(pilots), (1, cfg.n_p, cfg.l_fft)), 0, b)
    frame = cplx.concat([prow, grid], axis=1)
    waves = add_cp(idft(frame), cfg.l_cp)
    serial = cplx.reshape(waves, (b, cfg.packet_len))
    norm = normalize_power(serial)
    return TxPacket(tx=clip(norm, clip_ratio), preclip=norm)


def disassemble_packet(rx: CplxNode, cfg: OfdmConfig) -> tuple[CplxNode, CplxNode]:
    """Split a received packet back into frequency-domain grids.

    Returns ``(pilot_grid, data_grid)`` of shapes (B, n_p, l_fft) and
    (B, n_s, l_fft): reshape to symbols, drop each cyclic prefix, DFT.
    """
    if rx.re.value.ndim != 2 or rx.shape[1] != cfg.packet_len:
        raise ValueError(f"disassemble_packet: rx must be (B, {cfg.packet_len}), got {rx.shape}")
    b = rx.shape[0]
    symbols = cplx.reshape(rx, (b, cfg.rows, cfg.symbol_len))
    grids = dft(remove_cp(symbols, cfg.l_cp))
    pilot = cplx.slice_(grids, (slice(None), slice(0, cfg.n_p), slice(None)))
    data = cplx.slice_(grids, (slice(None), slice(cfg.n_p, None), slice(None)))
    return pilot, data
