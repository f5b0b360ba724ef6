"""Multipath Rayleigh block-fading channel with additive white Gaussian noise.

Tap ``l`` of an ``n_taps``-tap channel is drawn as CN(0, sigma_l^2) with an
exponential power-delay profile normalized to unit total power:

    sigma_l^2 = exp(-l / gamma) / sum_m exp(-m / gamma)

The channel output is the leading-aligned linear convolution of the input
with the taps plus complex AWGN. Taps and noise are sampled outside the
autodiff graph: gradients flow through the transmitted signal only, which is
what end-to-end training of the transceiver requires.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import cplx
from .autodiff import Node
from .cplx import CplxNode


def power_profile(n_taps: int, gamma: float) -> np.ndarray:
    """Per-tap powers sigma_l^2; positive and summing to exactly 1."""
    if n_taps < 1:
        raise ValueError(f"power_profile: n_taps must be >= 1, got {n_taps}")
    if not (gamma > 0):
        raise ValueError(f"power_profile: gamma must be > 0, got {gamma}")
    w = np.exp(-np.arange(n_taps) / float(gamma))
    return w / w.sum()


def sample_channel(rng: np.random.Generator, n_taps: int, gamma: float,
                   batch: int | None = None) -> np.ndarray:
    """Draw i.i.d. channel realizations h of shape (n_taps,) or (batch, n_taps).

    Draw order is fixed: one standard-normal block of shape (..., n_taps, 2)
    supplies the real/imaginary parts, scaled by sqrt(sigma_l^2 / 2).
    """
    prof = power_profile(n_taps, gamma)
    shape = (n_taps, 2) if batch is None else (batch, n_taps, 2)
    g = rng.standard_normal(shape)
    scale = np.sqrt(prof / 2.0)
    return scale * (g[..., 0] + 1j * g[..., 1])


def snr_to_sigma_sq(snr_db: float, p_s: float = 1.0) -> float:
    """Noise variance sigma^2 (total, both components) for a given SNR in dB."""
    return float(p_s) * 10.0 ** (-float(snr_db) / 10.0)


def freq_response(h: np.ndarray, l_fft: int) -> np.ndarray:
    """H[k] = sum_l h_l exp(-2j*pi*k*l/l_fft) (unnormalized), along the last axis."""
    h = np.asarray(h, dtype=np.complex128)
    if h.shape[-1] > l_fft:
        raise ValueError(f"freq_response: {h.shape[-1]} taps exceed l_fft={l_fft}")
    return np.fft.fft(h, n=l_fft, axis=-1)


def apply_channel(y: CplxNode, h: np.ndarray, sigma_sq: float,
                  rng: np.random.Generator | None = None) -> CplxNode:
    """Propagate a batch of signals: ``h * y + w`` (linear convolution + AWGN).

    ``y`` has shape (B, T), ``h`` is a complex (B, n_taps) constant. Noise is
    CN(0, sigma_sq) per sample, drawn as a (B, T, 2) standard-normal block;
    ``sigma_sq = 0`` (noiseless) needs no generator.
    """
    if y.re.value.ndim != 2:
        raise ValueError(f"apply_channel: y must be (B, T), got {y.shape}")
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim == 1:
        h = np.broadcast_to(h, (y.shape[0], h.shape[0]))
    if h.ndim != 2 or h.shape[0] != y.shape[0]:
        raise ValueError(f"apply_channel: taps {h.shape} do not match batch {y.shape}")
    if sigma_sq < 0:
        raise ValueError(f"apply_channel: sigma_sq must be >= 0, got {sigma_sq}")

    hr = np.ascontiguousarray(h.real)
    hi = np.ascontiguousarray(h.imag)
    out_re = ad.sub(ad.fir(y.re, hr), ad.fir(y.im, hi))
    out_im = ad.add(ad.fir(y.re, hi), ad.fir(y.im, hr))
    out = CplxNode(out_re, out_im)

    if sigma_sq > 0.0:
        if rng is None:
            raise ValueError("apply_channel: rng required when sigma_sq > 0")
        g = rng.standard_normal(y.shape + (2,))
        w = np.sqrt(sigma_sq / 2.0) * (g[..., 0] + 1j * g[..., 1])
        out = cplx.add(out, cplx.const(w))
    return out
