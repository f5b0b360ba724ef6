"""Reconstruction quality metrics (plain numpy, not differentiated)."""

from __future__ import annotations

import numpy as np

PSNR_CAP_DB = 100.0

_SSIM_WIN = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def psnr(ref: np.ndarray, rec: np.ndarray, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 for (near-)exact match."""
    ref = np.asarray(ref, dtype=np.float64)
    rec = np.asarray(rec, dtype=np.float64)
    if ref.shape != rec.shape:
        raise ValueError(f"psnr: shape mismatch {ref.shape} vs {rec.shape}")
    mse = float(np.mean((ref - rec) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(data_range ** 2 / mse)))


def _gaussian_kernel(size: int = _SSIM_WIN, sigma: float = _SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(img, kernel.shape)
    return np.tensordot(win, kernel, axes=([2, 3], [0, 1]))


def ssim(ref: np.ndarray, rec: np.ndarray, data_range: float = 1.0) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Channels are averaged. Images smaller than the window fall back to global
    (single-window) statistics.
    """
    ref = np.asarray(ref, dtype=np.float64)
    rec = np.asarray(rec, dtype=np.float64)
    if ref.shape != rec.shape:
        raise ValueError(f"ssim: shape mismatch {ref.shape} vs {rec.shape}")
    if ref.ndim == 2:
        ref = ref[:, :, None]
        rec = rec[:, :, None]
    if ref.ndim != 3:
        raise ValueError(f"ssim: expected (H, W) or (H, W, C), got {ref.shape}")

    c1 = (_SSIM_K1 * data_range) ** 2
    c2 = (_SSIM_K2 * data_range) ** 2
    h, w, nc = ref.shape
    vals = []
    for c in range(nc):
        x, y = ref[:, :, c], rec[:, :, c]
        if h < _SSIM_WIN or w < _SSIM_WIN:
            mx, my = x.mean(), y.mean()
            vx, vy = x.var(), y.var()
            vxy = ((x - mx) * (y - my)).mean()
        else:
            k = _gaussian_kernel()
            mx, my = _windowed_mean(x, k), _windowed_mean(y, k)
            vx = _windowed_mean(x * x, k) - mx * mx
            vy = _windowed_mean(y * y, k) - my * my
            vxy = _windowed_mean(x * y, k) - mx * my
        num = (2 * mx * my + c1) * (2 * vxy + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def papr_ccdf(papr_db_values: np.ndarray, thresholds_db: np.ndarray) -> np.ndarray:
    """Empirical complementary CDF: fraction of packets with PAPR > threshold."""
    v = np.asarray(papr_db_values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError("papr_ccdf: no samples")
    t = np.asarray(thresholds_db, dtype=np.float64)
    return (v[None, :] > t.reshape(-1, 1)).mean(axis=1)
