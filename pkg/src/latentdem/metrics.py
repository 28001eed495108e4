"""Image and kernel quality metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 100.0


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    mse: float
    mnc: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def mse_grid(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    err = mse_grid(a, b)
    if err == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(peak * peak / err)))


def ssim(a, b, peak: float = 1.0, window: int = 8) -> float:
    """Mean SSIM over all ``window`` x ``window`` sliding windows (uniform weights)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < window:
        raise ValueError(f"image smaller than the {window}x{window} SSIM window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    wa = sliding_window_view(a, (window, window))
    wb = sliding_window_view(b, (window, window))
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    var_a = wa.var(axis=(-1, -2))
    var_b = wb.var(axis=(-1, -2))
    cov = (wa * wb).mean(axis=(-1, -2)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def _pad_to(k, shape):
    out = np.zeros(shape)
    out[: k.shape[0], : k.shape[1]] = k
    return out


def mnc(k_hat, k_true) -> float:
    """Maximum over circular shifts of the normalized correlation of two kernels."""
    a = np.asarray(k_hat, dtype=np.float64)
    b = np.asarray(k_true, dtype=np.float64)
    shape = (max(a.shape[0], b.shape[0]), max(a.shape[1], b.shape[1]))
    a = _pad_to(a, shape)
    b = _pad_to(b, shape)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("MNC undefined for an all-zero kernel")
    corr = np.real(np.fft.ifft2(np.conj(np.fft.fft2(a)) * np.fft.fft2(b)))
    # Cauchy-Schwarz bounds the value by 1; trim FFT round-off above it
    return min(float(corr.max() / (na * nb)), 1.0)


def report(x_hat, x_true, k_hat=None, k_true=None, peak: float = 1.0) -> MetricReport:
    m = MetricReport(psnr(x_hat, x_true, peak), ssim(x_hat, x_true, peak), mse_grid(x_hat, x_true))
    if k_hat is not None and k_true is not None:
        m.mnc = mnc(k_hat, k_true)
    return m
