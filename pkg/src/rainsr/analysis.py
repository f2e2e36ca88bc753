"""Image quality metrics and spectral diagnostics.

PSNR/SSIM operate on float images in [0, 1] (peak 1.0).  The spectral
helpers work on the ITU-R 601 luma and express frequencies as normalized
radius in cycles/pixel, so 0.5 is Nyquist along an axis.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .filters import LUMA601

PSNR_CAP_DB = 100.0

#: SSIM constants for unit dynamic range.
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def luma(img):
    """ITU-R 601 luma for H x W x 3 input; grayscale passes through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ np.asarray(LUMA601)
    if img.ndim == 3 and img.shape[2] == 1:
        return img[:, :, 0]
    raise ValueError(f"expected H x W [x 3] image, got shape {img.shape}")


def psnr(a, b, quantize_8bit=False):
    """Peak signal-to-noise ratio in dB, capped at 100.

    With quantize_8bit=True both images are clipped to [0, 1] and rounded
    to 8-bit levels first and the MSE is taken in those integer units with
    peak 255, matching the convention of most published benchmarks.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if quantize_8bit:
        a = np.round(np.clip(a, 0.0, 1.0) * 255.0)
        b = np.round(np.clip(b, 0.0, 1.0) * 255.0)
        peak = 255.0
    else:
        peak = 1.0
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(peak * peak / mse), PSNR_CAP_DB)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(x, w):
    # Valid-region Gaussian filtering; no padding, so border windows that
    # would need invented pixels are simply not scored.
    view = np.lib.stride_tricks.sliding_window_view(x, w.shape)
    return np.tensordot(view, w, axes=([2, 3], [0, 1]))


def ssim(a, b):
    """Mean SSIM over valid windows, averaged across channels.

    11 x 11 Gaussian weighting with sigma 1.5, K1 = 0.01, K2 = 0.03 on a
    unit dynamic range.  Identical inputs score exactly 1.0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"expected H x W [x C] image, got shape {a.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ValueError(
            f"image {a.shape[0]}x{a.shape[1]} smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    w = _gaussian_window()
    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    scores = []
    for ch in range(a.shape[2]):
        x = a[:, :, ch]
        y = b[:, :, ch]
        mu_x = _windowed_mean(x, w)
        mu_y = _windowed_mean(y, w)
        var_x = _windowed_mean(x * x, w) - mu_x * mu_x
        var_y = _windowed_mean(y * y, w) - mu_y * mu_y
        cov = _windowed_mean(x * y, w) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def _power_grid(img):
    """Per-coefficient normalized power |F_k|^2 / N^2 and radius grid.

    Normalization makes the sum over k != 0 equal the image variance
    (Parseval), so binned profiles integrate to a meaningful total.
    """
    y = luma(img)
    h, w = y.shape
    n = h * w
    f = np.fft.fft2(y)
    power = (f.real * f.real + f.imag * f.imag) / (n * n)
    fy = np.fft.fftfreq(h)
    fx = np.fft.fftfreq(w)
    radius = np.hypot(fy[:, None], fx[None, :])
    return power, radius


@dataclass(frozen=True)
class SpectrumProfile:
    """Azimuthally averaged power spectrum.

    radii holds normalized bin centers in [0, 0.5]; power is the mean
    per-coefficient power of the bin and counts the number of
    coefficients, so power @ counts recovers the total.  Bin 0 is the DC
    coefficient alone.
    """

    radii: np.ndarray
    power: np.ndarray
    counts: np.ndarray

    def total_power(self):
        return float(self.power @ self.counts)

    def nondc_power(self):
        return float(self.power[1:] @ self.counts[1:])


def radial_spectrum(img):
    power, radius = _power_grid(img)
    h, w = power.shape
    nbins = min(h, w) // 2 + 1
    if nbins < 2:
        raise ValueError(f"image {h}x{w} too small for a radial profile")
    # Corner frequencies beyond axis Nyquist fold into the last bin.
    idx = np.minimum(
        np.round(radius / 0.5 * (nbins - 1)).astype(np.intp), nbins - 1
    )
    sums = np.bincount(idx.ravel(), weights=power.ravel(), minlength=nbins)
    counts = np.bincount(idx.ravel(), minlength=nbins)
    return SpectrumProfile(
        radii=np.linspace(0.0, 0.5, nbins),
        power=sums / counts,
        counts=counts.astype(np.float64),
    )


def hf_energy_ratio(img, cutoff=0.25):
    """Fraction of non-DC spectral power beyond the cutoff radius.

    A constant image has no non-DC power and scores 0.
    """
    if not 0.0 < cutoff < 0.5:
        raise ValueError(f"cutoff must lie in (0, 0.5), got {cutoff}")
    power, radius = _power_grid(img)
    total = power.sum() - power[0, 0]
    if total <= 0.0:
        return 0.0
    high = power[radius > cutoff].sum()
    return float(high / total)


def write_spectrum_csv(profile, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["radius", "power", "log10_power"])
        for r, p in zip(profile.radii, profile.power):
            writer.writerow([f"{r:.6f}", f"{p:.12e}", f"{np.log10(p + 1e-300):.6f}"])


def write_metrics_csv(rows, path, header):
    """Write a list of row dicts as CSV with the given column order."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
