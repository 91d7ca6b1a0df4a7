"""PSNR and SSIM, over whole images or restricted to a mask.

Images are ``[C, H, W]`` (or ``[H, W]``) arrays; SSIM is averaged over channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import correlate2d

from .errors import ContractError, DimensionError

PSNR_CAP = 99.0
MSE_FLOOR = 1e-10
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    region: str  # "full" or "masked"
    pixels: int  # pixel positions in the region (per channel)
    windows: int  # SSIM windows averaged


def _as_chw(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise DimensionError(f"expected [H, W] or [C, H, W], got shape {x.shape}")
    return x


def _pair(a, b):
    a, b = _as_chw(a), _as_chw(b)
    if a.shape != b.shape:
        raise DimensionError(f"shapes {a.shape} and {b.shape} differ")
    return a, b


def psnr_from_mse(err: float, max_val: float = 1.0) -> float:
    if err < MSE_FLOOR:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(max_val**2 / err))


def psnr(a, b, max_val: float = 1.0) -> float:
    if max_val <= 0:
        raise ContractError(f"max_val must be positive, got {max_val}")
    a, b = _pair(a, b)
    return psnr_from_mse(float(np.mean((a - b) ** 2)), max_val)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(a, b, max_val: float = 1.0) -> np.ndarray:
    """Per-window SSIM, shape ``[C, H - 10, W - 10]`` (valid windows only)."""
    a, b = _pair(a, b)
    if a.shape[1] < SSIM_WINDOW or a.shape[2] < SSIM_WINDOW:
        raise ContractError(f"image {a.shape[1:]} smaller than the {SSIM_WINDOW}px SSIM window")
    win = gaussian_window()
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    maps = []
    for x, y in zip(a, b):
        mu_x = correlate2d(x, win, mode="valid")
        mu_y = correlate2d(y, win, mode="valid")
        sxx = correlate2d(x * x, win, mode="valid") - mu_x**2
        syy = correlate2d(y * y, win, mode="valid") - mu_y**2
        sxy = correlate2d(x * y, win, mode="valid") - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
        maps.append(num / den)
    return np.stack(maps)


def ssim(a, b, max_val: float = 1.0) -> float:
    return float(ssim_map(a, b, max_val).mean())


def masked_metrics(a, b, mask, max_val: float = 1.0) -> MetricReport:
    """PSNR over masked pixels and SSIM over windows that touch the mask."""
    a, b = _pair(a, b)
    m = np.asarray(mask) != 0
    if m.ndim == 3:
        m = m.any(axis=0)
    if m.shape != a.shape[1:]:
        raise DimensionError(f"mask {m.shape} does not match image {a.shape[1:]}")
    if not m.any():
        raise ContractError("mask selects no pixels")
    err = float(np.mean(((a - b) ** 2)[:, m]))
    smap = ssim_map(a, b, max_val)
    touched = correlate2d(m.astype(np.float64), np.ones((SSIM_WINDOW, SSIM_WINDOW)), mode="valid") > 0
    return MetricReport(
        psnr=psnr_from_mse(err, max_val),
        ssim=float(smap[:, touched].mean()),
        region="full" if m.all() else "masked",
        pixels=int(m.sum()),
        windows=int(touched.sum()),
    )


def full_metrics(a, b, max_val: float = 1.0) -> MetricReport:
    a, b = _pair(a, b)
    smap = ssim_map(a, b, max_val)
    return MetricReport(psnr(a, b, max_val), float(smap.mean()), "full",
                        a.shape[1] * a.shape[2], smap.shape[1] * smap.shape[2])
