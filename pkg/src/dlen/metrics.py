"""Image quality metrics: MSE, PSNR, and two SSIM variants.

All metrics operate on float arrays in a known dynamic range (normally
[0, 1] after save-time clamping, so R = L = 1).  ``ssim_global`` evaluates
the similarity formula once with whole-image statistics; ``ssim_windowed``
applies the same formula per 11x11 Gaussian-weighted window (sigma = 1.5,
valid-region sliding) and is the reporting default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .tensor import ContractViolation

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _check_pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"metric shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    """Mean squared error, averaged over pixels and channels."""
    a, b = _check_pair(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr(a, b, r: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give +inf."""
    if r <= 0:
        raise ContractViolation(f"psnr dynamic range must be positive, got {r}")
    m = mse(a, b)
    if m == 0.0:
        return float("inf")
    return float(10.0 * np.log10(r * r / m))


def _channel_stack(a: np.ndarray) -> np.ndarray:
    """View an image as [C, H, W] regardless of HxW / HxWxC / CxHxW layout."""
    if a.ndim == 2:
        return a[None]
    if a.ndim == 3 and a.shape[-1] in (1, 3) and a.shape[0] not in (1, 3):
        return np.moveaxis(a, -1, 0)
    if a.ndim == 3:
        return a
    raise ContractViolation(f"expected a 2-d or 3-d image, got shape {a.shape}")


def ssim_global(a, b, l: float = 1.0) -> float:
    """Single-shot SSIM from whole-image statistics, averaged over channels."""
    a, b = _check_pair(a, b)
    if l <= 0:
        raise ContractViolation(f"ssim dynamic range must be positive, got {l}")
    c1 = (SSIM_K1 * l) ** 2
    c2 = (SSIM_K2 * l) ** 2
    vals = []
    for x, y in zip(_channel_stack(a), _channel_stack(b)):
        mx, my = x.mean(), y.mean()
        vx, vy = x.var(), y.var()
        cov = ((x - mx) * (y - my)).mean()
        num = (2 * mx * my + c1) * (2 * cov + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        vals.append(num / den)
    return float(np.mean(vals))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-d Gaussian weights used by the windowed SSIM."""
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_means(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(x, w.shape)
    return np.tensordot(view, w, axes=([2, 3], [0, 1]))


def ssim_windowed(a, b, l: float = 1.0) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows and channels."""
    a, b = _check_pair(a, b)
    if l <= 0:
        raise ContractViolation(f"ssim dynamic range must be positive, got {l}")
    ca, cb = _channel_stack(a), _channel_stack(b)
    h, wd = ca.shape[1], ca.shape[2]
    if h < SSIM_WINDOW or wd < SSIM_WINDOW:
        raise ContractViolation(
            f"image {h}x{wd} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window")
    w = gaussian_window()
    c1 = (SSIM_K1 * l) ** 2
    c2 = (SSIM_K2 * l) ** 2
    vals = []
    for x, y in zip(ca, cb):
        mx = _windowed_means(x, w)
        my = _windowed_means(y, w)
        vx = _windowed_means(x * x, w) - mx * mx
        vy = _windowed_means(y * y, w) - my * my
        cov = _windowed_means(x * y, w) - mx * my
        num = (2 * mx * my + c1) * (2 * cov + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


@dataclass
class MetricReport:
    """Per-image PSNR/SSIM rows plus their arithmetic means."""

    ssim_kind: str = "windowed"
    rows: List[Tuple[str, float, float]] = field(default_factory=list)

    def add(self, name: str, psnr_db: float, ssim: float) -> None:
        self.rows.append((name, float(psnr_db), float(ssim)))

    @property
    def count(self) -> int:
        return len(self.rows)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows])) if self.rows else float("nan")

    def to_tsv(self) -> str:
        lines = ["name\tpsnr_db\tssim"]
        for name, p, s in self.rows:
            lines.append(f"{name}\t{'inf' if np.isinf(p) else format(p, '.6f')}\t{s:.6f}")
        lines.append(f"MEAN\t{self.mean_psnr:.6f}\t{self.mean_ssim:.6f}")
        return "\n".join(lines) + "\n"

    def to_keyvalues(self) -> str:
        return (f"count={self.count}\nssim_kind={self.ssim_kind}\n"
                f"mean_psnr_db={self.mean_psnr:.6f}\nmean_ssim={self.mean_ssim:.6f}\n")
