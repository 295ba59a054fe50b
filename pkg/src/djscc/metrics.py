"""Reconstruction quality measures: PSNR and multi-scale SSIM.

PSNR uses MAX = 1.0 (images live in [0, 1]); a zero-MSE pair returns the
+inf sentinel, serialized as "inf". MS-SSIM follows the standard multi-scale
construction with the documented constants (docs/formats.md): Gaussian window
11 sigma 1.5, scale weights (0.0448, 0.2856, 0.3001, 0.2363, 0.1333),
C1 = (0.01 MAX)^2, C2 = (0.03 MAX)^2, 2x2 mean-pool downsampling. Five scales
need min(h, w) >= 176; images down to 32 px fall back to 3 scales with the
first three weights renormalized, truncating the window where a scale is
smaller than 11. Per-scale means are clamped at 0 before exponentiation.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import correlate

from .errors import ImageTooSmall, ShapeMismatch

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5


def _as_pixels(x):
    pixels = getattr(x, "pixels", x)
    return np.asarray(pixels, dtype=np.float64)


def psnr(x, x_hat, max_val=1.0):
    """10 log10(MAX^2 / MSE) in dB; math.inf when the images are identical."""
    a, b = _as_pixels(x), _as_pixels(x_hat)
    if a.shape != b.shape:
        raise ShapeMismatch(f"psnr: {a.shape} vs {b.shape}")
    if max_val <= 0:
        raise ValueError("max_val must be positive")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val**2 / mse)


def gaussian_window(size=WINDOW_SIZE, sigma=WINDOW_SIGMA):
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_pass(a, b, c1, c2, window):
    mu_a = correlate(a, window, mode="valid", method="direct")
    mu_b = correlate(b, window, mode="valid", method="direct")
    var_a = correlate(a * a, window, mode="valid", method="direct") - mu_a**2
    var_b = correlate(b * b, window, mode="valid", method="direct") - mu_b**2
    cov = correlate(a * b, window, mode="valid", method="direct") - mu_a * mu_b
    cs_map = (2.0 * cov + c2) / (var_a + var_b + c2)
    lum_map = (2.0 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    return float(np.mean(cs_map)), float(np.mean(lum_map * cs_map))


def _downsample2(a):
    h, w = a.shape
    a = a[: h - h % 2, : w - w % 2]
    return (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2]) / 4.0


def _msssim_channel(a, b, scales, weights, max_val):
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    value = 1.0
    for level in range(scales):
        size = min(WINDOW_SIZE, min(a.shape))
        if size % 2 == 0:
            size -= 1
        window = gaussian_window(size=size)
        cs, ssim_full = _ssim_pass(a, b, c1, c2, window)
        score = ssim_full if level == scales - 1 else cs
        value *= max(score, 0.0) ** weights[level]
        if level < scales - 1:
            a, b = _downsample2(a), _downsample2(b)
    return value


def ms_ssim(x, x_hat, max_val=1.0):
    """Multi-scale SSIM in [0, 1]; channels are scored independently and averaged."""
    a, b = _as_pixels(x), _as_pixels(x_hat)
    if a.shape != b.shape:
        raise ShapeMismatch(f"ms_ssim: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    min_side = min(a.shape[0], a.shape[1])
    if min_side >= 2 ** 4 * WINDOW_SIZE:
        scales, weights = 5, MSSSIM_WEIGHTS
    elif min_side >= 32:
        head = MSSSIM_WEIGHTS[:3]
        scales, weights = 3, tuple(w / sum(head) for w in head)
    else:
        raise ImageTooSmall(f"min side {min_side} < 32")
    per_channel = [
        _msssim_channel(a[:, :, c], b[:, :, c], scales, weights, max_val)
        for c in range(a.shape[2])
    ]
    return float(np.mean(per_channel))


@dataclass
class QualityReport:
    """Per-image quality values plus aggregates (mean PSNR excludes +inf)."""

    metric_rows: list = field(default_factory=list)  # (id, psnr_db, ms_ssim)

    def add(self, image_id, psnr_db, msssim):
        self.metric_rows.append((image_id, float(psnr_db), float(msssim)))

    @property
    def psnr_db(self):
        finite = [p for _, p, _ in self.metric_rows if math.isfinite(p)]
        if not finite:
            return math.inf if self.metric_rows else math.nan
        return float(np.mean(finite))

    @property
    def ms_ssim(self):
        return float(np.mean([m for _, _, m in self.metric_rows]))

    @property
    def inf_count(self):
        return sum(1 for _, p, _ in self.metric_rows if math.isinf(p))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "psnr_db", "ms_ssim"])
            for image_id, p, m in self.metric_rows:
                writer.writerow([image_id, "inf" if math.isinf(p) else f"{p:.6f}", f"{m:.6f}"])

    def aggregate_json(self):
        return json.dumps(
            {
                "psnr_db": "inf" if math.isinf(self.psnr_db) else round(self.psnr_db, 6),
                "ms_ssim": round(self.ms_ssim, 6),
                "images": len(self.metric_rows),
                "psnr_inf_excluded": self.inf_count,
            },
            sort_keys=True,
        )
