"""Separation-based digital baseline: block-DCT source coder behind an
idealized capacity-achieving channel code.

The rate budget at a design SNR is the Shannon capacity of k complex symbols.
Each image is coded with the largest quantizer bit depth whose ideal
entropy-coded size fits the budget (size = empirical symbol entropy of the
quantized coefficients; adaptive per-image coding is assumed, so the report
matches the empirical entropy by construction). Above the design SNR the
bits arrive intact; below it the channel code fails and the receiver shows
the dataset-mean image: the cliff effect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from .errors import BudgetTooSmall
from .metrics import QualityReport, ms_ssim, psnr

BLOCK = 8
COEFF_RANGE = 16.0  # orthonormal 8x8 DCT of [0,1] pixels stays inside [-8, 8]
HEADER_BITS = 16.0  # bit-depth field plus framing, charged per image


@dataclass(frozen=True)
class SeparationConfig:
    design_snr_db: float = 10.0
    k: int = 256
    quantizer_bits_grid: tuple = (1, 2, 3, 4, 5, 6, 7, 8)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not math.isfinite(self.design_snr_db):
            raise ValueError("design_snr_db must be finite")
        if not self.quantizer_bits_grid:
            raise ValueError("quantizer_bits_grid must be non-empty")


def capacity_bits(snr_db, k):
    """Shannon budget of k complex symbols: k log2(1 + SNR_linear)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if snr_db == -math.inf:
        return 0.0
    return k * math.log2(1.0 + 10.0 ** (snr_db / 10.0))


def _to_blocks(pixels):
    h, w, c = pixels.shape
    blocks = []
    for ci in range(c):
        for by in range(0, h, BLOCK):
            for bx in range(0, w, BLOCK):
                blocks.append(pixels[by:by + BLOCK, bx:bx + BLOCK, ci])
    return np.stack(blocks)


def _from_blocks(blocks, shape):
    h, w, c = shape
    out = np.empty(shape)
    i = 0
    for ci in range(c):
        for by in range(0, h, BLOCK):
            for bx in range(0, w, BLOCK):
                out[by:by + BLOCK, bx:bx + BLOCK, ci] = blocks[i]
                i += 1
    return out


def code_image(pixels, bits):
    """DCT-quantize-reconstruct at one bit depth: (coded size in bits, image)."""
    step = COEFF_RANGE / 2.0**bits
    coeffs = dctn(_to_blocks(pixels), axes=(1, 2), norm="ortho")
    q = np.rint(coeffs / step).astype(np.int64)
    _, counts = np.unique(q, return_counts=True)
    probs = counts / counts.sum()
    entropy = float(-(probs * np.log2(probs)).sum())
    size = entropy * q.size + HEADER_BITS
    recon = _from_blocks(idctn(q * step, axes=(1, 2), norm="ortho"), pixels.shape)
    return size, np.clip(recon, 0.0, 1.0)


def separation_eval(images, snr_test_db, config: SeparationConfig, mean_image=None):
    """QualityReport of the digital baseline at one test SNR.

    mean_image is the outage reconstruction (training-set mean); defaults to
    the mean of `images` when not provided.
    """
    from .data import stack_pixels

    pixels = stack_pixels(images)
    ids = [im.id for im in images]
    budget = capacity_bits(config.design_snr_db, config.k)
    if budget < HEADER_BITS:
        raise BudgetTooSmall(
            f"budget {budget:.1f} bits below header cost {HEADER_BITS}; always outage"
        )
    fallback = np.asarray(mean_image if mean_image is not None else pixels.mean(axis=0))
    report = QualityReport()
    delivered = snr_test_db >= config.design_snr_db
    for img, image_id in zip(pixels, ids):
        if delivered:
            recon = None
            for bits in sorted(config.quantizer_bits_grid):
                size, candidate = code_image(img, bits)
                if size <= budget:
                    recon = candidate
            if recon is None:  # nothing fits: outage even above design SNR
                recon = fallback
        else:
            recon = fallback
        report.add(image_id, psnr(img, recon), ms_ssim(img, recon))
    return report
