"""Differentiable channel models: power normalization, AWGN, slow Rayleigh fading.

All operations are pure functions of (inputs, seed) and run on torch tensors
so the channel sits inside autograd graphs; noise realizations never carry
gradients. Tensors may carry a leading batch dimension; the last dimension
holds the k complex symbols of one block.

Conventions (see docs/formats.md): SNR is defined on complex-symbol power,
SNR = P / sigma^2 with sigma^2 the total per-complex-symbol noise variance
(sigma^2/2 per real component). `snr_db = math.inf` is the distinguished
sentinel that disables noise exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch

from .errors import NearZeroFading, NonPositivePower, ZeroVector

# Version tag of the noise PRNG stream; bump if the draw order ever changes.
NOISE_STREAM_VERSION = 1


@dataclass
class ChannelSymbolBlock:
    """k complex channel symbols under an average power constraint."""

    symbols: torch.Tensor
    power_budget: float = 1.0

    def __post_init__(self):
        self.symbols = torch.as_tensor(self.symbols)
        if not self.symbols.is_complex():
            raise TypeError("symbols must be a complex tensor")
        if self.symbols.shape[-1] < 1:
            raise ValueError("block needs k >= 1 symbols")

    @property
    def k(self):
        return self.symbols.shape[-1]

    def average_power(self):
        return (self.symbols.abs() ** 2).mean(dim=-1)

    def numpy(self):
        return self.symbols.detach().cpu().numpy()


@dataclass
class ChannelState:
    """CSI: SNR in dB plus the fading gain when the model is 'rayleigh'."""

    snr_db: float
    fading_gain: Optional[complex] = None
    model: str = "awgn"

    def __post_init__(self):
        if self.model not in ("awgn", "rayleigh"):
            raise ValueError(f"unknown channel model {self.model!r}")
        if math.isnan(self.snr_db):
            raise ValueError("snr_db must not be NaN")
        if (self.fading_gain is not None) != (self.model == "rayleigh"):
            raise ValueError("fading_gain present iff model == 'rayleigh'")


def noise_generator(seed, block_index=0):
    """Seeded generator for the named noise stream of one (seed, block) pair."""
    mixed = (seed * 0x9E3779B1 + block_index * 0x85EBCA77 + NOISE_STREAM_VERSION) % (2**63)
    gen = torch.Generator()
    gen.manual_seed(mixed)
    return gen


def snr_db_to_noise_variance(snr_db, signal_power=1.0):
    """Total per-complex-symbol noise variance: P / 10^(snr_db/10)."""
    if signal_power <= 0:
        raise NonPositivePower(f"signal power {signal_power} must be > 0")
    return signal_power / 10.0 ** (snr_db / 10.0)


def normalize_symbols(raw, power_budget=1.0):
    """Rescale each block (last dim) to average power `power_budget` exactly."""
    if power_budget <= 0:
        raise NonPositivePower(f"power budget {power_budget} must be > 0")
    k = raw.shape[-1]
    total = (raw.abs() ** 2).sum(dim=-1, keepdim=True)
    if (total == 0).any():
        raise ZeroVector("cannot normalize an all-zero symbol vector")
    return raw * torch.sqrt(k * power_budget / total)


def normalize_power(raw, power_budget=1.0):
    """normalize_symbols wrapped into a ChannelSymbolBlock."""
    symbols = raw.symbols if isinstance(raw, ChannelSymbolBlock) else torch.as_tensor(raw)
    return ChannelSymbolBlock(normalize_symbols(symbols, power_budget), power_budget)


def _complex_noise(shape, sigma2, generator, dtype):
    real_dtype = torch.float64 if dtype in (torch.complex128, torch.float64) else torch.float32
    draws = torch.randn(*shape, 2, generator=generator, dtype=real_dtype)
    return torch.complex(draws[..., 0], draws[..., 1]) * math.sqrt(sigma2 / 2.0)


def awgn(symbols, snr_db, seed, power=1.0, block_index=0, generator=None):
    """y = z + n with n i.i.d. circularly-symmetric complex Gaussian.

    The noise draw is a constant in the autograd graph, so the output is
    differentiable with respect to `symbols`. snr_db = inf returns z exactly.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return symbols
    sigma2 = snr_db_to_noise_variance(snr_db, power)
    gen = generator if generator is not None else noise_generator(seed, block_index)
    noise = _complex_noise(symbols.shape, sigma2, gen, symbols.dtype)
    return symbols + noise.to(symbols.dtype)


def awgn_transmit(block, snr_db, seed, block_index=0):
    out = awgn(block.symbols, snr_db, seed, power=block.power_budget, block_index=block_index)
    return ChannelSymbolBlock(out, block.power_budget)


def rayleigh_fade(symbols, snr_db, seed, power=1.0, block_index=0, fading_gain=None):
    """y = h*z + n with one h ~ CN(0,1) per block; returns (y, h) for receiver CSI."""
    gen = noise_generator(seed, block_index)
    if fading_gain is None:
        n_blocks = symbols.shape[:-1] if symbols.dim() > 1 else (1,)
        hd = torch.randn(*n_blocks, 2, generator=gen, dtype=torch.float64)
        h = torch.complex(hd[..., 0], hd[..., 1]) / math.sqrt(2.0)
        if symbols.dim() == 1:
            h = h[0]
    else:
        h = torch.as_tensor(fading_gain)
    h = h.to(symbols.dtype)
    hz = symbols * (h.unsqueeze(-1) if symbols.dim() > 1 else h)
    out = awgn(hz, snr_db, seed, power=power, block_index=block_index, generator=gen)
    return out, h


def rayleigh_transmit(block, snr_db, seed, block_index=0, fading_gain=None):
    out, h = rayleigh_fade(
        block.symbols, snr_db, seed, power=block.power_budget,
        block_index=block_index, fading_gain=fading_gain,
    )
    return ChannelSymbolBlock(out, block.power_budget), h


def equalize(received, h):
    """Divide out the fading gain; raises NearZeroFading on an outage-level |h|."""
    h = torch.as_tensor(h)
    if (h.abs() < 1e-12).any():
        raise NearZeroFading(f"|h| too small to equalize: {h}")
    if isinstance(received, ChannelSymbolBlock):
        sym = received.symbols / (h.unsqueeze(-1) if received.symbols.dim() > 1 else h)
        return ChannelSymbolBlock(sym, received.power_budget)
    return received / (h.unsqueeze(-1) if received.dim() > 1 else h)
