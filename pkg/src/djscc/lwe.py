"""Lattice-based symbol encryption and the encrypted transmission pipeline.

The scheme is Regev-style public-key encryption over Z_q: the public key is
(A, b = A s + e) with discrete-Gaussian e; each plaintext symbol is encrypted
with a fresh random selection vector r of fixed Hamming weight
(u = A^T r, v = b^T r + round(q/p) m). Decryption rounds
(v - s.u) * p / q and survives bounded accumulated error; failures surface as
symbol noise rather than hard errors. Default parameters are sized for a
demonstration failure rate (< 1e-3 per symbol), NOT for certified security.

For transmission, ciphertext integers are serialized into base-`base` digits
carried on a unit-power amplitude constellation (two levels per complex
symbol), hard-demapped per digit, and reassembled mod q. The end-to-end
perturbation seen by the codec is the compound of quantization error,
residual decryption failures, and digit demap errors.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import torch

from . import channel as ch
from .codec import pack_complex, unpack_complex
from .errors import BadParams, KeyFileCorrupt, MessageOutOfRange

KEYFILE_MAGIC = b"DJK1"
KEYFILE_VERSION = 1
ENCRYPT_CHUNK = 20_000


def _is_prime(n):
    if n < 2:
        return False
    for d in range(2, int(math.isqrt(n)) + 1):
        if n % d == 0:
            return False
    return True


@dataclass(frozen=True)
class LweParams:
    dim: int = 512
    q: int = 12289
    p: int = 64
    error_sigma: float = 3.2
    pack: int = 1024
    selection_weight: int = 64

    def __post_init__(self):
        if self.dim < 1 or self.pack < 1:
            raise BadParams("dim and pack must be >= 1")
        if self.p < 2:
            raise BadParams("plaintext modulus p must be >= 2")
        if not _is_prime(self.q):
            raise BadParams(f"q={self.q} must be prime")
        if not 0 < self.selection_weight <= self.pack:
            raise BadParams("selection_weight must lie in [1, pack]")
        # decryption headroom: q/p must dominate the accumulated error scale
        bound = 4.0 * self.error_sigma * math.sqrt(self.selection_weight)
        if self.q / self.p <= bound:
            raise BadParams(
                f"q/p = {self.q / self.p:.1f} <= 4*sigma*sqrt(weight) = {bound:.1f}; "
                "decryption would fail too often"
            )

    @property
    def delta(self):
        return round(self.q / self.p)


@dataclass
class KeyPair:
    matrix: np.ndarray   # A, (pack, dim) over Z_q
    vector: np.ndarray   # b = A s + e, (pack,) over Z_q
    secret: np.ndarray   # s, (dim,) over Z_q
    params: LweParams


@dataclass
class SymbolCiphertext:
    u: np.ndarray  # (num_symbols, dim) over Z_q
    v: np.ndarray  # (num_symbols,) over Z_q


def keygen(params: LweParams, seed=0):
    """Sample A, s uniform over Z_q and e from the rounded Gaussian, b = As + e."""
    rng = np.random.Generator(np.random.PCG64(seed))
    A = rng.integers(0, params.q, size=(params.pack, params.dim), dtype=np.int64)
    s = rng.integers(0, params.q, size=params.dim, dtype=np.int64)
    e = np.rint(rng.normal(0.0, params.error_sigma, size=params.pack)).astype(np.int64)
    b = (A @ s + e) % params.q
    return KeyPair(A, b, s, params)


def _sample_selection(rng, count, params):
    """(count, weight) distinct column indices per row, via random-key top-w."""
    keys = rng.random((count, params.pack), dtype=np.float32)
    return np.argpartition(keys, params.selection_weight, axis=1)[:, : params.selection_weight]


def _selection_matrix(indices, pack):
    count, w = indices.shape
    indptr = np.arange(count + 1, dtype=np.int64) * w
    return sp.csr_matrix(
        (np.ones(count * w), indices.ravel().astype(np.int64), indptr),
        shape=(count, pack),
    )


def encrypt(key: KeyPair, messages, seed=0, selection_indices=None):
    """Per symbol j: u_j = A^T r_j, v_j = b^T r_j + round(q/p) m_j (mod q)."""
    params = key.params
    m = np.asarray(messages, dtype=np.int64)
    if m.ndim != 1:
        raise MessageOutOfRange("messages must be a 1-d integer vector")
    if (m < 0).any() or (m >= params.p).any():
        raise MessageOutOfRange(f"messages must lie in [0, {params.p})")
    rng = np.random.Generator(np.random.PCG64(seed))
    Af = key.matrix.astype(np.float64)
    bf = key.vector.astype(np.float64)
    u = np.empty((m.size, params.dim), dtype=np.int64)
    v = np.empty(m.size, dtype=np.int64)
    for start in range(0, m.size, ENCRYPT_CHUNK):
        stop = min(start + ENCRYPT_CHUNK, m.size)
        if selection_indices is None:
            idx = _sample_selection(rng, stop - start, params)
        else:
            idx = np.asarray(selection_indices)[start:stop]
        if idx.shape[1] == 0:
            u[start:stop] = 0
            v[start:stop] = (params.delta * m[start:stop]) % params.q
            continue
        R = _selection_matrix(idx, params.pack)
        u[start:stop] = (R @ Af).astype(np.int64) % params.q
        v[start:stop] = ((R @ bf).astype(np.int64) + params.delta * m[start:stop]) % params.q
    return SymbolCiphertext(u, v)


def decrypt(secret, ct: SymbolCiphertext, params: LweParams):
    """m_hat = round((v - s.u) p / q) mod p; exact while errors stay < q/(2p)."""
    # float64 dot is exact here: |u_i s_i| < q^2 ~ 2^28, dim-long sums < 2^53
    inner = ct.u.astype(np.float64) @ secret.astype(np.float64)
    d = (ct.v - inner.astype(np.int64)) % params.q
    return np.rint(d * (params.p / params.q)).astype(np.int64) % params.p


def quantize_symbols(block, p, clip):
    """Clamp each real component to [-clip, clip], uniform-quantize to Z_p."""
    symbols = block.symbols if isinstance(block, ch.ChannelSymbolBlock) else block
    if torch.is_tensor(symbols):
        symbols = symbols.detach().cpu().numpy()
    real = unpack_complex(np.asarray(symbols))
    width = 2.0 * clip / p
    clamped = np.clip(real, -clip, clip)
    return np.clip(np.floor((clamped + clip) / width), 0, p - 1).astype(np.int64)


def dequantize_symbols(values, p, clip):
    """Bin indices back to bin centers in [-clip, clip]."""
    width = 2.0 * clip / p
    return -clip + (np.asarray(values, dtype=np.float64) + 0.5) * width


def constellation_digits(q, base):
    count = 1
    while base**count < q:
        count += 1
    return count


def map_to_amplitudes(values, q, base=2):
    """Z_q integers -> little-endian base digits -> centered unit-power levels."""
    values = np.asarray(values, dtype=np.int64)
    digits_n = constellation_digits(q, base)
    digits = np.empty((values.size, digits_n), dtype=np.int64)
    rest = values.copy()
    for t in range(digits_n):
        digits[:, t] = rest % base
        rest //= base
    gamma = math.sqrt(6.0 / (base**2 - 1))  # two levels per complex symbol, power 1
    return ((digits - (base - 1) / 2.0) * gamma).ravel()


def demap_amplitudes(levels, q, base=2):
    """Hard per-digit nearest-level decision, reassembled mod q."""
    digits_n = constellation_digits(q, base)
    gamma = math.sqrt(6.0 / (base**2 - 1))
    digits = np.clip(np.rint(np.asarray(levels) / gamma + (base - 1) / 2.0), 0, base - 1)
    digits = digits.reshape(-1, digits_n).astype(np.int64)
    weights = base ** np.arange(digits_n, dtype=np.int64)
    return (digits @ weights) % q


@dataclass
class SecureTransmitStats:
    symbol_error_rate: float
    wire_error_rate: float
    perturbation_variance: float
    quantization_floor: float
    channel_uses: int


def secure_transmit(block, key: KeyPair, snr_db, seed=0, clip=3.0, base=2,
                    decrypt_key=None, return_stats=False):
    """quantize -> encrypt -> amplitude constellation -> AWGN -> demap -> decrypt -> dequantize.

    Residual errors appear as additive perturbation on the returned block.
    `decrypt_key` may carry a mismatched secret to demonstrate key dependence.
    """
    params = key.params
    symbols = block.symbols if isinstance(block, ch.ChannelSymbolBlock) else torch.as_tensor(block)
    plain = quantize_symbols(symbols, params.p, clip)
    ct = encrypt(key, plain, seed=seed)

    wire = np.concatenate([ct.u.ravel(), ct.v])
    levels = map_to_amplitudes(wire, params.q, base)
    if levels.size % 2:
        levels = np.concatenate([levels, [0.0]])
    tx = pack_complex(torch.from_numpy(levels))
    rx = ch.awgn(tx, snr_db, seed + 1)
    levels_rx = unpack_complex(rx).numpy()[: wire.size * constellation_digits(params.q, base)]
    wire_rx = demap_amplitudes(levels_rx, params.q, base)

    n = plain.size
    u_rx = wire_rx[: n * params.dim].reshape(n, params.dim)
    v_rx = wire_rx[n * params.dim:]
    secret = (decrypt_key or key).secret
    plain_rx = decrypt(secret, SymbolCiphertext(u_rx, v_rx), params)
    real_rx = dequantize_symbols(plain_rx, params.p, clip)
    out = ch.ChannelSymbolBlock(pack_complex(torch.from_numpy(real_rx)),
                                getattr(block, "power_budget", 1.0))
    if not return_stats:
        return out
    real_in = unpack_complex(np.asarray(symbols.detach().cpu().numpy()))
    stats = SecureTransmitStats(
        symbol_error_rate=float(np.mean(plain_rx != plain)),
        wire_error_rate=float(np.mean(wire_rx != wire)),
        perturbation_variance=float(np.mean((real_rx - np.clip(real_in, -clip, clip)) ** 2)),
        quantization_floor=clip**2 / (3.0 * params.p**2),
        channel_uses=(levels.size + 1) // 2,
    )
    return out, stats


def save_keyfile(path, key: KeyPair):
    """DJK1 key file: magic, u16 version, JSON params header, u32 LE arrays A, b, s."""
    header = json.dumps(
        {
            "dim": key.params.dim, "q": key.params.q, "p": key.params.p,
            "error_sigma": key.params.error_sigma, "pack": key.params.pack,
            "selection_weight": key.params.selection_weight,
        },
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(KEYFILE_MAGIC)
        fh.write(struct.pack("<H", KEYFILE_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for arr in (key.matrix, key.vector, key.secret):
            fh.write(arr.astype("<u4").tobytes())


def load_keyfile(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != KEYFILE_MAGIC:
        raise KeyFileCorrupt(f"{path}: bad magic {blob[:4]!r}")
    try:
        (version,) = struct.unpack_from("<H", blob, 4)
        if version != KEYFILE_VERSION:
            raise KeyFileCorrupt(f"{path}: unsupported version {version}")
        (hlen,) = struct.unpack_from("<I", blob, 6)
        params = LweParams(**json.loads(blob[10:10 + hlen]))
        off = 10 + hlen
        sizes = (params.pack * params.dim, params.pack, params.dim)
        arrays = []
        for size in sizes:
            arr = np.frombuffer(blob, dtype="<u4", count=size, offset=off)
            if arr.size != size:
                raise KeyFileCorrupt(f"{path}: truncated arrays")
            arrays.append(arr.astype(np.int64))
            off += 4 * size
    except (struct.error, json.JSONDecodeError, TypeError, ValueError) as ex:
        raise KeyFileCorrupt(f"{path}: {ex}") from ex
    A = arrays[0].reshape(params.pack, params.dim)
    return KeyPair(A, arrays[1], arrays[2], params)
