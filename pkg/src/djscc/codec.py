"""The learned encoder/decoder pair with SNR-conditioned attention stages.

Stage graph (documented in docs/formats.md): the encoder is five convolution
stages, 3x3 kernels, stride 2 at stages 1-2, widths (w0, w1, w2, w3, c_lat)
where c_lat = 2k / ((h/4) * (w/4)); PReLU after stages 1-4, linear final
stage. The decoder mirrors with transposed convolutions and a logistic output
scaled to [0, 1]. With conditioning="snr", an attention stage sits between
consecutive convolution stages on both sides: it pools features per channel,
appends the normalized SNR, predicts a per-channel mask in (0, 1) through two
fully-connected layers with a logistic output, and scales the features.

The flattened latent (channel-major) is split into num_layers contiguous
chunks in descending importance order; a transmitted prefix of l chunks is
zero-filled on the receiver side and the decoder sees per-layer availability
flags as constant input channels (only when num_layers > 1, so the
single-layer configuration reduces exactly to the unconditioned codec).
"""

from __future__ import annotations

import io
import json
import struct
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn

from . import channel as ch
from .data import ImageTensor
from .errors import (
    CheckpointVersionMismatch,
    LayerOutOfRange,
    NonFiniteActivation,
    OddLength,
    ShapeMismatch,
)

CHECKPOINT_MAGIC = b"DJC1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class CodecConfig:
    """Geometry and capacity of one codec: source shape, k symbols, layers."""

    height: int = 32
    width: int = 32
    channels: int = 3
    k: int = 256
    num_layers: int = 1
    fl_widths: tuple = (16, 32, 32, 32)
    conditioning: str = "none"
    snr_range_db: tuple = (0.0, 20.0)

    def __post_init__(self):
        if self.conditioning not in ("none", "snr"):
            raise ValueError(f"conditioning must be 'none' or 'snr', got {self.conditioning!r}")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.k < 1 or self.k % self.num_layers != 0:
            raise ValueError(f"k={self.k} must be a positive multiple of num_layers={self.num_layers}")
        if self.height % 4 or self.width % 4:
            raise ValueError("height and width must be divisible by 4 (two stride-2 stages)")
        if (2 * self.k) % self.spatial != 0:
            raise ValueError(f"2k={2 * self.k} must be divisible by the latent grid size {self.spatial}")
        if len(self.fl_widths) != 4 or any(w < 1 for w in self.fl_widths):
            raise ValueError("fl_widths must hold the four positive leading stage widths")
        if self.snr_range_db[0] > self.snr_range_db[1]:
            raise ValueError("snr_range_db must be (low, high) with low <= high")

    @property
    def n(self):
        return self.height * self.width * self.channels

    @property
    def rho(self):
        return self.k / self.n

    @property
    def spatial(self):
        return (self.height // 4) * (self.width // 4)

    @property
    def latent_channels(self):
        return (2 * self.k) // self.spatial

    @property
    def layer_size(self):
        return (2 * self.k) // self.num_layers

    def normalize_snr(self, snr_db):
        lo, hi = self.snr_range_db
        if hi == lo:
            return 0.5
        return min(max((snr_db - lo) / (hi - lo), 0.0), 1.0)


class AttentionFeature(nn.Module):
    """Scales a feature map channel-wise by a CSI-conditioned mask in (0, 1)."""

    def __init__(self, num_channels, context_extra=1):
        super().__init__()
        self.fc1 = nn.Linear(num_channels + context_extra, num_channels)
        self.act = nn.PReLU()
        self.fc2 = nn.Linear(num_channels, num_channels)
        self.mask_override = None  # test hook: bypass prediction with a fixed mask

    def forward(self, features, context):
        if self.mask_override is not None:
            mask = self.mask_override.to(features.dtype)
        else:
            pooled = features.mean(dim=(2, 3))
            mask = torch.sigmoid(self.fc2(self.act(self.fc1(torch.cat([pooled, context], dim=1)))))
        return features * mask[:, :, None, None]


class Encoder(nn.Module):
    def __init__(self, config: CodecConfig):
        super().__init__()
        w = list(config.fl_widths) + [config.latent_channels]
        chans = [config.channels] + w
        strides = [2, 2, 1, 1, 1]
        self.stages = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], 3, stride=strides[i], padding=1) for i in range(5)
        )
        self.acts = nn.ModuleList(nn.PReLU() for _ in range(4))
        if config.conditioning == "snr":
            self.attn = nn.ModuleList(AttentionFeature(w[i]) for i in range(4))
        else:
            self.attn = None

    def forward(self, x, context):
        for i in range(4):
            x = self.acts[i](self.stages[i](x))
            if self.attn is not None:
                x = self.attn[i](x, context)
        x = self.stages[4](x)
        return x.flatten(1)


class Decoder(nn.Module):
    def __init__(self, config: CodecConfig):
        super().__init__()
        self.config = config
        w = list(config.fl_widths)
        # latent channels first, then one constant flag channel per layer
        flag_ch = config.num_layers if config.num_layers > 1 else 0
        chans = [config.latent_channels + flag_ch, w[3], w[2], w[1], w[0], config.channels]
        strides = [1, 1, 1, 2, 2]
        self.stages = nn.ModuleList(
            nn.ConvTranspose2d(
                chans[i], chans[i + 1], 3, stride=strides[i], padding=1,
                output_padding=strides[i] - 1,
            )
            for i in range(5)
        )
        self.acts = nn.ModuleList(nn.PReLU() for _ in range(4))
        if config.conditioning == "snr":
            self.attn = nn.ModuleList(AttentionFeature(chans[i + 1]) for i in range(4))
        else:
            self.attn = None

    def forward(self, flat, flags, context):
        cfg = self.config
        x = flat.reshape(-1, cfg.latent_channels, cfg.height // 4, cfg.width // 4)
        if cfg.num_layers > 1:
            fmap = flags.to(x.dtype).reshape(1, cfg.num_layers, 1, 1)
            x = torch.cat([x, fmap.expand(x.shape[0], -1, x.shape[2], x.shape[3])], dim=1)
        for i in range(4):
            x = self.acts[i](self.stages[i](x))
            if self.attn is not None:
                x = self.attn[i](x, context)
        return torch.sigmoid(self.stages[4](x))


class JsccModel(nn.Module):
    """Encoder/decoder pair plus configuration and training metadata."""

    def __init__(self, config: CodecConfig, init_seed=0, meta=None):
        super().__init__()
        self.config = config
        self.meta = dict(meta or {})
        self.meta.setdefault("init_seed", init_seed)
        with torch.random.fork_rng():
            torch.manual_seed(init_seed)
            self.encoder = Encoder(config)
            self.decoder = Decoder(config)

    def context_for(self, snr_db, batch, dtype):
        s = self.config.normalize_snr(snr_db)
        return torch.full((batch, 1), s, dtype=dtype)

    def dtype(self):
        return next(self.parameters()).dtype


@dataclass
class LatentLayers:
    """Flat latent of length 2k split into num_layers prefix-decodable chunks."""

    values: np.ndarray
    num_layers: int
    flags: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size % self.num_layers != 0:
            raise ValueError("latent length must be a multiple of num_layers")
        if self.flags is None:
            self.flags = np.ones(self.num_layers)
        self.flags = np.asarray(self.flags, dtype=np.float64)

    @property
    def layer_size(self):
        return self.values.size // self.num_layers

    @property
    def layers(self):
        return [
            self.values[i * self.layer_size:(i + 1) * self.layer_size]
            for i in range(self.num_layers)
        ]


def prefix_mask(latent: LatentLayers, l):
    """Keep layers 1..l, zero the rest, and set the availability flags."""
    if not 1 <= l <= latent.num_layers:
        raise LayerOutOfRange(f"l={l} outside [1, {latent.num_layers}]")
    values = latent.values.copy()
    values[l * latent.layer_size:] = 0.0
    flags = np.zeros(latent.num_layers)
    flags[:l] = 1.0
    return LatentLayers(values, latent.num_layers, flags)


def mask_prefix_tensor(latent, l, num_layers):
    """Tensor variant used inside the training graph: (masked, flags)."""
    if not 1 <= l <= num_layers:
        raise LayerOutOfRange(f"l={l} outside [1, {num_layers}]")
    size = latent.shape[-1] // num_layers
    flags = torch.zeros(num_layers, dtype=latent.dtype)
    flags[:l] = 1.0
    if l == num_layers:
        return latent, flags
    keep = torch.zeros(latent.shape[-1], dtype=latent.dtype)
    keep[: l * size] = 1.0
    return latent * keep, flags


def pack_complex(values):
    """Interleaved real vector (..., 2k) -> complex (..., k); see unpack_complex."""
    if torch.is_tensor(values):
        if values.shape[-1] % 2:
            raise OddLength(f"length {values.shape[-1]} is odd")
        return torch.complex(values[..., 0::2], values[..., 1::2])
    values = np.asarray(values)
    if values.shape[-1] % 2:
        raise OddLength(f"length {values.shape[-1]} is odd")
    return values[..., 0::2] + 1j * values[..., 1::2]


def unpack_complex(symbols):
    if torch.is_tensor(symbols):
        out = torch.empty(*symbols.shape[:-1], 2 * symbols.shape[-1], dtype=symbols.real.dtype)
        out[..., 0::2] = symbols.real
        out[..., 1::2] = symbols.imag
        return out
    symbols = np.asarray(symbols)
    out = np.empty(symbols.shape[:-1] + (2 * symbols.shape[-1],), dtype=symbols.real.dtype)
    out[..., 0::2] = symbols.real
    out[..., 1::2] = symbols.imag
    return out


def _check_csi_range(model, snr_db):
    lo, hi = model.config.snr_range_db
    if np.isfinite(snr_db) and not lo <= snr_db <= hi:
        warnings.warn(f"CSI {snr_db} dB outside adaptation range [{lo}, {hi}] dB; running anyway")


def encode(image, csi, model: JsccModel):
    """Image -> (layered latent, power-normalized block of k complex symbols)."""
    pixels = np.asarray(getattr(image, "pixels", image), dtype=np.float64)
    cfg = model.config
    if pixels.shape != (cfg.height, cfg.width, cfg.channels):
        raise ShapeMismatch(f"image shape {pixels.shape} != {(cfg.height, cfg.width, cfg.channels)}")
    _check_csi_range(model, csi.snr_db)
    dtype = model.dtype()
    x = torch.from_numpy(pixels).permute(2, 0, 1).unsqueeze(0).to(dtype)
    with torch.no_grad():
        flat = model.encoder(x, model.context_for(csi.snr_db, 1, dtype))[0]
    if not torch.isfinite(flat).all():
        raise NonFiniteActivation("encoder produced NaN/Inf")
    latent = LatentLayers(flat.double().numpy(), cfg.num_layers)
    block = ch.normalize_power(pack_complex(flat.double()))
    return latent, block


def decode(received, l, csi, model: JsccModel):
    """Received block (zero-filled beyond the prefix) -> clamped image."""
    cfg = model.config
    symbols = received.symbols if isinstance(received, ch.ChannelSymbolBlock) else torch.as_tensor(received)
    if symbols.shape[-1] != cfg.k:
        raise ShapeMismatch(f"received {symbols.shape[-1]} symbols, expected k={cfg.k}")
    if not 1 <= l <= cfg.num_layers:
        raise LayerOutOfRange(f"l={l} outside [1, {cfg.num_layers}]")
    _check_csi_range(model, csi.snr_db)
    dtype = model.dtype()
    flat = unpack_complex(symbols).to(dtype)
    flat, flags = mask_prefix_tensor(flat, l, cfg.num_layers)
    with torch.no_grad():
        out = model.decoder(
            flat.unsqueeze(0), flags, model.context_for(csi.snr_db, 1, dtype)
        )[0]
    pixels = out.permute(1, 2, 0).double().numpy().clip(0.0, 1.0)
    return ImageTensor(pixels, id="decoded")


def run_pipeline(model, x, snr_db, l, noise_seed, channel_model="awgn",
                 block_index=0, channel_fn=None):
    """Differentiable end-to-end map image batch -> reconstruction batch.

    x: (B, c, h, w) in the model dtype. Packing, normalization, and the
    channel run in float64 so the power constraint holds to 1e-6 regardless
    of the training precision. Returns (x_hat, average block power).
    """
    cfg = model.config
    dtype = x.dtype
    context = model.context_for(snr_db, x.shape[0], dtype)
    latent = model.encoder(x, context)
    masked, flags = mask_prefix_tensor(latent, l, cfg.num_layers)
    k_tx = l * cfg.k // cfg.num_layers
    prefix = masked[:, : 2 * k_tx].double()
    z = ch.normalize_symbols(pack_complex(prefix))
    power = (z.abs() ** 2).mean(dim=-1)
    if channel_fn is not None:
        z_hat = channel_fn(z)
    elif channel_model == "awgn":
        z_hat = ch.awgn(z, snr_db, noise_seed, block_index=block_index)
    elif channel_model == "rayleigh":
        z_hat, h = ch.rayleigh_fade(z, snr_db, noise_seed, block_index=block_index)
        z_hat = ch.equalize(z_hat, h)
    else:
        raise ValueError(f"unknown channel model {channel_model!r}")
    rec = unpack_complex(z_hat).to(dtype)
    if k_tx < cfg.k:
        pad = torch.zeros(x.shape[0], 2 * (cfg.k - k_tx), dtype=dtype)
        rec = torch.cat([rec, pad], dim=1)
    x_hat = model.decoder(rec, flags, context)
    return x_hat, power


def reconstruct_images(model, pixel_batch, snr_db, l, noise_seed, channel_model="awgn"):
    """Inference helper: numpy (N, h, w, c) in -> clamped numpy (N, h, w, c) out."""
    dtype = model.dtype()
    x = torch.from_numpy(np.ascontiguousarray(pixel_batch)).permute(0, 3, 1, 2).to(dtype)
    with torch.no_grad():
        x_hat, _ = run_pipeline(model, x, snr_db, l, noise_seed, channel_model)
    return x_hat.permute(0, 2, 3, 1).double().numpy().clip(0.0, 1.0)


def save_checkpoint(path, model: JsccModel):
    """Write the DJC1 checkpoint: magic, u16 version, JSON header, f32 tensors."""
    state = model.state_dict()
    for name, tensor in state.items():
        if not torch.isfinite(tensor).all():
            raise NonFiniteActivation(f"refusing to save non-finite parameter {name}")
    header = json.dumps(
        {"config": asdict(model.config), "meta": model.meta}, sort_keys=True
    ).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<H", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        arr = tensor.detach().to(torch.float32).numpy()
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(arr.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointVersionMismatch(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionMismatch(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack_from("<I", blob, 6)
    header = json.loads(blob[10:10 + hlen])
    off = 10 + hlen
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        state[name] = torch.from_numpy(arr.copy())
    cfg_dict = header["config"]
    cfg_dict["fl_widths"] = tuple(cfg_dict["fl_widths"])
    cfg_dict["snr_range_db"] = tuple(cfg_dict["snr_range_db"])
    model = JsccModel(CodecConfig(**cfg_dict), meta=header["meta"])
    model.load_state_dict(state)
    return model
