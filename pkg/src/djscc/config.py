"""Flat key-value configuration files ("key = value" lines, '#' comments).

Recognized keys are documented in docs/formats.md under data.*, channel.*,
codec.*, and train.*. DJL_DATA in the environment overrides data.path.
"""

from __future__ import annotations

import os

from .codec import CodecConfig
from .training import TrainConfig


def load_config(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _floats(text):
    return tuple(float(v) for v in text.replace(":", ",").split(",") if v)


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v)


def parse_shape(text):
    parts = tuple(int(v) for v in text.lower().replace("x", ",").split(",") if v)
    if len(parts) != 3:
        raise ValueError(f"shape must be HxWxC, got {text!r}")
    return parts


def data_path(cfg):
    return os.environ.get("DJL_DATA") or cfg.get("data.path")


def codec_config_from(cfg):
    shape = parse_shape(cfg.get("data.shape", "32x32x3"))
    return CodecConfig(
        height=shape[0], width=shape[1], channels=shape[2],
        k=int(cfg.get("codec.k", 256)),
        num_layers=int(cfg.get("codec.layers", 1)),
        fl_widths=_ints(cfg.get("codec.fl_widths", "16,32,32,32")),
        conditioning=cfg.get("codec.conditioning", "none"),
        snr_range_db=_floats(cfg.get("codec.snr_range", "0,20")),
    )


def train_config_from(cfg, seed=None, out_dir=None):
    codec = codec_config_from(cfg)
    checkpoint = cfg.get("train.checkpoint", "model.djc")
    log = cfg.get("train.log", "")
    if out_dir:
        checkpoint = os.path.join(out_dir, os.path.basename(checkpoint))
        log = os.path.join(out_dir, os.path.basename(log)) if log else log
    return TrainConfig(
        codec=codec,
        snr_range_db=_floats(cfg.get("train.snr_range", "0,20")),
        epochs=int(cfg.get("train.epochs", 10)),
        batch_size=int(cfg.get("train.batch_size", 64)),
        learning_rate=float(cfg.get("train.learning_rate", 1e-3)),
        loss=cfg.get("train.loss", "mse"),
        seed=int(cfg.get("train.seed", 0)) if seed is None else seed,
        checkpoint_path=checkpoint,
        log_path=log or None,
        probe_snrs_db=_floats(cfg.get("train.probe_snrs", "1,10,19")),
        channel_model=cfg.get("channel.model", "awgn"),
        scheme=cfg.get("train.scheme", "classical"),
    )


def split_fractions(cfg):
    fracs = _floats(cfg.get("data.split", "0.8,0.1,0.1"))
    if len(fracs) != 3:
        raise ValueError("data.split must hold three fractions")
    return fracs
