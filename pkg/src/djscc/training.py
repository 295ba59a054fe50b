"""End-to-end optimization of the codec through the noisy channel.

Each batch samples one training SNR uniformly from the configured range and
one layer prefix uniformly from {1..L}; with L = 1 and a degenerate SNR range
this reduces exactly to fixed-SNR single-rate training. Loss is per-pixel MSE.
The optimizer is Adam at a flat learning rate; divergence (non-finite loss)
aborts instead of being papered over.
"""

from __future__ import annotations

import copy
import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import codec as cd
from .errors import BadRange, DiskWriteFailure, DivergedLoss
from .metrics import QualityReport, ms_ssim, psnr

NOISE_SEED_STRIDE = 1_000_003


@dataclass
class TrainConfig:
    codec: cd.CodecConfig = field(default_factory=cd.CodecConfig)
    snr_range_db: tuple = (0.0, 20.0)
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    loss: str = "mse"
    seed: int = 0
    checkpoint_path: str = "model.djc"
    log_path: str = None
    probe_snrs_db: tuple = (1.0, 10.0, 19.0)
    channel_model: str = "awgn"
    msssim_probe_count: int = 32  # val images used for the MS-SSIM probe; 0 skips it
    scheme: str = "classical"

    def __post_init__(self):
        if self.snr_range_db[0] > self.snr_range_db[1]:
            raise BadRange(f"snr range {self.snr_range_db} has low > high")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("epochs/batch_size must be >= 1 and learning_rate >= 0")
        if self.loss != "mse":
            raise ValueError(f"unsupported loss {self.loss!r}")


def sample_training_snr(snr_range_db, rng):
    lo, hi = snr_range_db
    if lo > hi:
        raise BadRange(f"snr range ({lo}, {hi}) has low > high")
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def sample_layer_count(num_layers, rng):
    if num_layers < 1:
        raise BadRange("num_layers must be >= 1")
    return int(rng.integers(1, num_layers + 1))


def train_step(model, optimizer, batch, snr_db, l, noise_seed,
               channel_model="awgn", channel_fn=None):
    """One forward/backward/update pass; returns the scalar loss."""
    x_hat, power = cd.run_pipeline(
        model, batch, snr_db, l, noise_seed,
        channel_model=channel_model, channel_fn=channel_fn,
    )
    assert (power - 1.0).abs().max().item() < 1e-6, "power constraint violated in step"
    loss = ((batch - x_hat) ** 2).mean()
    if not torch.isfinite(loss):
        raise DivergedLoss(f"non-finite loss at noise_seed={noise_seed}")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.item())


def evaluate_report(model, pixel_batch, snr_db, l, seed, channel_model="awgn",
                    ids=None, with_msssim=True, chunk=256):
    """QualityReport of decode(transmit(encode(x))) over a pixel batch."""
    report = QualityReport()
    ids = ids if ids is not None else [f"img{i:06d}" for i in range(len(pixel_batch))]
    for start in range(0, len(pixel_batch), chunk):
        block = pixel_batch[start:start + chunk]
        recon = cd.reconstruct_images(model, block, snr_db, l, seed, channel_model)
        for i in range(len(block)):
            m = ms_ssim(block[i], recon[i]) if with_msssim else math.nan
            report.add(ids[start + i], psnr(block[i], recon[i]), m)
    return report


def evaluate_psnr(model, pixel_batch, snr_db, l, seed, channel_model="awgn"):
    return evaluate_report(
        model, pixel_batch, snr_db, l, seed, channel_model, with_msssim=False
    ).psnr_db


def train(config: TrainConfig, split, init_seed=None):
    """Train a codec on a DatasetSplit; returns (model, log rows).

    The best-probe-mean checkpoint is kept at config.checkpoint_path and the
    returned model carries those weights. The CSV log holds one row per step
    (loss) and one row per probe SNR per epoch (validation metrics).
    """
    from .data import stack_pixels

    cfg = config.codec
    model = cd.JsccModel(
        cfg,
        init_seed=config.seed if init_seed is None else init_seed,
        meta={
            "version": 1,
            "seed": config.seed,
            "scheme": config.scheme,
            "snr_range_db": list(config.snr_range_db),
            "num_layers": cfg.num_layers,
        },
    )
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    train_px = stack_pixels(split.train)
    val_px = stack_pixels(split.validation) if split.validation else train_px
    x_all = torch.from_numpy(train_px).permute(0, 3, 1, 2).to(model.dtype())

    order_rng = np.random.Generator(np.random.PCG64(config.seed))
    sample_rng = np.random.Generator(np.random.PCG64(config.seed + 1))
    log_rows = []
    best_score = -math.inf
    t0 = time.time()
    step = 0
    n = x_all.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = x_all[order[start:start + config.batch_size]]
            snr = sample_training_snr(config.snr_range_db, sample_rng)
            l = sample_layer_count(cfg.num_layers, sample_rng)
            loss = train_step(
                model, optimizer, batch, snr, l,
                noise_seed=config.seed * NOISE_SEED_STRIDE + step,
                channel_model=config.channel_model,
            )
            step += 1
            log_rows.append({
                "epoch": epoch, "step": step, "loss": f"{loss:.8f}",
                "probe_snr_db": "", "val_psnr_db": "", "val_msssim": "",
                "wallclock_s": f"{time.time() - t0:.3f}",
            })
        probe_psnrs = []
        for probe in config.probe_snrs_db:
            val_psnr = evaluate_psnr(
                model, val_px, probe, cfg.num_layers,
                seed=config.seed + 7919, channel_model=config.channel_model,
            )
            probe_psnrs.append(val_psnr)
            msval = ""
            if config.msssim_probe_count and probe == config.probe_snrs_db[len(config.probe_snrs_db) // 2]:
                sub = val_px[:config.msssim_probe_count]
                rep = evaluate_report(
                    model, sub, probe, cfg.num_layers,
                    seed=config.seed + 7919, channel_model=config.channel_model,
                )
                msval = f"{rep.ms_ssim:.6f}"
            log_rows.append({
                "epoch": epoch, "step": "", "loss": "",
                "probe_snr_db": f"{probe:g}",
                "val_psnr_db": f"{val_psnr:.4f}", "val_msssim": msval,
                "wallclock_s": f"{time.time() - t0:.3f}",
            })
        score = float(np.mean(probe_psnrs))
        if score > best_score:
            best_score = score
            model.meta["best_epoch"] = epoch
            model.meta["best_probe_psnr_db"] = round(score, 4)
            try:
                cd.save_checkpoint(config.checkpoint_path, model)
            except OSError as ex:
                raise DiskWriteFailure(f"cannot write {config.checkpoint_path}: {ex}") from ex
    if config.log_path:
        write_training_log(config.log_path, log_rows)
    best = cd.load_checkpoint(config.checkpoint_path)
    return best, log_rows


def write_training_log(path, rows):
    fields = ["epoch", "step", "loss", "probe_snr_db", "val_psnr_db", "val_msssim", "wallclock_s"]
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)
    except OSError as ex:
        raise DiskWriteFailure(f"cannot write {path}: {ex}") from ex


def finite_diff_gradcheck(model, probe_count=32, step_scale=1e-4, noise_seed=0,
                          snr_db=10.0, image=None, probe_seed=0):
    """Max relative error between central differences and backprop gradients.

    Runs the full encode -> AWGN (noise held fixed) -> decode -> MSE pipeline
    in float64 on `probe_count` randomly chosen parameters.
    """
    from . import channel as ch

    work = copy.deepcopy(model).double()
    cfg = work.config
    if image is None:
        rng = np.random.Generator(np.random.PCG64(noise_seed))
        image = rng.random((1, cfg.height, cfg.width, cfg.channels))
    x = torch.from_numpy(np.asarray(image)).permute(0, 3, 1, 2).double()

    sigma2 = ch.snr_db_to_noise_variance(snr_db)
    gen = ch.noise_generator(noise_seed)
    draws = torch.randn(x.shape[0], cfg.k, 2, generator=gen, dtype=torch.float64)
    fixed_noise = torch.complex(draws[..., 0], draws[..., 1]) * math.sqrt(sigma2 / 2.0)

    def loss_fn():
        x_hat, _ = cd.run_pipeline(
            work, x, snr_db, cfg.num_layers, noise_seed,
            channel_fn=lambda z: z + fixed_noise,
        )
        return ((x - x_hat) ** 2).mean()

    params = [p for p in work.parameters() if p.requires_grad]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    # denominator floor: 1e-3 of the largest gradient keeps double-precision
    # finite-difference rounding noise on negligible gradients out of the score
    floor = 1e-3 * max(g.abs().max().item() for g in grads)
    rng = np.random.Generator(np.random.PCG64(probe_seed))
    max_rel = 0.0
    with torch.no_grad():
        for _ in range(probe_count):
            pi = int(rng.integers(len(params)))
            flat = params[pi].data.reshape(-1)
            j = int(rng.integers(flat.numel()))
            orig = flat[j].item()
            h = step_scale * max(1.0, abs(orig))
            flat[j] = orig + h
            lp = loss_fn().item()
            flat[j] = orig - h
            lm = loss_fn().item()
            flat[j] = orig
            fd = (lp - lm) / (2.0 * h)
            bp = grads[pi].reshape(-1)[j].item()
            rel = abs(fd - bp) / max(abs(fd), abs(bp), floor)
            max_rel = max(max_rel, rel)
    return max_rel
