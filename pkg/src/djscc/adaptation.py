"""Bandwidth decision loop: measured rate-quality tables and target lookup.

The table maps (SNR bin, layer count) to expected reconstruction quality,
measured on a validation set with seeded channel noise. The decision picks
the smallest prefix length whose expected quality meets the required level;
an unreachable target yields the full bandwidth plus achievable=False.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyTable, EmptyValidationSet
from .metrics import ms_ssim, psnr

TABLE_SCHEMA_VERSION = 1
MONOTONE_TOLERANCE_DB = 0.1


@dataclass
class RtpSpec:
    """Required task performance: metric name plus target threshold."""

    metric: str
    target: float

    def __post_init__(self):
        if self.metric not in ("psnr", "ms_ssim"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if not math.isfinite(self.target):
            raise ValueError("target must be finite")
        if self.metric == "psnr" and self.target <= 0:
            raise ValueError("psnr target must be > 0")
        if self.metric == "ms_ssim" and not 0 < self.target <= 1:
            raise ValueError("ms_ssim target must lie in (0, 1]")

    @classmethod
    def parse(cls, text):
        """Parse the CLI form 'metric:target', e.g. 'psnr:25'."""
        name, _, value = text.partition(":")
        return cls(name.strip(), float(value))


@dataclass
class RateQualityTable:
    metric_name: str
    snr_bins_db: list
    layer_counts: list
    entries: dict = field(default_factory=dict)  # (snr_db, l) -> quality
    model_version: str = ""
    seed: int = 0
    violations: list = field(default_factory=list)

    def quality(self, snr_db, l):
        return self.entries[(self._clamp_bin(snr_db), l)]

    def _clamp_bin(self, snr_db):
        bins = self.snr_bins_db
        return min(bins, key=lambda b: (abs(b - snr_db), b))

    def check_monotone(self):
        """Record (snr, l) cells where quality drops more than the tolerance."""
        self.violations = []
        for snr in self.snr_bins_db:
            for prev, cur in zip(self.layer_counts, self.layer_counts[1:]):
                if self.entries[(snr, cur)] < self.entries[(snr, prev)] - MONOTONE_TOLERANCE_DB:
                    self.violations.append((snr, cur))
        if self.violations:
            warnings.warn(f"rate-quality table not monotone in l at {self.violations}")
        return self.violations


def build_rate_quality_table(model, val_images, snr_grid_db, seed=0, metric="psnr",
                             channel_model="awgn"):
    """Measure mean quality of the full pipeline per (SNR bin, layer count)."""
    from .data import stack_pixels
    from .training import evaluate_report

    if not val_images:
        raise EmptyValidationSet("rate-quality table needs validation images")
    pixels = stack_pixels(val_images)
    num_layers = model.config.num_layers
    table = RateQualityTable(
        metric_name=metric,
        snr_bins_db=[float(s) for s in snr_grid_db],
        layer_counts=list(range(1, num_layers + 1)),
        model_version=str(model.meta.get("scheme", "")) or "model",
        seed=seed,
    )
    for snr in table.snr_bins_db:
        for l in table.layer_counts:
            report = evaluate_report(
                model, pixels, snr, l, seed=seed, channel_model=channel_model,
                with_msssim=(metric == "ms_ssim"),
            )
            value = report.psnr_db if metric == "psnr" else report.ms_ssim
            table.entries[(snr, l)] = float(value)
    table.check_monotone()
    return table


def decide_bandwidth(table: RateQualityTable, csi, rtp: RtpSpec):
    """Smallest l meeting the target at the CSI's bin, or (L, False)."""
    if not table.entries:
        raise EmptyTable("rate-quality table has no entries")
    snr_bin = table._clamp_bin(csi.snr_db)
    for l in table.layer_counts:
        if table.entries[(snr_bin, l)] >= rtp.target:
            return l, True
    return table.layer_counts[-1], False


def save_table(path, table: RateQualityTable):
    doc = {
        "schema_version": TABLE_SCHEMA_VERSION,
        "metric": table.metric_name,
        "snr_bins_db": table.snr_bins_db,
        "layer_counts": table.layer_counts,
        "model_version": table.model_version,
        "seed": table.seed,
        "violations": [list(v) for v in table.violations],
        "entries": [
            {"snr_db": snr, "l": l, "quality": round(table.entries[(snr, l)], 6)}
            for snr in table.snr_bins_db
            for l in table.layer_counts
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_table(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != TABLE_SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported table schema {doc.get('schema_version')}")
    table = RateQualityTable(
        metric_name=doc["metric"],
        snr_bins_db=doc["snr_bins_db"],
        layer_counts=doc["layer_counts"],
        model_version=doc["model_version"],
        seed=doc["seed"],
        violations=[tuple(v) for v in doc["violations"]],
    )
    for row in doc["entries"]:
        table.entries[(row["snr_db"], row["l"])] = row["quality"]
    return table


def mean_quality_curve(table: RateQualityTable, l):
    return np.array([table.entries[(snr, l)] for snr in table.snr_bins_db])
