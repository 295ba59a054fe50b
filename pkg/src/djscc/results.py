"""Experiment result files: a CSV of (snr_test_db, l, psnr_db, ms_ssim, scheme)
rows preceded by '#' metadata lines carrying the schema version, experiment
name, config snapshot, seeds, and the package version. The CSV is the single
source of truth; plots are derived from it.
"""

from __future__ import annotations

import csv
import io
import json
import math
import subprocess

RESULT_SCHEMA_VERSION = 1
SCHEME_TAGS = ("classical", "adaptive", "layered", "baseline", "secure")


def version_string():
    from . import __version__

    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if described.returncode == 0:
            return f"djscc-{__version__}+g{described.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"djscc-{__version__}"


def _valid_scheme(tag):
    return any(tag == t or tag.startswith("classical@") for t in SCHEME_TAGS)


def _fmt(value):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, float):
        return "inf" if math.isinf(value) else f"{value:.6f}"
    return str(value)


def write_result_csv(path, rows, experiment, config_snapshot, seeds):
    """Rows are dicts with keys snr_test_db, l, psnr_db, ms_ssim, scheme."""
    for row in rows:
        if not _valid_scheme(row["scheme"]):
            raise ValueError(f"bad scheme tag {row['scheme']!r}")
    buf = io.StringIO()
    buf.write(f"# schema_version={RESULT_SCHEMA_VERSION}\n")
    buf.write(f"# experiment={experiment}\n")
    buf.write(f"# version={version_string()}\n")
    buf.write(f"# seeds={json.dumps(seeds, sort_keys=True)}\n")
    buf.write(f"# config={json.dumps(config_snapshot, sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["snr_test_db", "l", "psnr_db", "ms_ssim", "scheme"])
    for row in rows:
        writer.writerow([
            _fmt(float(row["snr_test_db"])), row["l"],
            _fmt(float(row["psnr_db"])), _fmt(row.get("ms_ssim")),
            row["scheme"],
        ])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_result_csv(path):
    """-> (rows, meta); '#' lines become the meta dict, values left as strings."""
    meta, rows = {}, []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value
        else:
            body.append(line)
    reader = csv.DictReader(body)
    for rec in reader:
        rows.append({
            "snr_test_db": float(rec["snr_test_db"]),
            "l": int(rec["l"]),
            "psnr_db": float(rec["psnr_db"]),
            "ms_ssim": float(rec["ms_ssim"]) if rec["ms_ssim"] else math.nan,
            "scheme": rec["scheme"],
        })
    return rows, meta
