"""Render result figures from experiment CSVs (derived artifacts only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .results import read_result_csv  # noqa: E402

LINE_STYLE = {"linewidth": 1.8, "markersize": 4}


def _series_key(row, multi_l_schemes):
    if row["scheme"] in multi_l_schemes:
        return f"{row['scheme']} l={row['l']}"
    return row["scheme"]


def plot_psnr_vs_snr(csv_path, out_path):
    """One PSNR-versus-test-SNR line per scheme (per prefix for layered runs)."""
    rows, _ = read_result_csv(csv_path)
    schemes = {}
    for row in rows:
        schemes.setdefault(row["scheme"], set()).add(row["l"])
    multi = {s for s, ls in schemes.items() if len(ls) > 1}
    series = {}
    for row in rows:
        series.setdefault(_series_key(row, multi), []).append(row)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label in sorted(series):
        pts = sorted(series[label], key=lambda r: r["snr_test_db"])
        ax.plot([p["snr_test_db"] for p in pts], [p["psnr_db"] for p in pts],
                marker="o", label=label, **LINE_STYLE)
    ax.set_xlabel("test SNR (dB)")
    ax.set_ylabel("PSNR (dB)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_psnr_vs_layers(csv_path, out_path, max_curves=7):
    """PSNR versus decoded prefix length, one line per test SNR.

    Returns None when the CSV has no scheme evaluated at multiple prefixes.
    """
    rows, _ = read_result_csv(csv_path)
    schemes = {}
    for row in rows:
        schemes.setdefault(row["scheme"], set()).add(row["l"])
    multi = {s for s, ls in schemes.items() if len(ls) > 1}
    if not multi:
        return None
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for scheme in sorted(multi):
        snrs = sorted({r["snr_test_db"] for r in rows if r["scheme"] == scheme})
        step = max(1, len(snrs) // max_curves)
        for snr in snrs[::step]:
            pts = sorted(
                (r for r in rows if r["scheme"] == scheme and r["snr_test_db"] == snr),
                key=lambda r: r["l"],
            )
            ax.plot([p["l"] for p in pts], [p["psnr_db"] for p in pts],
                    marker="s", label=f"{scheme} @ {snr:g} dB", **LINE_STYLE)
    ax.set_xlabel("decoded layers l")
    ax.set_ylabel("PSNR (dB)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
