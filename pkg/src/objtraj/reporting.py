"""Delimited table files and the matplotlib figures rendered alongside them."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import EvalRecord, NormalizedLossTable, PdCurve

DELIM = "\t"


def write_table(path, header: list[str], rows: list[list], delimiter: str = DELIM) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [delimiter.join(header)]
    for row in rows:
        lines.append(delimiter.join(_format_cell(c) for c in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_table(path, delimiter: str = DELIM) -> tuple[list[str], list[list[str]]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split(delimiter)
    return header, [line.split(delimiter) for line in lines[1:]]


def _format_cell(cell) -> str:
    if isinstance(cell, float):
        return f"{cell:.6f}"
    return str(cell)


def write_eval_table(path, records: list[EvalRecord]) -> None:
    """One row per image plus a mean summary row."""
    rows = [[r.image_id, r.descriptor, r.psnr, r.ssim, r.lpips, r.lr_psnr] for r in records]
    if records:
        rows.append(
            [
                "mean",
                records[0].descriptor,
                float(np.mean([r.psnr for r in records])),
                float(np.mean([r.ssim for r in records])),
                float(np.mean([r.lpips for r in records])),
                float(np.mean([r.lr_psnr for r in records])),
            ]
        )
    write_table(path, ["image", "descriptor", "psnr", "ssim", "lpips", "lr_psnr"], rows)


def write_pd_table(path, curve: PdCurve) -> None:
    write_table(path, ["t", "psnr", "lpips"], [[t, p, l] for t, p, l in curve.rows])


def write_normalized_table(path, table: NormalizedLossTable) -> None:
    header = ["model"] + [f"level{i}" for i in range(table.raw.shape[1])]
    rows = []
    for mi, name in enumerate(table.models):
        rows.append([name] + [float(v) for v in table.normalized[mi]])
    rows.append(["degenerate"] + [str(flag).lower() for flag in table.degenerate])
    write_table(path, header, rows)


def plot_pd_curve(curve: PdCurve, path) -> Path:
    """PSNR and perceptual distance against t, twin axes, one PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ts = [r[0] for r in curve.rows]
    psnrs = [r[1] for r in curve.rows]
    lpips = [r[2] for r in curve.rows]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(ts, psnrs, "o-", color="tab:blue", label="PSNR")
    ax1.set_xlabel("t")
    ax1.set_ylabel("PSNR (dB)", color="tab:blue")
    ax1.tick_params(axis="y", labelcolor="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(ts, lpips, "s--", color="tab:red", label="perceptual distance")
    ax2.set_ylabel("perceptual distance", color="tab:red")
    ax2.tick_params(axis="y", labelcolor="tab:red")
    ax1.set_title("perception-distortion sweep")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_eval_scatter(records: list[EvalRecord], path) -> Path:
    """Per-image PSNR vs perceptual distance scatter for one evaluation run."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter([r.lpips for r in records], [r.psnr for r in records], color="tab:purple")
    for r in records:
        ax.annotate(r.image_id, (r.lpips, r.psnr), fontsize=6, alpha=0.6)
    ax.set_xlabel("perceptual distance")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(records[0].descriptor if records else "evaluation")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_training_curve(values: list[float], label: str, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(values, color="tab:green", linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel(label)
    ax.set_title(f"{label} over training")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
