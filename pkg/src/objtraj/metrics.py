"""Full-reference metrics, LR consistency, normalized loss tables, PD curves.

PSNR is computed on RGB, SSIM on luminance with the standard 11-tap Gaussian
window; both are pure functions. The LR-consistency metric reuses the one
documented bicubic kernel, so there is no second resampler to drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .backbone import Backbone
from .data import degrade_bicubic
from .errors import DomainError
from .generator import GeneratorState, super_resolve
from .losses import perceptual_level_loss
from .objective_space import N_LEVELS, constant_map
from .oos import LinearTapWeights, OosGridSpec, perceptual_scalar

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LR_PSNR_RECOMMENDED_DB = 45.0

_LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    descriptor: str  # constant t, map file, or predictor tag
    psnr: float
    ssim: float
    lpips: float
    lr_psnr: float

    def __post_init__(self):
        for name in ("psnr", "ssim", "lpips", "lr_psnr"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"non-finite {name} in record {self.image_id}")
        if self.lpips < 0:
            raise DomainError("lpips must be nonnegative")


@dataclass(frozen=True)
class PdCurve:
    rows: tuple[tuple[float, float, float], ...]  # (t, mean psnr, mean lpips)
    grid: OosGridSpec

    def __post_init__(self):
        if len(self.rows) != len(self.grid):
            raise DomainError(f"{len(self.rows)} rows for a {len(self.grid)}-point grid")
        for (t, _, _), g in zip(self.rows, self.grid.t_samples):
            if t != g:
                raise DomainError(f"row t {t} out of order with grid {g}")


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """10*log10(1/MSE) on [0,1] images; identical images report the 99 dB cap."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def _luminance(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3 and img.shape[0] == 3:
        r, g, b = _LUMA
        return r * img[0] + g * img[1] + b * img[2]
    if img.ndim == 2:
        return img
    raise DomainError(f"expected (3,H,W) or (H,W), got shape {img.shape}")


def _gaussian_window(n: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    k /= k.sum()
    return np.outer(k, k)


def _windowed_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(img, window.shape)
    return np.tensordot(view, window, axes=([2, 3], [0, 1]))


def ssim(a, b) -> float:
    """Mean local SSIM on luminance; Gaussian 11x11, K1=0.01, K2=0.03, range 1."""
    a, b = _check_pair(a, b)
    x = _luminance(a)
    y = _luminance(b)
    if min(x.shape) < SSIM_WINDOW:
        raise DomainError(f"image {x.shape} smaller than the {SSIM_WINDOW}-tap window")
    w = _gaussian_window()
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mu_x = _windowed_mean(x, w)
    mu_y = _windowed_mean(y, w)
    xx = _windowed_mean(x * x, w) - mu_x**2
    yy = _windowed_mean(y * y, w) - mu_y**2
    xy = _windowed_mean(x * y, w) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def lr_psnr(sr, lr, scale: int) -> float:
    """PSNR between the degraded SR output and the LR input (same kernel path)."""
    sr = np.asarray(sr, dtype=np.float64)
    lr = np.asarray(lr, dtype=np.float64)
    if sr.shape[-2:] != (lr.shape[-2] * scale, lr.shape[-1] * scale):
        raise DomainError(f"SR {sr.shape[-2:]} is not {scale}x LR {lr.shape[-2:]}")
    return psnr(degrade_bicubic(sr, scale), lr)


@dataclass(frozen=True)
class NormalizedLossTable:
    """Per-model per-level averages, min-max scaled per level column."""

    models: tuple[str, ...]
    raw: np.ndarray  # (M, 5) mean per-level losses
    normalized: np.ndarray  # (M, 5) min-max scaled columns
    degenerate: tuple[bool, ...]  # level columns with zero spread


def normalized_loss_table(model_outputs: dict, references: list, backbone: Backbone) -> NormalizedLossTable:
    """model_outputs: name -> list of SR images aligned with references."""
    names = tuple(model_outputs)
    if len(names) < 2:
        raise DomainError("min-max scaling needs at least 2 models")
    raw = np.zeros((len(names), N_LEVELS))
    dtype = next(backbone.module.parameters()).dtype
    for mi, name in enumerate(names):
        outputs = model_outputs[name]
        if len(outputs) != len(references):
            raise DomainError(f"model {name}: {len(outputs)} outputs vs {len(references)} references")
        for sr, hr in zip(outputs, references):
            srt = torch.as_tensor(np.asarray(sr, dtype=np.float32)).to(dtype)
            hrt = torch.as_tensor(np.asarray(hr, dtype=np.float32)).to(dtype)
            for level in range(N_LEVELS):
                raw[mi, level] += perceptual_level_loss(srt, hrt, level, backbone).item()
    raw /= len(references)
    normalized = np.zeros_like(raw)
    degenerate = []
    for level in range(N_LEVELS):
        col = raw[:, level]
        spread = col.max() - col.min()
        if spread == 0.0:
            degenerate.append(True)
        else:
            degenerate.append(False)
            normalized[:, level] = (col - col.min()) / spread
    return NormalizedLossTable(names, raw, normalized, tuple(degenerate))


def pd_curve(
    gen: GeneratorState,
    dataset,
    grid: OosGridSpec,
    backbone: Backbone,
    weights: LinearTapWeights | None = None,
) -> PdCurve:
    """Constant-t sweep: per grid point, mean PSNR and mean perceptual distance."""
    pairs = [(hr, lr) for hr, lr, _ in dataset]
    if not pairs:
        raise DomainError("empty dataset")
    rows = []
    for t in grid.t_samples:
        psnrs, lpipss = [], []
        for hr, lr in pairs:
            h, w = lr.shape[-2:]
            sr = super_resolve(lr, constant_map(t, h, w), gen).numpy()
            sr = np.clip(sr, 0.0, 1.0)
            psnrs.append(psnr(sr, hr))
            lpipss.append(perceptual_scalar(hr, sr, backbone, weights))
        rows.append((t, float(np.mean(psnrs)), float(np.mean(lpipss))))
    return PdCurve(tuple(rows), grid)
