"""Per-pixel perceptual distance maps, t-grid search, candidate mixing.

The grid search streams candidates through a per-pixel (value, t) min so the
full candidate stack never has to be resident; ties resolve to the smallest t
(and lowest candidate index), the conservative distortion-oriented choice.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .backbone import Backbone, extract_taps
from .errors import ArchiveError, DomainError
from .generator import GeneratorState, super_resolve
from .objective_space import ObjectiveMap, constant_map

_EPS = 1e-10
MAP_MAX = 65535


@dataclass(frozen=True)
class OosGridSpec:
    t_samples: tuple[float, ...] = tuple(round(0.05 * k, 2) for k in range(21))

    def __post_init__(self):
        ts = tuple(float(t) for t in self.t_samples)
        if not ts:
            raise DomainError("empty t grid")
        if any(not 0.0 <= t <= 1.0 for t in ts):
            raise DomainError(f"grid values must lie in [0,1]: {ts}")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DomainError(f"grid values must be strictly ascending: {ts}")
        object.__setattr__(self, "t_samples", ts)

    def __len__(self):
        return len(self.t_samples)

    def describe(self) -> str:
        return ",".join(f"{t:g}" for t in self.t_samples)


def parse_grid(text: str) -> OosGridSpec:
    """'start:stop:step' or a comma-separated list of t values."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise DomainError(f"grid spec must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise DomainError("grid step must be positive")
        n = int(round((stop - start) / step))
        ts = [round(start + k * step, 10) for k in range(n + 1)]
        return OosGridSpec(tuple(ts))
    return OosGridSpec(tuple(float(p) for p in text.split(",")))


@dataclass(frozen=True)
class SelectionMap:
    """Per-pixel selected t (grid attached) or candidate index (grid None)."""

    values: np.ndarray
    resolution: str
    grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.resolution not in ("HR", "LR"):
            raise DomainError(f"resolution must be HR or LR, got {self.resolution!r}")
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise DomainError(f"selection map must be 2-D, got shape {values.shape}")
        if self.grid is not None:
            grid = np.asarray(self.grid, dtype=np.float32)
            values = values.astype(np.float32)
            if not np.isin(values, grid).all():
                raise DomainError("selection values must come from the attached grid")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.values.shape)


@dataclass(frozen=True)
class LinearTapWeights:
    """Nonnegative per-channel weights applied to each tap's squared differences."""

    per_level: tuple[np.ndarray, ...]

    def __post_init__(self):
        levels = tuple(np.asarray(w, dtype=np.float64) for w in self.per_level)
        for w in levels:
            if w.ndim != 1 or (w < 0).any() or not np.isfinite(w).all():
                raise DomainError("tap weights must be finite nonnegative vectors")
        object.__setattr__(self, "per_level", levels)


def uniform_tap_weights(backbone: Backbone) -> LinearTapWeights:
    return LinearTapWeights(tuple(np.full(c, 1.0 / c) for c in backbone.tap_channels))


@dataclass(frozen=True)
class PerceptualDistanceMap:
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise DomainError(f"distance map must be 2-D, got shape {values.shape}")
        if not np.isfinite(values).all() or (values < 0).any():
            raise DomainError("distance map values must be finite and nonnegative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def scalar(self) -> float:
        return float(self.values.mean())


def distance_map_torch(
    a: torch.Tensor, b: torch.Tensor, backbone: Backbone, weights: LinearTapWeights | None = None
) -> torch.Tensor:
    """Differentiable (B,H,W) distance field; mean of it is the scalar metric."""
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    squeeze = a.dim() == 3
    if squeeze:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    if weights is None:
        weights = uniform_tap_weights(backbone)
    h, w = a.shape[-2:]
    taps_a = extract_taps(a, backbone)
    taps_b = extract_taps(b, backbone)
    total = None
    for tap_a, tap_b, wvec in zip(taps_a, taps_b, weights.per_level):
        na = tap_a / (tap_a.square().sum(dim=1, keepdim=True).sqrt() + _EPS)
        nb = tap_b / (tap_b.square().sum(dim=1, keepdim=True).sqrt() + _EPS)
        wt = torch.as_tensor(wvec, dtype=a.dtype, device=a.device).view(1, -1, 1, 1)
        field = (wt * (na - nb).square()).sum(dim=1, keepdim=True)
        field = F.interpolate(field, size=(h, w), mode="bilinear", align_corners=False)
        total = field if total is None else total + field
    out = total.squeeze(1) / len(weights.per_level)
    return out.squeeze(0) if squeeze else out


def perceptual_distance_map(
    y, sr, backbone: Backbone, weights: LinearTapWeights | None = None
) -> PerceptualDistanceMap:
    y = torch.as_tensor(np.ascontiguousarray(y)) if isinstance(y, np.ndarray) else y
    sr = torch.as_tensor(np.ascontiguousarray(sr)) if isinstance(sr, np.ndarray) else sr
    dtype = next(backbone.module.parameters()).dtype
    with torch.no_grad():
        field = distance_map_torch(y.to(dtype), sr.to(dtype), backbone, weights)
    return PerceptualDistanceMap(field.cpu().numpy())


def perceptual_scalar(y, sr, backbone: Backbone, weights: LinearTapWeights | None = None) -> float:
    return perceptual_distance_map(y, sr, backbone, weights).scalar


def grid_search_oos(
    gen: GeneratorState,
    x,
    y,
    grid: OosGridSpec,
    backbone: Backbone,
    weights: LinearTapWeights | None = None,
):
    """Argmin over constant-t candidates per pixel; returns (SelectionMap, per-t scalars).

    Candidates stream one t at a time, so memory stays at one HR image plus
    two HR fields regardless of grid size. Ascending iteration with a strict
    less-than keeps ties at the smallest t.
    """
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.float32)
    h, w = x.shape[-2:]
    if y.shape[-2:] != (h * gen.config.scale, w * gen.config.scale):
        raise DomainError(f"HR {y.shape[-2:]} is not scale x LR {x.shape[-2:]}")
    best_val = np.full(y.shape[-2:], np.inf, dtype=np.float32)
    best_t = np.zeros(y.shape[-2:], dtype=np.float32)
    scalars = []
    for t in grid.t_samples:
        sr = super_resolve(x, constant_map(t, h, w), gen)
        field = perceptual_distance_map(y, sr.numpy(), backbone, weights).values
        scalars.append(float(field.mean()))
        better = field < best_val
        best_val = np.where(better, field, best_val)
        best_t = np.where(better, np.float32(t), best_t)
    sel = SelectionMap(best_t, "HR", grid=grid.t_samples)
    return sel, np.asarray(scalars)


def downscale_selection(sel: SelectionMap, scale: int) -> ObjectiveMap:
    """Average-pool the HR t field into an LR-sized objective map."""
    if sel.grid is None:
        raise DomainError("downscale_selection needs a t-valued selection map")
    h, w = sel.shape
    if h % scale or w % scale:
        raise DomainError(f"selection map {h}x{w} not divisible by scale {scale}")
    pooled = sel.values.reshape(h // scale, scale, w // scale, scale).mean(axis=(1, 3))
    return ObjectiveMap(np.clip(pooled, 0.0, 1.0).astype(np.float32))


def ensemble_oos(candidates, y, backbone: Backbone, weights: LinearTapWeights | None = None):
    """Per-pixel copy from the candidate with the smallest distance-map value."""
    y = np.asarray(y, dtype=np.float32)
    cands = [np.asarray(c, dtype=np.float32) for c in candidates]
    if len(cands) < 2:
        raise DomainError("ensemble needs at least 2 candidates")
    for c in cands:
        if c.shape != y.shape:
            raise DomainError(f"candidate shape {c.shape} vs reference {y.shape}")
    fields = np.stack([perceptual_distance_map(y, c, backbone, weights).values for c in cands])
    sel_idx = fields.argmin(axis=0).astype(np.int32)
    stack = np.stack(cands)  # (N, 3, H, W)
    mixed = np.take_along_axis(stack, sel_idx[None, None, :, :], axis=0).squeeze(0)
    return mixed, SelectionMap(sel_idx, "HR")


def sroos_infer(gen: GeneratorState, x, sel: SelectionMap) -> torch.Tensor:
    """SR under the grid-searched map: reduce to LR, then one conditioned pass."""
    return super_resolve(x, downscale_selection(sel, gen.config.scale), gen)


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_map(path, values: np.ndarray, meta: dict) -> None:
    """16-bit grayscale PNG (0 -> 0.0, 65535 -> 1.0) plus a structured sidecar."""
    path = Path(path)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DomainError(f"map must be 2-D, got shape {values.shape}")
    if values.min() < 0.0 or values.max() > 1.0:
        raise DomainError("map values must lie in [0,1]")
    quant = np.round(values * MAP_MAX).astype(np.uint16)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(quant).save(tmp, format="PNG")  # uint16 -> 16-bit grayscale
    tmp.replace(path)
    side = dict(meta)
    side["shape"] = list(values.shape)
    tmp_side = _sidecar(path).with_name(_sidecar(path).name + ".tmp")
    tmp_side.write_text(json.dumps(side, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp_side.replace(_sidecar(path))


def load_map(path) -> tuple[np.ndarray, dict]:
    """Inverse of save_map; t-valued selection maps snap back onto their grid."""
    path = Path(path)
    if not path.is_file() or not _sidecar(path).is_file():
        raise ArchiveError(f"map file or sidecar missing: {path}")
    with Image.open(path) as img:
        arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ArchiveError(f"map file {path} is not single-channel")
    values = (arr / MAP_MAX).astype(np.float32)
    meta = json.loads(_sidecar(path).read_text(encoding="utf-8"))
    grid = meta.get("grid")
    if meta.get("kind") == "selection_t" and grid:
        gridv = np.asarray(grid, dtype=np.float32)
        values = gridv[np.abs(values[..., None] - gridv[None, None, :]).argmin(axis=-1)]
    return values, meta
