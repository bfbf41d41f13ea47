"""Objective-map predictor: frozen-backbone encoder, UNet decoder, sigmoid head.

Training drives the predicted map toward stored grid-search maps while a
frozen generator scores the downstream SR result; gradients reach only the
predictor parameters, and the generator digest is the enforced witness.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .archive import load_archive, save_archive
from .backbone import Backbone, _seeded_init, extract_taps
from .data import PairedDataset
from .errors import ArchiveError, ConfigurationError, DomainError, TrainingDiverged
from .generator import GeneratorState
from .objective_space import ObjectiveMap
from .oos import LinearTapWeights, OosGridSpec, distance_map_torch, downscale_selection, grid_search_oos, load_map, save_map


@dataclass(frozen=True)
class PredictorConfig:
    decoder_channels: tuple[int, ...] | None = None  # None mirrors the encoder taps
    head_channels: int = 16

    def to_config(self) -> dict:
        return {
            "decoder_channels": list(self.decoder_channels) if self.decoder_channels else None,
            "head_channels": self.head_channels,
        }


@dataclass(frozen=True)
class PredictorLossWeights:
    map_weight: float = 1.0
    rec_weight: float = 1e-2
    perceptual_weight: float = 1.0

    def __post_init__(self):
        vals = (self.map_weight, self.rec_weight, self.perceptual_weight)
        if any(v < 0 for v in vals) or not any(v > 0 for v in vals):
            raise DomainError("loss weights must be nonnegative with at least one positive")


@dataclass(frozen=True)
class OoeTrainingSample:
    x: np.ndarray  # LR image (3,h,w)
    y: np.ndarray  # HR image (3,H,W)
    t_star: ObjectiveMap  # LR-sized reduction of the searched selection map
    name: str = ""

    def __post_init__(self):
        h, w = self.x.shape[-2:]
        if self.t_star.shape != (h, w):
            raise DomainError(f"t_star {self.t_star.shape} does not match LR {(h, w)}")
        if self.y.shape[-2] % h or self.y.shape[-1] % w:
            raise DomainError(f"HR {self.y.shape[-2:]} not an integer multiple of LR {(h, w)}")


class _DecoderBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv0 = nn.Conv2d(in_ch, out_ch, 3, 1, 1)
        self.conv1 = nn.Conv2d(out_ch, out_ch, 3, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.leaky_relu(self.conv0(x), 0.2)
        return F.leaky_relu(self.conv1(x), 0.2)


class OoePredictor(nn.Module):
    """Decode frozen multi-level taps (plus the raw image) into a unit-range map."""

    def __init__(self, config: PredictorConfig, tap_channels: tuple[int, ...]):
        super().__init__()
        self.config = config
        widths = config.decoder_channels or tuple(reversed(tap_channels))
        if len(widths) != len(tap_channels):
            raise DomainError(f"decoder needs {len(tap_channels)} stages, got {len(widths)}")
        self.bottom = _DecoderBlock(tap_channels[-1], widths[0])
        ups = []
        in_ch = widths[0]
        for skip_ch, out_ch in zip(reversed(tap_channels[:-1]), widths[1:]):
            ups.append(_DecoderBlock(in_ch + skip_ch, out_ch))
            in_ch = out_ch
        self.up_blocks = nn.ModuleList(ups)
        self.head = nn.Sequential(
            nn.Conv2d(in_ch + 3, config.head_channels, 3, 1, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(config.head_channels, 1, 3, 1, 1),
        )

    def forward(self, x: torch.Tensor, taps) -> torch.Tensor:
        h = self.bottom(taps[-1])
        for block, skip in zip(self.up_blocks, reversed(tuple(taps)[:-1])):
            h = F.interpolate(h, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            h = block(torch.cat([h, skip], dim=1))
        h = F.interpolate(h, size=x.shape[-2:], mode="bilinear", align_corners=False)
        return torch.sigmoid(self.head(torch.cat([h, x], dim=1)))


@dataclass
class PredictorState:
    module: OoePredictor
    backbone: Backbone
    step: int = 0

    @property
    def config(self) -> PredictorConfig:
        return self.module.config

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy() for k, v in self.module.state_dict().items()}


def build_predictor(config: PredictorConfig, backbone: Backbone, seed: int = 11) -> PredictorState:
    module = OoePredictor(config, backbone.tap_channels)
    _seeded_init(module, seed)
    return PredictorState(module, backbone)


def _predict_batch(x: torch.Tensor, state: PredictorState) -> torch.Tensor:
    taps = extract_taps(x, state.backbone)
    return state.module(x, tuple(taps))


def predict_map(x, state: PredictorState) -> ObjectiveMap:
    """LR-sized map in [0,1] for one LR image; eval mode, no grad."""
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x))
    dtype = next(state.module.parameters()).dtype
    x = x.to(dtype)
    if x.dim() != 3:
        raise DomainError(f"expected one (3,h,w) image, got shape {tuple(x.shape)}")
    state.module.eval()
    with torch.no_grad():
        out = _predict_batch(x.unsqueeze(0), state)
    return ObjectiveMap(out[0, 0].cpu().numpy())


def freeze_generator(gen: GeneratorState) -> GeneratorState:
    gen.module.eval()
    for p in gen.module.parameters():
        p.requires_grad_(False)
    return gen


def _require_frozen(gen: GeneratorState) -> None:
    if any(p.requires_grad for p in gen.module.parameters()):
        raise ConfigurationError("generator must be frozen before predictor training")


def predictor_loss(
    sample: OoeTrainingSample | list[OoeTrainingSample],
    state: PredictorState,
    gen: GeneratorState,
    weights: PredictorLossWeights,
    tap_weights: LinearTapWeights | None = None,
):
    """Total loss (torch scalar, gradients to the predictor only) plus components."""
    _require_frozen(gen)
    samples = sample if isinstance(sample, list) else [sample]
    if not samples:
        raise DomainError("empty sample batch")
    dtype = next(state.module.parameters()).dtype
    x = torch.stack([torch.from_numpy(np.ascontiguousarray(s.x)) for s in samples]).to(dtype)
    y = torch.stack([torch.from_numpy(np.ascontiguousarray(s.y)) for s in samples]).to(dtype)
    t_star = torch.stack([torch.from_numpy(np.array(s.t_star.values)) for s in samples]).unsqueeze(1).to(dtype)
    pred = _predict_batch(x, state)
    map_term = (pred - t_star).abs().mean()
    sr = gen.module(x, pred)
    rec_term = (sr - y).abs().mean()
    per_term = distance_map_torch(y, sr, state.backbone, tap_weights).mean()
    total = weights.map_weight * map_term + weights.rec_weight * rec_term + weights.perceptual_weight * per_term
    components = {"map": map_term.item(), "rec": rec_term.item(), "perceptual": per_term.item(), "total": total.item()}
    return total, components


@dataclass
class PredictorTrainState:
    predictor: PredictorState
    gen: GeneratorState
    opt: torch.optim.Optimizer

    @classmethod
    def create(cls, predictor: PredictorState, gen: GeneratorState, lr: float = 5e-4):
        freeze_generator(gen)
        return cls(predictor, gen, torch.optim.Adam(predictor.module.parameters(), lr=lr, betas=(0.9, 0.999)))


def train_predictor_step(
    batch: list[OoeTrainingSample],
    train: PredictorTrainState,
    weights: PredictorLossWeights,
    tap_weights: LinearTapWeights | None = None,
) -> dict:
    """One update on the predictor; the generator is a fixed function."""
    train.predictor.module.train()
    total, components = predictor_loss(batch, train.predictor, train.gen, weights, tap_weights)
    if not torch.isfinite(total):
        raise TrainingDiverged("predictor loss is not finite", snapshot={"step": train.predictor.step, **components})
    train.opt.zero_grad(set_to_none=True)
    total.backward()
    train.opt.step()
    train.predictor.step += 1
    return components


def build_oos_dataset(
    gen: GeneratorState,
    dataset: PairedDataset,
    grid: OosGridSpec,
    backbone: Backbone,
    out_dir,
    tap_weights: LinearTapWeights | None = None,
) -> list[Path]:
    """Grid-search every pair, pool to LR, persist map + sidecar; deterministic."""
    out_dir = Path(out_dir)
    gen_digest = gen.digest()
    paths = []
    for hr, lr, name in dataset:
        sel, _scalars = grid_search_oos(gen, lr, hr, grid, backbone, tap_weights)
        t_star = downscale_selection(sel, gen.config.scale)
        path = out_dir / f"{name}.png"
        save_map(
            path,
            t_star.values,
            {
                "kind": "objective",
                "resolution": "LR",
                "grid": list(grid.t_samples),
                "generator_digest": gen_digest,
                "source": name,
            },
        )
        paths.append(path)
    return paths


def load_oos_dataset(maps_dir, dataset: PairedDataset) -> list[OoeTrainingSample]:
    """Pair stored maps with their images by name."""
    maps_dir = Path(maps_dir)
    samples = []
    for hr, lr, name in dataset:
        path = maps_dir / f"{name}.png"
        if not path.is_file():
            raise ArchiveError(f"missing objective map for {name}: {path}")
        values, _meta = load_map(path)
        samples.append(OoeTrainingSample(lr, hr, ObjectiveMap(values), name))
    return samples


def save_predictor(path, state: PredictorState, extra_meta: dict | None = None) -> str:
    arrays = {f"pred.{k}": v for k, v in state.parameter_arrays().items()}
    meta = {
        "kind": "predictor",
        "step": state.step,
        "config": state.config.to_config(),
        "backbone": state.backbone.spec.to_config(),
        "backbone_digest": state.backbone.digest,
    }
    if extra_meta:
        meta.update(extra_meta)
    return save_archive(path, arrays, meta)


def load_predictor(path, backbone: Backbone) -> PredictorState:
    arrays, meta = load_archive(path)
    if meta.get("kind") != "predictor":
        raise DomainError(f"not a predictor checkpoint: {path}")
    if meta.get("backbone_digest") != backbone.digest:
        raise ConfigurationError(
            f"predictor was trained against backbone {meta.get('backbone_digest', '?')[:12]}, "
            f"got {backbone.digest[:12]}"
        )
    cfg = meta["config"]
    config = PredictorConfig(
        decoder_channels=tuple(cfg["decoder_channels"]) if cfg.get("decoder_channels") else None,
        head_channels=cfg.get("head_channels", 16),
    )
    module = OoePredictor(config, backbone.tap_channels)
    module.load_state_dict({k[len("pred.") :]: torch.from_numpy(v) for k, v in arrays.items()})
    return PredictorState(module, backbone, step=int(meta["step"]))
