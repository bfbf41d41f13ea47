"""Frozen multi-tap feature extractor behind perceptual losses and distance maps.

Two interchangeable modes share the 5-tap contract (one tap per vision
level, spatial size halving at each deeper tap): a small seeded surrogate
network for desk-scale work, and a full-scale 19-layer column loaded from
a portable weight archive.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .archive import digest_of_arrays, load_archive
from .errors import ArchiveError, DomainError
from .objective_space import N_LEVELS, PERCEPTUAL_LEVELS

SURROGATE_CHANNELS = (16, 24, 32, 48, 64)
VGG19_TAP_CHANNELS = (64, 128, 256, 512, 512)

SURROGATE_MEAN = (0.5, 0.5, 0.5)
SURROGATE_STD = (0.5, 0.5, 0.5)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

CACHE_ENV_VAR = "OBJTRAJ_CACHE"


@dataclass(frozen=True)
class BackboneSpec:
    mode: str = "surrogate"  # surrogate | pretrained
    weights: str | None = None  # archive path, pretrained mode only
    seed: int = 17
    channels: tuple[int, ...] = SURROGATE_CHANNELS
    mean: tuple[float, float, float] | None = None
    std: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.mode not in ("surrogate", "pretrained"):
            raise DomainError(f"unknown backbone mode {self.mode!r}")
        if len(self.channels) != N_LEVELS:
            raise DomainError(f"backbone needs {N_LEVELS} tap widths")
        defaults = (SURROGATE_MEAN, SURROGATE_STD) if self.mode == "surrogate" else (IMAGENET_MEAN, IMAGENET_STD)
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "mean", tuple(self.mean) if self.mean else defaults[0])
        object.__setattr__(self, "std", tuple(self.std) if self.std else defaults[1])

    def to_config(self) -> dict:
        return {
            "mode": self.mode,
            "weights": self.weights,
            "seed": self.seed,
            "channels": list(self.channels),
            "mean": list(self.mean),
            "std": list(self.std),
        }


class FeatureTaps:
    """Ordered multi-level feature grids, shallow to deep."""

    def __init__(self, taps):
        taps = tuple(taps)
        if len(taps) != N_LEVELS:
            raise DomainError(f"expected {N_LEVELS} taps, got {len(taps)}")
        for shallow, deep in zip(taps, taps[1:]):
            if deep.shape[-1] > shallow.shape[-1] or deep.shape[-2] > shallow.shape[-2]:
                raise DomainError("tap spatial sizes must not grow with depth")
        self.taps = taps

    def __iter__(self):
        return iter(self.taps)

    def __getitem__(self, level: int):
        return self.taps[level]

    def __len__(self):
        return len(self.taps)

    @property
    def shapes(self):
        return tuple(tuple(t.shape) for t in self.taps)


class _SurrogateNet(nn.Module):
    """Five conv stages; stage k ends in tap k, halving resolution from stage 2 on."""

    def __init__(self, channels=SURROGATE_CHANNELS):
        super().__init__()
        stages = []
        in_ch = 3
        for i, out_ch in enumerate(channels):
            stride = 1 if i == 0 else 2
            stages.append(
                nn.Sequential(
                    nn.Conv2d(in_ch, out_ch, 3, stride, 1),
                    nn.LeakyReLU(0.2, inplace=True),
                    nn.Conv2d(out_ch, out_ch, 3, 1, 1),
                    nn.LeakyReLU(0.2, inplace=True),
                )
            )
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)

    def forward(self, x):
        taps = []
        for stage in self.stages:
            x = stage(x)
            taps.append(x)
        return taps


_VGG19_CFG = (64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M", 512, 512, 512, 512, "M", 512, 512, 512, 512)
_VGG19_TAP_CONVS = (2, 4, 8, 12, 16)  # taps follow the activation of these conv counts


class _Vgg19Taps(nn.Module):
    """Standard 19-layer conv column; taps after the relu of convs 2/4/8/12/16."""

    def __init__(self):
        super().__init__()
        layers = []
        tap_indices = []
        in_ch = 3
        conv_count = 0
        for item in _VGG19_CFG:
            if item == "M":
                layers.append(nn.MaxPool2d(2, 2))
            else:
                layers.append(nn.Conv2d(in_ch, item, 3, 1, 1))
                layers.append(nn.ReLU(inplace=True))
                in_ch = item
                conv_count += 1
                if conv_count in _VGG19_TAP_CONVS:
                    tap_indices.append(len(layers) - 1)
        self.features = nn.Sequential(*layers)
        self.tap_indices = tuple(tap_indices)

    def forward(self, x):
        taps = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self.tap_indices:
                taps.append(x)
        return taps


def _seeded_init(module: nn.Module, seed: int) -> None:
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            if p.dim() > 1:
                fan_in = p[0].numel()
                p.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=g)
            else:
                p.zero_()


class Backbone:
    """Immutable handle around a frozen tap extractor."""

    def __init__(self, module: nn.Module, spec: BackboneSpec, digest: str, min_input: int):
        module.eval()
        for p in module.parameters():
            p.requires_grad_(False)
        self.module = module
        self.spec = spec
        self.digest = digest
        self.min_input = min_input
        self._mean = torch.tensor(spec.mean).view(1, 3, 1, 1)
        self._std = torch.tensor(spec.std).view(1, 3, 1, 1)

    @property
    def tap_channels(self) -> tuple[int, ...]:
        return tuple(self.spec.channels) if self.spec.mode == "surrogate" else VGG19_TAP_CHANNELS

    def recompute_digest(self) -> str:
        arrays = {k: v.detach().cpu().numpy() for k, v in self.module.state_dict().items()}
        return digest_of_arrays(arrays)

    def to(self, dtype: torch.dtype) -> "Backbone":
        """Same weights at a different precision (used by gradient probes)."""
        clone = Backbone.__new__(Backbone)
        clone.module = _clone_module(self.module, dtype)
        for p in clone.module.parameters():
            p.requires_grad_(False)
        clone.spec = self.spec
        clone.digest = self.digest
        clone.min_input = self.min_input
        clone._mean = self._mean.to(dtype)
        clone._std = self._std.to(dtype)
        return clone

    def extract(self, image) -> FeatureTaps:
        return extract_taps(image, self)


def _clone_module(module: nn.Module, dtype: torch.dtype) -> nn.Module:
    import copy

    clone = copy.deepcopy(module)
    return clone.to(dtype).eval()


def _as_batched(image, dtype: torch.dtype):
    if isinstance(image, np.ndarray):
        image = torch.from_numpy(np.ascontiguousarray(image))
    image = image.to(dtype) if image.dtype != dtype else image
    if image.dim() == 3:
        return image.unsqueeze(0), True
    if image.dim() == 4:
        return image, False
    raise DomainError(f"expected a (3,H,W) or (B,3,H,W) image, got shape {tuple(image.shape)}")


def extract_taps(image, backbone: Backbone) -> FeatureTaps:
    """Run the frozen extractor; gradients flow to the input, never the weights."""
    dtype = next(backbone.module.parameters()).dtype
    batched, squeeze = _as_batched(image, dtype)
    if batched.shape[1] != 3:
        raise DomainError(f"backbone input must have 3 channels, got {batched.shape[1]}")
    h, w = batched.shape[-2:]
    if h < backbone.min_input or w < backbone.min_input:
        raise DomainError(
            f"backbone input {h}x{w} below minimum size {backbone.min_input}x{backbone.min_input}"
        )
    normed = (batched - backbone._mean.to(batched.device)) / backbone._std.to(batched.device)
    taps = backbone.module(normed)
    if squeeze:
        taps = [t.squeeze(0) for t in taps]
    return FeatureTaps(taps)


def _resolve_weights_path(weights: str) -> Path:
    p = Path(weights)
    if p.is_file():
        return p
    cache = os.environ.get(CACHE_ENV_VAR)
    if cache:
        candidate = Path(cache) / weights
        if candidate.is_file():
            return candidate
    raise ArchiveError(f"backbone weight file not found: {weights}")


def load_backbone(spec: BackboneSpec) -> Backbone:
    """Build the frozen extractor for a spec; digest recorded for reproducibility."""
    if spec.mode == "surrogate":
        module = _SurrogateNet(spec.channels)
        _seeded_init(module, spec.seed)
        arrays = {k: v.numpy() for k, v in module.state_dict().items()}
        return Backbone(module, spec, digest_of_arrays(arrays), min_input=8)
    if spec.weights is None:
        raise ArchiveError("pretrained backbone requires a weight archive path")
    path = _resolve_weights_path(spec.weights)
    arrays, _meta = load_archive(path)
    module = _Vgg19Taps()
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    module.load_state_dict(state)
    return Backbone(module, spec, digest_of_arrays(arrays), min_input=16)


def save_vgg19_archive(path: str | Path, seed: int = 0) -> str:
    """Write a full-scale-layout weight archive (seeded init; stand-in weights)."""
    module = _Vgg19Taps()
    _seeded_init(module, seed)
    arrays = {k: v.numpy() for k, v in module.state_dict().items()}
    from .archive import save_archive

    return save_archive(path, arrays, meta={"layout": "vgg19-taps", "seed": seed, "taps": list(PERCEPTUAL_LEVELS)})
