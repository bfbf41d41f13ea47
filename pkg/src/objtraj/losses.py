"""Reconstruction, per-level perceptual, and relativistic adversarial losses.

The combination contract is central: a LossReport's combined value is the dot
product of the objective weight vector with the component losses, enforced at
construction. Elementwise variants back the per-sample t weighting used by
generator training.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import Backbone, _seeded_init, extract_taps
from .errors import DomainError
from .objective_space import N_LEVELS, ObjectiveWeights


@dataclass(frozen=True)
class LossReport:
    rec: float
    per_levels: tuple[float, ...]
    adv_gen: float
    adv_disc: float
    combined: float
    weights_used: ObjectiveWeights
    t_used: float

    def __post_init__(self):
        object.__setattr__(self, "per_levels", tuple(float(p) for p in self.per_levels))
        if len(self.per_levels) != N_LEVELS:
            raise DomainError(f"expected {N_LEVELS} perceptual entries, got {len(self.per_levels)}")
        values = (self.rec, *self.per_levels, self.adv_gen, self.adv_disc, self.combined, self.t_used)
        if not all(math.isfinite(v) for v in values):
            raise DomainError(f"non-finite loss report: {values}")
        expected = self.expected_combined()
        tol = 1e-10 * max(1.0, abs(expected))
        if abs(self.combined - expected) > tol:
            raise DomainError(f"combined {self.combined!r} != weighted sum {expected!r}")

    def expected_combined(self) -> float:
        w = self.weights_used
        return w.rec * self.rec + w.adv * self.adv_gen + sum(wl * pl for wl, pl in zip(w.per, self.per_levels))

    @classmethod
    def from_components(cls, rec, per_levels, adv_gen, adv_disc, weights: ObjectiveWeights, t_used: float):
        per = tuple(float(p) for p in per_levels)
        combined = weights.rec * float(rec) + weights.adv * float(adv_gen) + sum(
            wl * pl for wl, pl in zip(weights.per, per)
        )
        return cls(float(rec), per, float(adv_gen), float(adv_disc), combined, weights, float(t_used))

    def log_record(self, step: int) -> dict:
        return {
            "step": step,
            "t": self.t_used,
            "rec": self.rec,
            "per": list(self.per_levels),
            "adv_gen": self.adv_gen,
            "adv_disc": self.adv_disc,
            "combined": self.combined,
            "weights": list(self.weights_used.as_vector()),
        }


def append_loss_log(path: str | Path, step: int, report: LossReport) -> None:
    """One structured record per training step, line-delimited."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(report.log_record(step), sort_keys=True) + "\n")


def _check_same_shape(sr: torch.Tensor, hr: torch.Tensor) -> None:
    if sr.shape != hr.shape:
        raise DomainError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")


def rec_loss(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all pixels and channels."""
    _check_same_shape(sr, hr)
    return (sr - hr).abs().mean()


def elementwise_rec(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    _check_same_shape(sr, hr)
    return (sr - hr).abs().mean(dim=(1, 2, 3))


def perceptual_level_loss(sr: torch.Tensor, hr: torch.Tensor, level: int, backbone: Backbone) -> torch.Tensor:
    """L1 between the taps of one vision level."""
    if not 0 <= level < N_LEVELS:
        raise DomainError(f"perceptual level must be 0..{N_LEVELS - 1}, got {level}")
    _check_same_shape(sr, hr)
    tap_sr = extract_taps(sr, backbone)[level]
    tap_hr = extract_taps(hr, backbone)[level]
    return (tap_sr - tap_hr).abs().mean()


def elementwise_per_levels(sr: torch.Tensor, hr: torch.Tensor, backbone: Backbone) -> torch.Tensor:
    """All level losses at once, one backbone pass per image; shape (B, 5)."""
    _check_same_shape(sr, hr)
    taps_sr = extract_taps(sr, backbone)
    taps_hr = extract_taps(hr, backbone)
    cols = [(a - b).abs().mean(dim=(1, 2, 3)) for a, b in zip(taps_sr, taps_hr)]
    return torch.stack(cols, dim=1)


def elementwise_adversarial(real_logits: torch.Tensor, fake_logits: torch.Tensor):
    """Relativistic-average GAN terms per element; returns (gen (B,), disc (B,))."""
    real = real_logits.reshape(-1)
    fake = fake_logits.reshape(-1)
    if real.numel() == 0 or fake.numel() == 0:
        raise DomainError("adversarial losses need nonempty logit batches")
    rel_rf = real - fake.mean()
    rel_fr = fake - real.mean()
    gen = 0.5 * (F.softplus(rel_rf) + F.softplus(-rel_fr))
    disc = 0.5 * (F.softplus(-rel_rf) + F.softplus(rel_fr))
    return gen, disc


def adversarial_losses(real_logits: torch.Tensor, fake_logits: torch.Tensor):
    """Batch-mean relativistic-average losses; gen falls as fakes overtake reals."""
    gen, disc = elementwise_adversarial(real_logits, fake_logits)
    return gen.mean(), disc.mean()


def combined_loss(
    sr: torch.Tensor,
    hr: torch.Tensor,
    real_logits: torch.Tensor,
    fake_logits: torch.Tensor,
    weights: ObjectiveWeights,
    backbone: Backbone,
    t_used: float = 0.0,
) -> LossReport:
    """All components under one weight vector, reported with the dot-product contract."""
    if sr.dim() == 3:
        sr, hr = sr.unsqueeze(0), hr.unsqueeze(0)
    rec = elementwise_rec(sr, hr).mean()
    per = elementwise_per_levels(sr, hr, backbone).mean(dim=0)
    adv_gen, adv_disc = adversarial_losses(real_logits, fake_logits)
    return LossReport.from_components(
        rec.item(),
        [p.item() for p in per],
        adv_gen.item(),
        adv_disc.item(),
        weights,
        t_used=t_used,
    )


@dataclass(frozen=True)
class DiscriminatorConfig:
    base_channels: int = 32
    n_stages: int = 4
    patch_size: int = 64

    def __post_init__(self):
        if self.base_channels < 1 or self.n_stages < 1 or self.patch_size < 1:
            raise DomainError("discriminator config fields must be positive")


class Discriminator(nn.Module):
    """Strided conv column with a mean-reduced single-logit head; no norm layers."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        layers = []
        in_ch, ch = 3, config.base_channels
        for _ in range(config.n_stages):
            layers += [
                nn.Conv2d(in_ch, ch, 3, 1, 1),
                nn.LeakyReLU(0.2, inplace=True),
                nn.Conv2d(ch, ch, 3, 2, 1),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            in_ch, ch = ch, min(ch * 2, 256)
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv2d(in_ch, 1, 3, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        h, w = x.shape[-2:]
        if (h, w) != (self.config.patch_size, self.config.patch_size):
            raise DomainError(f"discriminator expects {self.config.patch_size}px patches, got {h}x{w}")
        logits = self.head(self.body(x)).mean(dim=(1, 2, 3))
        return logits[0] if squeeze else logits


def build_discriminator(config: DiscriminatorConfig, seed: int = 23) -> Discriminator:
    disc = Discriminator(config)
    _seeded_init(disc, seed)
    return disc


def discriminate(image: torch.Tensor, disc: Discriminator) -> torch.Tensor:
    """Logit(s) for an image or batch; deterministic in eval mode."""
    return disc(image)
