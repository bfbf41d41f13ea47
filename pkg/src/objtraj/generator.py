"""Conditioned SR generator: residual blocks modulated by map-driven SFT layers.

The condition branch encodes an LR-sized objective map once; every SFT site
reuses that encoding through its own zero-initialized head, so an untrained
generator is exactly map-invariant and conditioning is learned, not wired in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .archive import digest_of_arrays, load_archive, save_archive
from .backbone import Backbone, _seeded_init
from .errors import DomainError, TrainingDiverged
from .losses import (
    Discriminator,
    LossReport,
    elementwise_adversarial,
    elementwise_per_levels,
    elementwise_rec,
)
from .objective_space import ObjectiveMap, ObjectiveTrajectory, ObjectiveWeights, constant_map


@dataclass(frozen=True)
class GeneratorConfig:
    scale: int = 4
    n_blocks: int = 8
    channels: int = 64
    cond_channels: int = 32
    sft_heads_per_block: int = 2

    def __post_init__(self):
        if self.scale not in (2, 4):
            raise DomainError(f"scale must be 2 or 4, got {self.scale}")
        if self.n_blocks < 1:
            raise DomainError("n_blocks must be >= 1")
        if self.channels < 8:
            raise DomainError("channels must be >= 8")

    def to_config(self) -> dict:
        return {
            "scale": self.scale,
            "n_blocks": self.n_blocks,
            "channels": self.channels,
            "cond_channels": self.cond_channels,
            "sft_heads_per_block": self.sft_heads_per_block,
        }


class SftLayer(nn.Module):
    """out = features * (1 + gamma) + delta; head zero-init makes this identity."""

    def __init__(self, cond_channels: int, channels: int):
        super().__init__()
        self.head = nn.Conv2d(cond_channels, 2 * channels, 3, 1, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, features: torch.Tensor, conditions: torch.Tensor) -> torch.Tensor:
        if features.shape[-2:] != conditions.shape[-2:]:
            raise DomainError(
                f"feature grid {tuple(features.shape[-2:])} vs condition grid {tuple(conditions.shape[-2:])}"
            )
        gamma, delta = self.head(conditions).chunk(2, dim=1)
        return features * (1.0 + gamma) + delta


def sft_modulate(features: torch.Tensor, conditions: torch.Tensor, head: SftLayer) -> torch.Tensor:
    return head(features, conditions)


class _SftResBlock(nn.Module):
    def __init__(self, channels: int, cond_channels: int):
        super().__init__()
        self.sft0 = SftLayer(cond_channels, channels)
        self.conv0 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.sft1 = SftLayer(cond_channels, channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = F.leaky_relu(self.conv0(self.sft0(x, cond)), 0.2)
        h = self.conv1(self.sft1(h, cond))
        return x + h


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        c, cc = config.channels, config.cond_channels
        self.cond_branch = nn.Sequential(
            nn.Conv2d(1, cc, 3, 1, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(cc, cc, 3, 1, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(cc, cc, 3, 1, 1),
        )
        self.conv_first = nn.Conv2d(3, c, 3, 1, 1)
        self.blocks = nn.ModuleList(_SftResBlock(c, cc) for _ in range(config.n_blocks))
        self.trunk_conv = nn.Conv2d(c, c, 3, 1, 1)
        up = []
        for _ in range(config.scale // 2):
            up += [nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(c, c, 3, 1, 1), nn.LeakyReLU(0.2, True)]
        self.upsampler = nn.Sequential(*up)
        self.conv_hr = nn.Conv2d(c, c, 3, 1, 1)
        self.conv_last = nn.Conv2d(c, 3, 3, 1, 1)

    def forward(self, x: torch.Tensor, cond_map: torch.Tensor) -> torch.Tensor:
        cond = self.cond_branch(cond_map)
        feat = self.conv_first(x)
        h = feat
        for block in self.blocks:
            h = block(h, cond)
        h = feat + self.trunk_conv(h)
        h = self.upsampler(h)
        return self.conv_last(F.leaky_relu(self.conv_hr(h), 0.2))


@dataclass
class GeneratorState:
    """Module plus step counter; checkpoints round-trip bit-exact."""

    module: Generator
    step: int = 0

    @property
    def config(self) -> GeneratorConfig:
        return self.module.config

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy() for k, v in self.module.state_dict().items()}

    def digest(self) -> str:
        return digest_of_arrays(self.parameter_arrays())


def build_generator(config: GeneratorConfig, seed: int = 7) -> GeneratorState:
    """Seeded init for the SR path; SFT heads stay zero (identity at init)."""
    module = Generator(config)
    _seeded_init(module, seed)
    for block in module.blocks:
        for sft in (block.sft0, block.sft1):
            nn.init.zeros_(sft.head.weight)
            nn.init.zeros_(sft.head.bias)
    return GeneratorState(module)


def sft_head_parameters(state: GeneratorState):
    for block in state.module.blocks:
        for sft in (block.sft0, block.sft1):
            yield from sft.head.parameters()


def freeze_sft_heads(state: GeneratorState, frozen: bool = True) -> None:
    """Pretraining keeps the heads at zero so the warm start is map-invariant."""
    for p in sft_head_parameters(state):
        p.requires_grad_(not frozen)


def cosine_lr(step: int, total: int, peak: float, floor: float = 0.0) -> float:
    """Half-cosine decay from peak (step 0) to floor (step total)."""
    if total < 1 or not 0 <= step <= total:
        raise DomainError(f"cosine schedule needs 0 <= step <= total, got {step}/{total}")
    return floor + 0.5 * (peak - floor) * (1.0 + np.cos(np.pi * step / total))


def _map_batch(maps, batch: int, h: int, w: int, dtype, device) -> torch.Tensor:
    if isinstance(maps, ObjectiveMap):
        arr = torch.from_numpy(np.array(maps.values))
        return arr.to(dtype=dtype, device=device).view(1, 1, h, w).expand(batch, 1, h, w)
    if isinstance(maps, torch.Tensor):
        return maps.to(dtype=dtype, device=device)
    raise DomainError(f"unsupported map type {type(maps).__name__}")


def condition_branch(map_: ObjectiveMap, state: GeneratorState) -> torch.Tensor:
    """Shared condition features reused by every SFT layer."""
    h, w = map_.shape
    dtype = next(state.module.parameters()).dtype
    grid = _map_batch(map_, 1, h, w, dtype, "cpu")
    with torch.no_grad():
        return state.module.cond_branch(grid).squeeze(0)


def super_resolve(x, map_: ObjectiveMap | torch.Tensor, state: GeneratorState) -> torch.Tensor:
    """SR output at scale x input size; eval mode, no grad, not clamped."""
    module = state.module
    module.eval()
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x))
    dtype = next(module.parameters()).dtype
    x = x.to(dtype)
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    b, _, h, w = x.shape
    if isinstance(map_, ObjectiveMap) and map_.shape != (h, w):
        raise DomainError(f"objective map {map_.shape} does not match LR input {(h, w)}")
    cond_map = _map_batch(map_, b, h, w, dtype, x.device)
    if cond_map.shape[-2:] != (h, w):
        raise DomainError(f"objective map {tuple(cond_map.shape[-2:])} does not match LR input {(h, w)}")
    with torch.no_grad():
        out = module(x, cond_map)
    return out.squeeze(0) if squeeze else out


@dataclass
class GeneratorTrainState:
    """Everything one training run owns: models, optimizers, RNG, counters."""

    gen: GeneratorState
    disc: Discriminator
    opt_gen: torch.optim.Optimizer
    opt_disc: torch.optim.Optimizer
    rng: torch.Generator

    @classmethod
    def create(cls, gen: GeneratorState, disc: Discriminator, lr: float = 2e-4, seed: int = 0):
        return cls(
            gen=gen,
            disc=disc,
            opt_gen=torch.optim.Adam(gen.module.parameters(), lr=lr, betas=(0.9, 0.999)),
            opt_disc=torch.optim.Adam(disc.parameters(), lr=lr, betas=(0.9, 0.999)),
            rng=torch.Generator().manual_seed(seed),
        )

    def set_lr(self, gen_lr: float, disc_lr: float | None = None) -> None:
        for group in self.opt_gen.param_groups:
            group["lr"] = gen_lr
        for group in self.opt_disc.param_groups:
            group["lr"] = gen_lr if disc_lr is None else disc_lr


def pretrain_generator_step(hr: torch.Tensor, lr: torch.Tensor, train: GeneratorTrainState) -> float:
    """Plain L1 warmup under the t=0 map; gives the trajectory phase a
    distortion-oriented starting point (standard GAN-SR practice)."""
    module = train.gen.module
    module.train()
    b, _, h, w = lr.shape
    cond = torch.zeros(b, 1, h, w, dtype=lr.dtype)
    sr = module(lr, cond)
    loss = (sr - hr).abs().mean()
    if not torch.isfinite(loss):
        raise TrainingDiverged("pretrain loss is not finite", snapshot={"step": train.gen.step})
    train.opt_gen.zero_grad(set_to_none=True)
    loss.backward()
    train.opt_gen.step()
    return loss.item()


def train_generator_step(
    hr: torch.Tensor,
    lr: torch.Tensor,
    trajectory: ObjectiveTrajectory,
    train: GeneratorTrainState,
    backbone: Backbone,
) -> LossReport:
    """One generator update and one discriminator update.

    Each batch element draws its own t; its spatially constant map and weight
    vector follow from the trajectory. The optimized scalar is the mean of the
    per-element weighted sums; the report carries batch-mean components under
    the batch-mean weight vector.
    """
    if hr.numel() == 0 or lr.numel() == 0:
        raise DomainError("empty training batch")
    module = train.gen.module
    module.train()
    train.disc.train()
    b, _, h, w = lr.shape
    ts = torch.rand(b, generator=train.rng, dtype=torch.float64).tolist()
    weights = [trajectory.evaluate(t) for t in ts]
    wmat = torch.from_numpy(np.stack([w.as_vector() for w in weights])).to(hr.dtype)  # (B, 7)
    cond = torch.tensor(ts, dtype=hr.dtype).view(b, 1, 1, 1).expand(b, 1, h, w)

    sr = module(lr, cond)
    rec = elementwise_rec(sr, hr)
    per = elementwise_per_levels(sr, hr, backbone)
    real_logits = train.disc(hr)
    fake_logits = train.disc(sr)
    adv_gen, _ = elementwise_adversarial(real_logits, fake_logits)
    total = (wmat[:, 0] * rec + wmat[:, 1] * adv_gen + (wmat[:, 2:] * per).sum(dim=1)).mean()
    if not torch.isfinite(total):
        raise TrainingDiverged(
            "generator loss is not finite",
            snapshot={"step": train.gen.step, "ts": ts, "rec": rec.tolist(), "adv": adv_gen.tolist()},
        )
    train.opt_gen.zero_grad(set_to_none=True)
    train.opt_disc.zero_grad(set_to_none=True)
    total.backward()
    train.opt_gen.step()

    real_logits = train.disc(hr)
    fake_logits = train.disc(sr.detach())
    _, adv_disc = elementwise_adversarial(real_logits, fake_logits)
    disc_loss = adv_disc.mean()
    if not torch.isfinite(disc_loss):
        raise TrainingDiverged("discriminator loss is not finite", snapshot={"step": train.gen.step})
    train.opt_disc.zero_grad(set_to_none=True)
    disc_loss.backward()
    train.opt_disc.step()
    train.gen.step += 1

    mean_w = ObjectiveWeights.from_vector(wmat.mean(dim=0).tolist())
    return LossReport.from_components(
        rec.mean().item(),
        per.mean(dim=0).tolist(),
        adv_gen.mean().item(),
        disc_loss.item(),
        mean_w,
        t_used=float(np.mean(ts)),
    )


def save_generator(path, state: GeneratorState, extra_meta: dict | None = None, optimizers: dict | None = None) -> str:
    arrays = {f"gen.{k}": v for k, v in state.parameter_arrays().items()}
    if optimizers:
        for name, opt in optimizers.items():
            for k, v in _optimizer_arrays(opt).items():
                arrays[f"opt.{name}.{k}"] = v
    meta = {
        "kind": "generator",
        "step": state.step,
        "config": state.config.to_config(),
        "params_digest": state.digest(),
    }
    if extra_meta:
        meta.update(extra_meta)
    return save_archive(path, arrays, meta)


def load_generator(path) -> GeneratorState:
    arrays, meta = load_archive(path)
    if meta.get("kind") != "generator":
        raise DomainError(f"not a generator checkpoint: {path}")
    config = GeneratorConfig(**meta["config"])
    module = Generator(config)
    state = {k[len("gen.") :]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("gen.")}
    module.load_state_dict(state)
    return GeneratorState(module, step=int(meta["step"]))


def _optimizer_arrays(opt: torch.optim.Optimizer) -> dict[str, np.ndarray]:
    out = {}
    for pid, slots in opt.state_dict()["state"].items():
        for slot, val in slots.items():
            arr = val.detach().cpu().numpy() if isinstance(val, torch.Tensor) else np.asarray(val)
            out[f"{pid}.{slot}"] = arr
    return out
