"""Run configuration: one YAML file, materialized defaults, stable digests.

Every absent key is filled with its default before anything runs, and the
digest is taken over the materialized form, so two configs that mean the same
run hash the same regardless of key order or omitted defaults.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .backbone import BackboneSpec
from .errors import ConfigurationError
from .generator import GeneratorConfig
from .losses import DiscriminatorConfig
from .objective_space import ObjectiveTrajectory, trajectory_from_config
from .oos import OosGridSpec, parse_grid
from .predictor import PredictorConfig, PredictorLossWeights


@dataclass(frozen=True)
class TrainingSettings:
    gen_lr: float = 2e-4
    gen_lr_floor: float = 3e-5
    pretrain_lr: float = 1e-3
    pretrain_lr_floor: float = 1e-4
    predictor_lr: float = 5e-4
    pretrain_steps: int = 1500
    gen_steps: int = 200
    predictor_steps: int = 300
    batch_size: int = 4

    def to_config(self) -> dict:
        return {
            "gen_lr": self.gen_lr,
            "gen_lr_floor": self.gen_lr_floor,
            "pretrain_lr": self.pretrain_lr,
            "pretrain_lr_floor": self.pretrain_lr_floor,
            "predictor_lr": self.predictor_lr,
            "pretrain_steps": self.pretrain_steps,
            "gen_steps": self.gen_steps,
            "predictor_steps": self.predictor_steps,
            "batch_size": self.batch_size,
        }


@dataclass(frozen=True)
class RunConfig:
    scale: int = 4
    seed: int = 0
    lr_patch: int = 16
    hr_patch: int = 64
    train_data: str = "data/train"
    test_data: str = "data/test"
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    predictor_loss: PredictorLossWeights = field(default_factory=PredictorLossWeights)
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    trajectory: dict = field(default_factory=lambda: {"preset": "p1234"})
    grid: str = "0:1:0.05"

    def __post_init__(self):
        if self.hr_patch != self.scale * self.lr_patch:
            raise ConfigurationError(
                f"hr_patch {self.hr_patch} must equal scale {self.scale} x lr_patch {self.lr_patch}"
            )
        if self.discriminator.patch_size != self.hr_patch:
            raise ConfigurationError(
                f"discriminator patch {self.discriminator.patch_size} must equal hr_patch {self.hr_patch}"
            )

    def build_trajectory(self) -> ObjectiveTrajectory:
        return trajectory_from_config(self.trajectory)

    def build_grid(self) -> OosGridSpec:
        return parse_grid(self.grid)

    def materialize(self) -> dict:
        """Every setting explicit, for manifests and digesting."""
        return {
            "scale": self.scale,
            "seed": self.seed,
            "lr_patch": self.lr_patch,
            "hr_patch": self.hr_patch,
            "train_data": str(self.train_data),
            "test_data": str(self.test_data),
            "generator": self.generator.to_config(),
            "discriminator": {
                "base_channels": self.discriminator.base_channels,
                "n_stages": self.discriminator.n_stages,
                "patch_size": self.discriminator.patch_size,
            },
            "predictor": self.predictor.to_config(),
            "predictor_loss": {
                "map": self.predictor_loss.map_weight,
                "rec": self.predictor_loss.rec_weight,
                "perceptual": self.predictor_loss.perceptual_weight,
            },
            "backbone": self.backbone.to_config(),
            "training": self.training.to_config(),
            "trajectory": self.build_trajectory().to_config(),
            "grid": list(self.build_grid().t_samples),
        }

    def digest(self) -> str:
        canon = json.dumps(self.materialize(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _take(mapping: dict, key: str, default):
    value = mapping.get(key, default)
    return default if value is None else value


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config root must be a mapping, got {type(raw).__name__}")
    known = {
        "scale", "seed", "patches", "data", "generator", "discriminator", "predictor",
        "predictor_loss", "backbone", "training", "trajectory", "grid",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    scale = int(_take(raw, "scale", 4))
    patches = _take(raw, "patches", {})
    lr_patch = int(_take(patches, "lr", 16))
    hr_patch = int(_take(patches, "hr", scale * lr_patch))
    data = _take(raw, "data", {})
    gen = _take(raw, "generator", {})
    disc = _take(raw, "discriminator", {})
    pred = _take(raw, "predictor", {})
    ploss = _take(raw, "predictor_loss", {})
    bb = _take(raw, "backbone", {})
    tr = _take(raw, "training", {})
    try:
        return RunConfig(
            scale=scale,
            seed=int(_take(raw, "seed", 0)),
            lr_patch=lr_patch,
            hr_patch=hr_patch,
            train_data=str(_take(data, "train", "data/train")),
            test_data=str(_take(data, "test", "data/test")),
            generator=GeneratorConfig(
                scale=scale,
                n_blocks=int(_take(gen, "n_blocks", 8)),
                channels=int(_take(gen, "channels", 64)),
                cond_channels=int(_take(gen, "cond_channels", 32)),
                sft_heads_per_block=int(_take(gen, "sft_heads_per_block", 2)),
            ),
            discriminator=DiscriminatorConfig(
                base_channels=int(_take(disc, "base_channels", 32)),
                n_stages=int(_take(disc, "n_stages", 4)),
                patch_size=int(_take(disc, "patch_size", hr_patch)),
            ),
            predictor=PredictorConfig(
                decoder_channels=tuple(pred["decoder_channels"]) if pred.get("decoder_channels") else None,
                head_channels=int(_take(pred, "head_channels", 16)),
            ),
            predictor_loss=PredictorLossWeights(
                map_weight=float(_take(ploss, "map", 1.0)),
                rec_weight=float(_take(ploss, "rec", 1e-2)),
                perceptual_weight=float(_take(ploss, "perceptual", 1.0)),
            ),
            backbone=BackboneSpec(
                mode=str(_take(bb, "mode", "surrogate")),
                weights=bb.get("weights"),
                seed=int(_take(bb, "seed", 17)),
                channels=tuple(_take(bb, "channels", (16, 24, 32, 48, 64))),
                mean=tuple(bb["mean"]) if bb.get("mean") else None,
                std=tuple(bb["std"]) if bb.get("std") else None,
            ),
            training=TrainingSettings(
                gen_lr=float(_take(tr, "gen_lr", 2e-4)),
                gen_lr_floor=float(_take(tr, "gen_lr_floor", 3e-5)),
                pretrain_lr=float(_take(tr, "pretrain_lr", 1e-3)),
                pretrain_lr_floor=float(_take(tr, "pretrain_lr_floor", 1e-4)),
                predictor_lr=float(_take(tr, "predictor_lr", 5e-4)),
                pretrain_steps=int(_take(tr, "pretrain_steps", 1500)),
                gen_steps=int(_take(tr, "gen_steps", 200)),
                predictor_steps=int(_take(tr, "predictor_steps", 300)),
                batch_size=int(_take(tr, "batch_size", 4)),
            ),
            trajectory=dict(_take(raw, "trajectory", {"preset": "p1234"})),
            grid=str(_take(raw, "grid", "0:1:0.05")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid config value: {exc}") from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config parse error in {path}: {exc}") from exc
    return config_from_dict(raw)


def validate_config(config: RunConfig, base_dir: Path | None = None) -> list[str]:
    """All problems at once: constructability plus path resolution."""
    problems = []
    base = Path(base_dir) if base_dir else Path.cwd()
    for label, rel in (("train data", config.train_data), ("test data", config.test_data)):
        p = Path(rel)
        if not p.is_absolute():
            p = base / p
        if not p.is_dir():
            problems.append(f"{label} directory not found: {p}")
    if config.backbone.mode == "pretrained":
        if not config.backbone.weights:
            problems.append("pretrained backbone requires backbone.weights")
    try:
        config.build_trajectory()
    except Exception as exc:
        problems.append(f"trajectory: {exc}")
    try:
        config.build_grid()
    except Exception as exc:
        problems.append(f"grid: {exc}")
    return problems
