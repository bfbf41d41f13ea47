"""End-to-end workflows behind the CLI: train, search, predict, infer, report.

Every workflow writes a manifest beside its outputs with the materialized
config, its digest, data digests, seeds, and wall time, so a run can be
re-executed from the manifest alone.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .archive import archive_digest
from .backbone import Backbone, load_backbone
from .config import RunConfig
from .data import PairedDataset, dataset_from_dir, load_image, sample_patches, save_image
from .errors import ConfigurationError, DomainError
from .generator import (
    GeneratorState,
    GeneratorTrainState,
    build_generator,
    cosine_lr,
    freeze_sft_heads,
    load_generator,
    pretrain_generator_step,
    save_generator,
    super_resolve,
    train_generator_step,
)
from .losses import append_loss_log, build_discriminator
from .metrics import EvalRecord, lr_psnr, pd_curve, psnr, ssim
from .objective_space import ObjectiveMap, constant_map
from .oos import OosGridSpec, load_map, perceptual_scalar
from .predictor import (
    PredictorState,
    PredictorTrainState,
    build_oos_dataset,
    build_predictor,
    load_oos_dataset,
    load_predictor,
    predict_map,
    save_predictor,
    train_predictor_step,
)
from .reporting import (
    plot_eval_scatter,
    plot_pd_curve,
    plot_training_curve,
    write_eval_table,
    write_pd_table,
)


def _write_manifest(out_dir: Path, command: str, config: RunConfig, started: float, **extra) -> Path:
    manifest = {
        "command": command,
        "code_version": __version__,
        "config_digest": config.digest(),
        "config": config.materialize(),
        "wall_time_s": round(time.monotonic() - started, 3),
    }
    manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _resolve(base_dir: Path | None, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else (Path(base_dir) if base_dir else Path.cwd()) / p


def _train_batch(dataset: PairedDataset, rng: np.random.Generator, batch_size: int, lr_patch: int, scale: int):
    hrs, lrs = [], []
    while len(hrs) < batch_size:
        hr, lr, _ = dataset[int(rng.integers(0, len(dataset)))]
        patches = sample_patches(hr, lr, rng, lr_patch, scale)
        if patches is None:
            continue
        hp, lp = patches
        hrs.append(torch.from_numpy(hp))
        lrs.append(torch.from_numpy(lp))
    return torch.stack(hrs), torch.stack(lrs)


def run_train_gen(config: RunConfig, out_dir, base_dir=None) -> Path:
    started = time.monotonic()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = dataset_from_dir(_resolve(base_dir, config.train_data), config.scale)
    backbone = load_backbone(config.backbone)
    trajectory = config.build_trajectory()
    gen = build_generator(config.generator, seed=config.seed + 7)
    disc = build_discriminator(config.discriminator, seed=config.seed + 23)
    train = GeneratorTrainState.create(gen, disc, lr=config.training.pretrain_lr, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    log_path = out_dir / "train_gen_log.jsonl"
    log_path.unlink(missing_ok=True)
    pretrain_log = []
    freeze_sft_heads(gen, True)
    n_pre = config.training.pretrain_steps
    for step in range(n_pre):
        train.set_lr(cosine_lr(step, n_pre, config.training.pretrain_lr, config.training.pretrain_lr_floor))
        hr, lr = _train_batch(dataset, rng, config.training.batch_size, config.lr_patch, config.scale)
        pretrain_log.append(pretrain_generator_step(hr, lr, train))
    freeze_sft_heads(gen, False)
    combined = []
    n_traj = config.training.gen_steps
    for step in range(n_traj):
        train.set_lr(cosine_lr(step, n_traj, config.training.gen_lr, config.training.gen_lr_floor))
        hr, lr = _train_batch(dataset, rng, config.training.batch_size, config.lr_patch, config.scale)
        report = train_generator_step(hr, lr, trajectory, train, backbone)
        append_loss_log(log_path, step, report)
        combined.append(report.combined)
    if pretrain_log:
        plot_training_curve(pretrain_log, "pretrain L1", out_dir / "pretrain_loss.png")
    ckpt = out_dir / "generator.otar"
    save_generator(ckpt, gen, extra_meta={"backbone_digest": backbone.digest, "config_digest": config.digest()})
    plot_training_curve(combined, "combined loss", out_dir / "train_gen_loss.png")
    _write_manifest(
        out_dir,
        "train-gen",
        config,
        started,
        seeds={"run": config.seed, "generator": config.seed + 7, "discriminator": config.seed + 23},
        data_digests=dataset.digests(),
        outputs={"checkpoint": ckpt.name, "checkpoint_digest": archive_digest(ckpt)},
    )
    return ckpt


def run_build_oos_maps(config: RunConfig, gen_ckpt, data_dir, out_dir, grid: OosGridSpec | None = None, base_dir=None) -> list[Path]:
    started = time.monotonic()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gen = load_generator(gen_ckpt)
    backbone = load_backbone(config.backbone)
    dataset = dataset_from_dir(_resolve(base_dir, data_dir), config.scale)
    grid = grid or config.build_grid()
    paths = build_oos_dataset(gen, dataset, grid, backbone, out_dir)
    _write_manifest(
        out_dir,
        "build-oos-maps",
        config,
        started,
        seeds={},
        data_digests=dataset.digests(),
        inputs={"generator": str(gen_ckpt), "generator_digest": gen.digest()},
        outputs={"maps": [p.name for p in paths]},
    )
    return paths


def _predictor_batch(samples, rng: np.random.Generator, batch_size: int, lr_patch: int, scale: int):
    from .predictor import OoeTrainingSample

    batch = []
    while len(batch) < batch_size:
        s = samples[int(rng.integers(0, len(samples)))]
        h, w = s.x.shape[-2:]
        if h < lr_patch or w < lr_patch:
            batch.append(s)
            continue
        oy = int(rng.integers(0, h - lr_patch + 1))
        ox = int(rng.integers(0, w - lr_patch + 1))
        x = s.x[..., oy : oy + lr_patch, ox : ox + lr_patch]
        y = s.y[..., oy * scale : (oy + lr_patch) * scale, ox * scale : (ox + lr_patch) * scale]
        t = np.array(s.t_star.values[oy : oy + lr_patch, ox : ox + lr_patch])
        batch.append(OoeTrainingSample(np.ascontiguousarray(x), np.ascontiguousarray(y), ObjectiveMap(t), s.name))
    return batch


def run_train_predictor(config: RunConfig, gen_ckpt, maps_dir, out_dir, base_dir=None) -> Path:
    started = time.monotonic()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gen = load_generator(gen_ckpt)
    gen_digest_before = gen.digest()
    backbone = load_backbone(config.backbone)
    dataset = dataset_from_dir(_resolve(base_dir, config.train_data), config.scale)
    samples = load_oos_dataset(maps_dir, dataset)
    predictor = build_predictor(config.predictor, backbone, seed=config.seed + 11)
    train = PredictorTrainState.create(predictor, gen, lr=config.training.predictor_lr)
    rng = np.random.default_rng(config.seed + 1)
    log_path = out_dir / "train_predictor_log.jsonl"
    log_path.unlink(missing_ok=True)
    map_losses = []
    with open(log_path, "a", encoding="utf-8") as fh:
        for step in range(config.training.predictor_steps):
            batch = _predictor_batch(samples, rng, config.training.batch_size, config.lr_patch, config.scale)
            components = train_predictor_step(batch, train, config.predictor_loss)
            fh.write(json.dumps({"step": step, **components}, sort_keys=True) + "\n")
            map_losses.append(components["map"])
    if gen.digest() != gen_digest_before:
        raise ConfigurationError("generator digest changed during predictor training")
    ckpt = out_dir / "predictor.otar"
    save_predictor(ckpt, predictor, extra_meta={"generator_digest": gen_digest_before, "config_digest": config.digest()})
    plot_training_curve(map_losses, "map loss", out_dir / "train_predictor_loss.png")
    _write_manifest(
        out_dir,
        "train-predictor",
        config,
        started,
        seeds={"run": config.seed, "predictor": config.seed + 11, "batches": config.seed + 1},
        data_digests=dataset.digests(),
        inputs={"generator": str(gen_ckpt), "generator_digest": gen_digest_before, "maps_dir": str(maps_dir)},
        outputs={"checkpoint": ckpt.name, "checkpoint_digest": archive_digest(ckpt)},
    )
    return ckpt


class MapSource:
    """Where objective maps come from at inference: constant, files, or predictor."""

    def __init__(self, descriptor: str, fn):
        self.descriptor = descriptor
        self._fn = fn

    def __call__(self, lr: np.ndarray, name: str) -> ObjectiveMap:
        return self._fn(lr, name)


def resolve_map_source(map_arg: str | None, predictor_ckpt, backbone: Backbone | None) -> MapSource:
    if predictor_ckpt is not None:
        if backbone is None:
            raise ConfigurationError("a predictor map source needs the backbone")
        state = load_predictor(predictor_ckpt, backbone)
        return MapSource("predictor", lambda lr, name: predict_map(lr, state))
    if map_arg is None:
        raise ConfigurationError("need --map const:<t>, --map <file|dir>, or --predictor <ckpt>")
    if map_arg.startswith("const:"):
        t = float(map_arg.split(":", 1)[1])
        return MapSource(f"const:{t:g}", lambda lr, name: constant_map(t, *lr.shape[-2:]))
    path = Path(map_arg)
    if path.is_dir():

        def from_dir(lr, name):
            values, _ = load_map(path / f"{name}.png")
            return ObjectiveMap(values)

        return MapSource(f"maps:{path.name}", from_dir)
    if path.is_file():

        def from_file(lr, name):
            values, _ = load_map(path)
            return ObjectiveMap(values)

        return MapSource(f"map:{path.name}", from_file)
    raise ConfigurationError(f"map source not found: {map_arg}")


def run_infer(config: RunConfig, gen_ckpt, lr_arg, out_dir, map_arg=None, predictor_ckpt=None) -> list[Path]:
    started = time.monotonic()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gen = load_generator(gen_ckpt)
    backbone = load_backbone(config.backbone) if predictor_ckpt else None
    source = resolve_map_source(map_arg, predictor_ckpt, backbone)
    lr_path = Path(lr_arg)
    inputs = sorted(lr_path.glob("*.png")) if lr_path.is_dir() else [lr_path]
    if not inputs:
        raise DomainError(f"no LR images at {lr_arg}")
    outputs = []
    for path in inputs:
        lr = load_image(path)
        map_ = source(lr, path.stem)
        sr = super_resolve(lr, map_, gen).numpy()
        out_path = out_dir / f"{path.stem}_sr.png"
        save_image(out_path, np.clip(sr, 0.0, 1.0))
        outputs.append(out_path)
    _write_manifest(
        out_dir,
        "infer",
        config,
        started,
        seeds={},
        inputs={"generator": str(gen_ckpt), "generator_digest": gen.digest(), "map_source": source.descriptor},
        outputs={"images": [p.name for p in outputs]},
    )
    return outputs


def run_evaluate(config: RunConfig, gen_ckpt, data_dir, out_file, map_arg=None, predictor_ckpt=None, base_dir=None):
    started = time.monotonic()
    out_file = Path(out_file)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    gen = load_generator(gen_ckpt)
    backbone = load_backbone(config.backbone)
    source = resolve_map_source(map_arg, predictor_ckpt, backbone)
    dataset = dataset_from_dir(_resolve(base_dir, data_dir), config.scale)
    records = []
    for hr, lr, name in dataset:
        map_ = source(lr, name)
        sr = np.clip(super_resolve(lr, map_, gen).numpy(), 0.0, 1.0)
        records.append(
            EvalRecord(
                image_id=name,
                descriptor=source.descriptor,
                psnr=psnr(sr, hr),
                ssim=ssim(sr, hr),
                lpips=perceptual_scalar(hr, sr, backbone),
                lr_psnr=lr_psnr(sr, lr, config.scale),
            )
        )
    write_eval_table(out_file, records)
    figure = plot_eval_scatter(records, out_file.with_suffix(".png"))
    _write_manifest(
        out_file.parent,
        "evaluate",
        config,
        started,
        seeds={},
        data_digests=dataset.digests(),
        inputs={"generator": str(gen_ckpt), "generator_digest": gen.digest(), "map_source": source.descriptor},
        outputs={"table": out_file.name, "figure": figure.name},
    )
    return records


def run_pd_curve(config: RunConfig, gen_ckpt, data_dir, out_file, grid: OosGridSpec | None = None, base_dir=None):
    started = time.monotonic()
    out_file = Path(out_file)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    gen = load_generator(gen_ckpt)
    backbone = load_backbone(config.backbone)
    dataset = dataset_from_dir(_resolve(base_dir, data_dir), config.scale)
    grid = grid or config.build_grid()
    curve = pd_curve(gen, dataset, grid, backbone)
    write_pd_table(out_file, curve)
    figure = plot_pd_curve(curve, out_file.with_suffix(".png"))
    _write_manifest(
        out_file.parent,
        "pd-curve",
        config,
        started,
        seeds={},
        data_digests=dataset.digests(),
        inputs={"generator": str(gen_ckpt), "generator_digest": gen.digest(), "grid": grid.describe()},
        outputs={"table": out_file.name, "figure": figure.name},
    )
    return curve
