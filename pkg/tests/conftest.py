"""Shared fixtures: repo paths, the desk config, and cached smoke-pipeline runs."""

import json
from pathlib import Path

import pytest

from objtraj.config import load_config

REPO_ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = REPO_ROOT / "configs"
DESK_CONFIG = CONFIG_DIR / "desk.yaml"
TOY_TRAIN_DIR = REPO_ROOT / "data" / "toy" / "train"
TOY_TEST_DIR = REPO_ROOT / "data" / "toy" / "test"


@pytest.fixture(scope="session")
def desk_config():
    return load_config(DESK_CONFIG)


def _read_log(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


def run_smoke_pipeline(config, root: Path) -> dict:
    """One seeded end-to-end run: train-gen, build-oos-maps over the train
    split, train-predictor, evaluate under the predictor, pd-curve on the
    test split. Returns every artifact the acceptance criteria inspect."""
    from objtraj.workflows import (
        run_build_oos_maps,
        run_evaluate,
        run_pd_curve,
        run_train_gen,
        run_train_predictor,
    )

    gen_ckpt = run_train_gen(config, root / "gen", base_dir=CONFIG_DIR)
    map_paths = run_build_oos_maps(config, gen_ckpt, config.train_data, root / "maps", base_dir=CONFIG_DIR)
    pred_ckpt = run_train_predictor(config, gen_ckpt, root / "maps", root / "pred", base_dir=CONFIG_DIR)
    eval_table = root / "eval" / "eval_predictor.tsv"
    records = run_evaluate(config, gen_ckpt, config.test_data, eval_table, predictor_ckpt=pred_ckpt, base_dir=CONFIG_DIR)
    curve_table = root / "curve" / "pd_curve.tsv"
    curve = run_pd_curve(config, gen_ckpt, config.test_data, curve_table, base_dir=CONFIG_DIR)
    wall = {}
    for label, sub in (("train_gen", "gen"), ("train_predictor", "pred")):
        manifest = json.loads((root / sub / "manifest.json").read_text(encoding="utf-8"))
        wall[label] = manifest["wall_time_s"]
    return {
        "config": config,
        "root": root,
        "gen_ckpt": gen_ckpt,
        "map_paths": map_paths,
        "pred_ckpt": pred_ckpt,
        "eval_records": records,
        "eval_table": eval_table,
        "curve": curve,
        "curve_table": curve_table,
        "gen_log": _read_log(root / "gen" / "train_gen_log.jsonl"),
        "pred_log": _read_log(root / "pred" / "train_predictor_log.jsonl"),
        "wall": wall,
    }


@pytest.fixture(scope="session")
def smoke_run(desk_config, tmp_path_factory):
    return run_smoke_pipeline(desk_config, tmp_path_factory.mktemp("smoke_a"))


@pytest.fixture(scope="session")
def smoke_run_repeat(desk_config, tmp_path_factory):
    # Same seed, fresh directories; the reproducibility criterion compares the two.
    return run_smoke_pipeline(desk_config, tmp_path_factory.mktemp("smoke_b"))
