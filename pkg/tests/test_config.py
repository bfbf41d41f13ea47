import pytest

from objtraj.config import config_from_dict, load_config, validate_config
from objtraj.errors import ConfigurationError

from conftest import CONFIG_DIR


def test_empty_dict_gives_defaults():
    cfg = config_from_dict({})
    assert cfg.scale == 4 and cfg.lr_patch == 16 and cfg.hr_patch == 64
    assert cfg.generator.n_blocks == 8
    assert cfg.backbone.mode == "surrogate"
    assert cfg.build_grid().t_samples[0] == 0.0 and cfg.build_grid().t_samples[-1] == 1.0


def test_digest_ignores_key_order_and_omitted_defaults(tmp_path):
    sparse = tmp_path / "sparse.yaml"
    sparse.write_text("seed: 3\nscale: 4\n", encoding="utf-8")
    verbose = tmp_path / "verbose.yaml"
    verbose.write_text("scale: 4\nseed: 3\ntraining:\n  batch_size: 4\n", encoding="utf-8")
    assert load_config(sparse).digest() == load_config(verbose).digest()


def test_digest_changes_with_settings():
    assert config_from_dict({}).digest() != config_from_dict({"seed": 1}).digest()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigurationError, match="unknown config keys"):
        config_from_dict({"sceed": 1})


def test_non_mapping_root_rejected():
    with pytest.raises(ConfigurationError, match="mapping"):
        config_from_dict([1, 2])


def test_explicit_null_falls_back_to_default(tmp_path):
    path = tmp_path / "null.yaml"
    path.write_text("training:\n  gen_lr: null\n", encoding="utf-8")
    assert load_config(path).training.gen_lr == 2e-4


def test_patch_coupling_enforced():
    with pytest.raises(ConfigurationError, match="hr_patch"):
        config_from_dict({"patches": {"lr": 16, "hr": 60}})
    with pytest.raises(ConfigurationError, match="discriminator patch"):
        config_from_dict({"discriminator": {"patch_size": 32}})


def test_invalid_value_reported():
    with pytest.raises(ConfigurationError, match="invalid config value"):
        config_from_dict({"seed": "not-a-number"})


def test_missing_file_and_parse_error(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("training: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigurationError, match="parse error"):
        load_config(bad)


def test_validate_collects_all_problems(tmp_path):
    cfg = config_from_dict(
        {
            "data": {"train": "nowhere/train", "test": "nowhere/test"},
            "backbone": {"mode": "pretrained"},
        }
    )
    problems = validate_config(cfg, base_dir=tmp_path)
    assert len(problems) == 3
    assert sum("directory not found" in p for p in problems) == 2
    assert any("backbone.weights" in p for p in problems)


def test_shipped_configs_load_and_desk_validates():
    desk = load_config(CONFIG_DIR / "desk.yaml")
    assert validate_config(desk, base_dir=CONFIG_DIR) == []
    full = load_config(CONFIG_DIR / "full_scale.yaml")
    assert full.generator.n_blocks > desk.generator.n_blocks


def test_materialize_is_json_ready():
    import json

    blob = json.dumps(config_from_dict({}).materialize())
    assert "trajectory" in blob and "grid" in blob
