import subprocess
import sys

import pytest
import yaml

from objtraj.cli import main
from objtraj.data import make_toy_corpus
from objtraj.reporting import read_table

from conftest import DESK_CONFIG


@pytest.fixture(scope="module")
def tiny_project(tmp_path_factory):
    """A minimal config + corpus sized so every subcommand runs in seconds."""
    root = tmp_path_factory.mktemp("cli")
    dirs = make_toy_corpus(root / "data", n_train=3, n_test=2, size=64, seed=5)
    cfg = {
        "seed": 1,
        "patches": {"lr": 8},
        "data": {"train": str(dirs["train"]), "test": str(dirs["test"])},
        "generator": {"n_blocks": 1, "channels": 8, "cond_channels": 4},
        "discriminator": {"base_channels": 8, "n_stages": 2},
        "training": {"pretrain_steps": 2, "gen_steps": 3, "predictor_steps": 2, "batch_size": 2},
        "grid": "0,0.5,1",
    }
    path = root / "tiny.yaml"
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return {"root": root, "config": path, "dirs": dirs}


def test_validate_config_ok(capsys):
    assert main(["validate-config", "--config", str(DESK_CONFIG)]) == 0
    assert capsys.readouterr().out.startswith("ok: config digest ")


def test_validate_config_reports_problems(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("data: {train: missing/a, test: missing/b}\n", encoding="utf-8")
    assert main(["validate-config", "--config", str(bad)]) == 1
    out = capsys.readouterr().out
    assert out.count("invalid:") == 2


def test_config_errors_exit_one(tmp_path, capsys):
    assert main(["validate-config", "--config", str(tmp_path / "absent.yaml")]) == 1
    assert "error: ConfigurationError" in capsys.readouterr().err


def test_usage_errors_exit_two():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_console_script_installed():
    proc = subprocess.run(
        [sys.executable, "-c", "import objtraj.cli as c; raise SystemExit(c.main(['validate-config', '--config', %r]))" % str(DESK_CONFIG)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("ok:")


def test_full_command_chain(tiny_project, capsys):
    cfg = str(tiny_project["config"])
    root = tiny_project["root"]

    assert main(["train-gen", "--config", cfg, "--out", str(root / "gen")]) == 0
    ckpt = root / "gen" / "generator.otar"
    assert ckpt.is_file()
    # The report path renders its figures next to the log.
    assert (root / "gen" / "pretrain_loss.png").is_file()
    assert (root / "gen" / "train_gen_loss.png").is_file()

    assert main([
        "build-oos-maps", "--config", cfg, "--ckpt", str(ckpt),
        "--data", str(tiny_project["dirs"]["train"]), "--out", str(root / "maps"),
    ]) == 0
    maps = sorted((root / "maps").glob("*.png"))
    assert len(maps) == 3

    assert main([
        "train-predictor", "--config", cfg, "--gen-ckpt", str(ckpt),
        "--oos-maps", str(root / "maps"), "--out", str(root / "pred"),
    ]) == 0
    pred = root / "pred" / "predictor.otar"
    assert pred.is_file()

    assert main([
        "infer", "--config", cfg, "--ckpt", str(ckpt),
        "--lr", str(tiny_project["dirs"]["test"]), "--map", "const:0.5", "--out", str(root / "sr_const"),
    ]) == 0
    assert len(sorted((root / "sr_const").glob("*_sr.png"))) == 2

    assert main([
        "infer", "--config", cfg, "--ckpt", str(ckpt),
        "--lr", str(tiny_project["dirs"]["test"]), "--predictor", str(pred), "--out", str(root / "sr_pred"),
    ]) == 0
    assert len(sorted((root / "sr_pred").glob("*_sr.png"))) == 2

    assert main([
        "evaluate", "--config", cfg, "--ckpt", str(ckpt),
        "--data", str(tiny_project["dirs"]["test"]), "--map", "const:0", "--out", str(root / "eval" / "table.tsv"),
    ]) == 0
    header, rows = read_table(root / "eval" / "table.tsv")
    assert header == ["image", "descriptor", "psnr", "ssim", "lpips", "lr_psnr"]
    assert rows[-1][0] == "mean" and len(rows) == 3
    assert (root / "eval" / "table.png").is_file()

    assert main([
        "pd-curve", "--config", cfg, "--ckpt", str(ckpt),
        "--data", str(tiny_project["dirs"]["test"]), "--grid", "0,1", "--out", str(root / "curve" / "pd.tsv"),
    ]) == 0
    header, rows = read_table(root / "curve" / "pd.tsv")
    assert header == ["t", "psnr", "lpips"]
    assert [r[0] for r in rows] == ["0.000000", "1.000000"]
    assert (root / "curve" / "pd.png").is_file()

    capsys.readouterr()


def test_infer_requires_a_map_source(tiny_project, capsys):
    cfg = str(tiny_project["config"])
    root = tiny_project["root"]
    code = main([
        "infer", "--config", cfg, "--ckpt", str(root / "gen" / "generator.otar"),
        "--lr", str(tiny_project["dirs"]["test"]), "--out", str(root / "sr_none"),
    ])
    assert code == 1
    assert "error: ConfigurationError" in capsys.readouterr().err
