import json
from pathlib import Path

import numpy as np
import pytest
import torch

from vtcd.cli import main
from vtcd.phantom import load_manifest
from vtcd.trainer import TrainConfig
from vtcd.volume import Volume3D, load_volume, save_volume

torch.set_num_threads(2)

GEN_ARGS = [
    "gen-data",
    "--count", "2",
    "--size", "16x16x16",
    "--cells", "1",
    "--radius", "3,5",
    "--scale", "2",
    "--noise", "0.03,0.05",
    "--seed", "7",
]


def gen(out_dir) -> int:
    return main(GEN_ARGS + ["--out", str(out_dir), "--blur", "0.5"])


def tiny_config_file(path, **kw) -> Path:
    params = dict(
        epochs_per_phase=(1, 1, 1),
        T=4,
        batch_size=4,
        sr_slices_per_step=2,
        sr_scale=2,
        base_channels=8,
        feat_channels=4,
        disc_channels=8,
        acc_hidden=16,
    )
    params.update(kw)
    cfg = TrainConfig(**params)
    cfg.to_json(path)
    return path


@pytest.fixture()
def small_cells_dir(tmp_path):
    out = tmp_path / "ds"
    assert gen(out) == 0
    return out


class TestGenData:
    def test_deterministic_directory_tree(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert gen(a) == 0
        assert gen(b) == 0
        names = sorted(p.name for p in a.iterdir())
        assert names == sorted(p.name for p in b.iterdir())
        for name in names:
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_bad_size_flag(self, tmp_path, capsys):
        code = main(["gen-data", "--out", str(tmp_path), "--count", "1", "--size", "16x16"])
        assert code == 1
        assert capsys.readouterr().err.strip()

    def test_unknown_flag_rejected(self, tmp_path, capsys):
        code = main(GEN_ARGS + ["--out", str(tmp_path), "--frobnicate", "yes"])
        assert code == 1
        err = capsys.readouterr().err
        assert "vtcd:" in err and err.count("\n") == 1


class TestTrainRestoreEval:
    def test_full_pipeline(self, small_cells_dir, tmp_path, capsys):
        config_path = tiny_config_file(tmp_path / "config.json")
        run_dir = tmp_path / "run"
        code = main([
            "train",
            "--data", str(small_cells_dir / "manifest.json"),
            "--config", str(config_path),
            "--out", str(run_dir),
        ])
        assert code == 0
        assert (run_dir / "checkpoint.ckpt").exists()
        assert (run_dir / "loss_log.jsonl").read_text().count("\n") == 3

        degraded = small_cells_dir / "degraded_0001.vol"
        restored = tmp_path / "restored.vol"
        code = main([
            "restore",
            "--ckpt", str(run_dir / "checkpoint.ckpt"),
            "--in", str(degraded),
            "--out", str(restored),
        ])
        assert code == 0
        assert load_volume(restored).dims == (16, 16, 16)

        report = tmp_path / "report.json"
        code = main([
            "eval",
            "--pred", str(restored),
            "--gt", str(small_cells_dir / "clean_0001.vol"),
            "--report", str(report),
            "--planes", "xy",
        ])
        assert code == 0
        doc = json.loads(report.read_text())
        assert doc["per_volume"][0]["planes"]["xy"]["ssim"] <= 1.0

        png = tmp_path / "metrics.png"
        assert main(["plot", "--report", str(report), "--out", str(png)]) == 0
        assert png.stat().st_size > 0

    def test_restore_stage_flags(self, small_cells_dir, tmp_path):
        config_path = tiny_config_file(tmp_path / "config.json", epochs_per_phase=(0, 0, 0))
        run_dir = tmp_path / "run"
        assert main(["train", "--data", str(small_cells_dir / "manifest.json"),
                     "--config", str(config_path), "--out", str(run_dir)]) == 0
        out = tmp_path / "dn.vol"
        assert main(["restore", "--ckpt", str(run_dir / "checkpoint.ckpt"),
                     "--in", str(small_cells_dir / "degraded_0000.vol"),
                     "--out", str(out), "--denoise-only"]) == 0
        assert load_volume(out).dims == (16, 16, 8)

    def test_restore_version_mismatch_diagnostic(self, small_cells_dir, tmp_path, capsys):
        config_path = tiny_config_file(tmp_path / "config.json", epochs_per_phase=(0, 0, 0))
        run_dir = tmp_path / "run"
        main(["train", "--data", str(small_cells_dir / "manifest.json"),
              "--config", str(config_path), "--out", str(run_dir)])
        from vtcd.trainer import load_checkpoint, save_checkpoint

        ckpt = load_checkpoint(run_dir / "checkpoint.ckpt")
        ckpt.format_version = 3
        save_checkpoint(ckpt, tmp_path / "old.ckpt")
        code = main(["restore", "--ckpt", str(tmp_path / "old.ckpt"),
                     "--in", str(small_cells_dir / "degraded_0000.vol"),
                     "--out", str(tmp_path / "x.vol")])
        assert code == 1
        err = capsys.readouterr().err
        assert "3" in err and "1" in err  # names both versions


class TestEval:
    def test_identical_volumes(self, tmp_path, capsys):
        vol = Volume3D(np.random.default_rng(0).random((16, 16, 12), dtype=np.float32))
        p = tmp_path / "v.vol"
        save_volume(vol, p)
        report = tmp_path / "r.json"
        assert main(["eval", "--pred", str(p), "--gt", str(p), "--report", str(report)]) == 0
        doc = json.loads(report.read_text())
        assert doc["per_volume"][0]["psnr_db"] == 99.0
        assert doc["per_volume"][0]["ssim"] == 1.0

    def test_missing_file_exit_one(self, tmp_path, capsys):
        code = main(["eval", "--pred", str(tmp_path / "nope.vol"),
                     "--gt", str(tmp_path / "nope.vol"), "--report", str(tmp_path / "r.json")])
        assert code == 1

    def test_bad_planes_flag(self, tmp_path):
        vol = Volume3D(np.random.default_rng(0).random((16, 16, 12), dtype=np.float32))
        p = tmp_path / "v.vol"
        save_volume(vol, p)
        code = main(["eval", "--pred", str(p), "--gt", str(p),
                     "--report", str(tmp_path / "r.json"), "--planes", "ab"])
        assert code == 1


class TestPlot:
    def test_empty_report_rejected(self, tmp_path):
        report = tmp_path / "r.json"
        report.write_text(json.dumps({"per_volume": [], "aggregates": None, "baseline": None}))
        assert main(["plot", "--report", str(report), "--out", str(tmp_path / "o.png")]) == 1


class TestHelp:
    @pytest.mark.parametrize(
        "command,flags",
        [
            ("gen-data", ["--out", "--count", "--size", "--cells", "--scale", "--noise", "--seed"]),
            ("train", ["--data", "--config", "--out"]),
            ("restore", ["--ckpt", "--in", "--out", "--denoise-only", "--sr-only"]),
            ("eval", ["--pred", "--gt", "--report", "--planes"]),
            ("plot", ["--report", "--out"]),
        ],
    )
    def test_help_lists_every_flag(self, command, flags, capsys):
        with pytest.raises(SystemExit) as exc:
            main([command, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for flag in flags:
            assert flag in text
