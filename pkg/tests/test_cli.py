import json

import numpy as np
import pytest

from conftest import tiny_run_config
from zfseld import dataio
from zfseld.cli import main
from zfseld.config import save_config


@pytest.fixture
def config_path(tmp_path):
    cfg = tiny_run_config()
    cfg.train.iterations = 20
    cfg.train.val_interval = 10
    path = tmp_path / "config.json"
    save_config(cfg, path)
    return path


def run(args):
    return main([str(a) for a in args])


class TestCliWorkflow:
    def test_end_to_end(self, config_path, tmp_path, capsys):
        data = tmp_path / "corpus"
        assert run(["simulate", "--config", config_path, "--out", data, "--n-scenes", 2]) == 0
        assert (data / "manifest.json").exists()

        ckpt = tmp_path / "model.npz"
        assert run(["train", "--config", config_path, "--data", data, "--out", ckpt]) == 0
        assert ckpt.exists()
        assert (tmp_path / "model.npz.losses.csv").exists()

        support = tmp_path / "support.tsv"
        assert run(["support", "zero", "--config", config_path, "--out", support]) == 0
        loaded = dataio.load_support(support)
        assert loaded.n_classes == 4

        pred = tmp_path / "pred.csv"
        rc = run(
            ["infer", "--config", config_path, "--checkpoint", ckpt,
             "--support", support, "--audio", data / "scene0000.wav", "--out", pred]
        )
        assert rc == 0
        assert pred.exists()

        rc = run(["evaluate", "--pred", pred, "--ref", data / "scene0000.csv",
                  "--out", tmp_path / "report.txt"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "E_SELD" in out
        report = (tmp_path / "report.txt").read_text()
        assert "ER_20=" in report

    def test_evaluate_identity_perfect(self, config_path, tmp_path, capsys):
        data = tmp_path / "corpus"
        run(["simulate", "--config", config_path, "--out", data, "--n-scenes", 1])
        rc = run(["evaluate", "--pred", data / "scene0000.csv", "--ref", data / "scene0000.csv"])
        assert rc == 0
        assert "E_SELD  : 0.0000" in capsys.readouterr().out

    def test_infer_clap_override_keeps_geometry(self, config_path, tmp_path):
        data = tmp_path / "corpus"
        run(["simulate", "--config", config_path, "--out", data, "--n-scenes", 1])
        ckpt = tmp_path / "model.npz"
        run(["train", "--config", config_path, "--data", data, "--out", ckpt])
        support = tmp_path / "support.tsv"
        run(["support", "zero", "--config", config_path, "--out", support])

        base, over = tmp_path / "plain.csv", tmp_path / "over.csv"
        common = ["infer", "--config", config_path, "--checkpoint", ckpt,
                  "--support", support, "--audio", data / "scene0000.wav"]
        assert run(common + ["--out", base]) == 0
        assert run(common + ["--out", over, "--clap-override"]) == 0
        b = dataio.read_annotation_csv(base)
        o = dataio.read_annotation_csv(over)
        geometry = lambda rows: sorted((r.frame, r.azimuth, r.elevation) for r in rows)
        assert geometry(b) == geometry(o)

    def test_support_few_mode(self, config_path, tmp_path):
        from zfseld import sources

        cfg = tiny_run_config()
        rng = np.random.default_rng(0)
        shots = {"classes": {}, "noise": []}
        for c, name in enumerate(cfg.scene.class_names):
            clip = sources.synth_class_source(c, 4, 0.5, 24000, rng)
            path = tmp_path / f"{name}.wav"
            dataio.write_wav(path, clip[None, :], 24000)
            shots["classes"][name] = [str(path)]
        noise_path = tmp_path / "bg.wav"
        dataio.write_wav(noise_path, sources.synth_noise_clip(0.5, 24000, rng)[None, :], 24000)
        shots["noise"] = [str(noise_path)]
        shots_path = tmp_path / "shots.json"
        shots_path.write_text(json.dumps(shots))

        out = tmp_path / "support_few.tsv"
        rc = run(["support", "few", "--config", config_path, "--shots", shots_path, "--out", out])
        assert rc == 0
        support = dataio.load_support(out)
        assert support.provenance["mode"] == "few"
        assert support.provenance["shots"] == [1, 1, 1, 1]

    def test_support_few_missing_class_errors(self, config_path, tmp_path, capsys):
        shots_path = tmp_path / "shots.json"
        shots_path.write_text(json.dumps({"classes": {"alarm": []}, "noise": []}))
        rc = run(["support", "few", "--config", config_path, "--shots", shots_path,
                  "--out", tmp_path / "s.tsv"])
        assert rc == 2
        assert "alarm" in capsys.readouterr().err


class TestCliErrors:
    def test_bad_config_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"loss": {"beta_embed": -1}}))
        rc = run(["simulate", "--config", path, "--out", tmp_path / "x"])
        assert rc == 2
        assert "coefficients" in capsys.readouterr().err

    def test_unknown_config_key_exits_2(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"nonsense": {}}))
        assert run(["evaluate", "--pred", "x", "--ref", "y"]) == 3  # missing files
        assert run(["simulate", "--config", path, "--out", tmp_path / "x"]) == 2

    def test_impossible_scene_exits_3(self, tmp_path, capsys):
        cfg = tiny_run_config()
        cfg.scene.scene_seconds = 1.0
        cfg.scene.events_min = cfg.scene.events_max = 3
        cfg.scene.event_min_seconds = cfg.scene.event_max_seconds = 1.0
        path = tmp_path / "config.json"
        save_config(cfg, path)
        rc = run(["simulate", "--config", path, "--out", tmp_path / "x"])
        assert rc == 3
        assert "scene 0" in capsys.readouterr().err

    def test_missing_out_exits_2(self, config_path):
        assert run(["simulate", "--config", config_path]) == 2

    def test_seed_override_changes_output(self, config_path, tmp_path):
        run(["simulate", "--config", config_path, "--out", tmp_path / "a", "--n-scenes", 1])
        run(["simulate", "--config", config_path, "--out", tmp_path / "b",
             "--n-scenes", 1, "--seed", 777])
        wav_a = (tmp_path / "a" / "scene0000.wav").read_bytes()
        wav_b = (tmp_path / "b" / "scene0000.wav").read_bytes()
        assert wav_a != wav_b
