"""CLI contract: exit codes, artifact schemas, and byte-level determinism."""

import json

import pytest

from contrastlab.cli import main
from contrastlab.config import SCHEMA_VERSION, config_hash, resolve
from contrastlab.errors import ConfigError
from contrastlab.worldmodel import load_mixture

FAST_TRAIN = [
    "--set", "epochs=2", "--set", "batch_size=8", "--set", "dataset_size=16",
    "--set", "embed_dim=4", "--set", "eval_train_size=64",
    "--set", "eval_test_size=64",
]


def read_artifacts(out_dir):
    report = json.loads((out_dir / "report.json").read_text())
    blobs = {name: (out_dir / name).read_bytes() for name in report["artifacts"]}
    blobs["report.json"] = (out_dir / "report.json").read_bytes()
    return report, blobs


class TestConfig:
    def test_defaults_resolve(self):
        cfg = resolve("train", None, [], None)
        assert cfg["format_version"] == SCHEMA_VERSION
        assert cfg["loss_kinds"] == ("debiased",)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="bogus"):
            resolve("train", None, ["bogus=1"], None)

    def test_file_then_set_later_wins(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("epochs = 7\nseed = 3\n")
        cfg = resolve("train", str(path), ["epochs=9"], None)
        assert cfg["epochs"] == 9
        assert cfg["seed"] == 3

    def test_seed_flag_wins(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("seed = 3\n")
        cfg = resolve("train", str(path), [], 42)
        assert cfg["seed"] == 42

    def test_version_tag_must_match(self):
        with pytest.raises(ConfigError, match="format_version"):
            resolve("train", None, ["format_version=99"], None)

    def test_bad_value_diagnostic_names_key(self):
        with pytest.raises(ConfigError, match="epochs"):
            resolve("train", None, ["epochs=three"], None)

    def test_hash_stable_and_sensitive(self):
        a = resolve("train", None, [], None)
        b = resolve("train", None, ["epochs=9"], None)
        assert config_hash(a) == config_hash(resolve("train", None, [], None))
        assert config_hash(a) != config_hash(b)


class TestExitCodes:
    def test_unknown_key_exits_2(self, tmp_path, capsys):
        code = main(["train", "--out", str(tmp_path), "--set", "bogus=1"])
        assert code == 2
        assert "bogus" in capsys.readouterr().err

    def test_missing_dataset_key_exits_2(self, tmp_path, capsys):
        code = main(["train", "--out", str(tmp_path), "--set", "world=discrete",
                     "--set", "preset="] + FAST_TRAIN)
        assert code == 2
        err = capsys.readouterr().err
        assert "mixture_file" in err or "preset" in err

    def test_bad_subcommand_exits_2(self):
        assert main(["no-such-command"]) == 2

    def test_verify_pass_exits_0(self, tmp_path):
        code = main(["verify", "oracle", "--out", str(tmp_path), "--seed", "1",
                     "--set", "instances=2", "--set", "s_max=6", "--set", "n_max=3"])
        assert code == 0

    def test_corrupted_bound_exits_1(self, tmp_path):
        code = main(["verify", "oracle", "--out", str(tmp_path), "--seed", "1",
                     "--set", "instances=2", "--set", "s_max=6", "--set", "n_max=3",
                     "--set", "corrupt_rhs_scale=0"])
        assert code == 1
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["passed"] is False


class TestTrainCommand:
    def test_emits_expected_artifacts(self, tmp_path):
        code = main(["train", "--out", str(tmp_path), "--seed", "2"] + FAST_TRAIN)
        assert code == 0
        report, blobs = read_artifacts(tmp_path)
        assert "probe.csv" in blobs
        assert any(name.startswith("train_log_") for name in blobs)
        assert any(name.startswith("checkpoint_") for name in blobs)

    def test_csv_headers_golden(self, tmp_path):
        main(["train", "--out", str(tmp_path), "--seed", "2"] + FAST_TRAIN)
        probe = (tmp_path / "probe.csv").read_text().splitlines()
        assert probe[0] == "seed,loss_kind,tau_plus,accuracy"
        log = next(tmp_path.glob("train_log_*.csv")).read_text().splitlines()
        assert log[0] == "epoch,loss,wall_ms"

    def test_sweep_row_count(self, tmp_path):
        code = main(["train", "--out", str(tmp_path), "--seed", "2",
                     "--set", "tau_plus=0,0.05,0.1", "--set", "seeds=1,2"] + FAST_TRAIN)
        assert code == 0
        rows = (tmp_path / "probe.csv").read_text().splitlines()[1:]
        assert len(rows) == 6  # one accuracy row per (seed, tau)

    def test_rerun_byte_identical(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        args = ["train", "--seed", "2"] + FAST_TRAIN
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        _, blobs1 = read_artifacts(out1)
        _, blobs2 = read_artifacts(out2)
        assert blobs1.keys() == blobs2.keys()
        for name in blobs1:
            assert blobs1[name] == blobs2[name], name

    def test_report_embeds_hash_and_seed(self, tmp_path):
        main(["train", "--out", str(tmp_path), "--seed", "2"] + FAST_TRAIN)
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["seed"] == 2
        assert len(report["config_hash"]) == 64
        assert report["command"] == "train"


class TestProbeCommand:
    def test_probe_checkpoint(self, tmp_path):
        train_out = tmp_path / "t"
        main(["train", "--out", str(train_out), "--seed", "2"] + FAST_TRAIN)
        ckpt = next(train_out.glob("checkpoint_*.json"))
        probe_out = tmp_path / "p"
        code = main(["probe", "--out", str(probe_out), "--seed", "2",
                     "--set", f"checkpoint={ckpt}"])
        assert code == 0
        rows = (probe_out / "probe.csv").read_text().splitlines()
        assert rows[0] == "seed,loss_kind,tau_plus,accuracy"
        assert len(rows) == 2

    def test_missing_checkpoint_key(self, tmp_path, capsys):
        assert main(["probe", "--out", str(tmp_path)]) == 2
        assert "checkpoint" in capsys.readouterr().err


class TestVerifyCommand:
    def test_thm3_grid_cell_count(self, tmp_path):
        code = main(["verify", "thm3", "--out", str(tmp_path), "--seed", "3",
                     "--set", "instances=1", "--set", "trials=2000",
                     "--set", "n_grid=4,16", "--set", "m_grid=4,16",
                     "--set", "tau_list=0.1"])
        assert code == 0
        certs = json.loads((tmp_path / "certificates.json").read_text())
        assert len(certs) == 4  # one record per (N, M) cell
        for cert in certs:
            assert set(cert) >= {"check", "lhs", "rhs", "stderr", "trials",
                                 "passed", "meta"}

    def test_lemma1_runs(self, tmp_path):
        code = main(["verify", "lemma1", "--out", str(tmp_path), "--seed", "3",
                     "--set", "instances=2", "--set", "trials=2000",
                     "--set", "n_list=1,4"])
        assert code == 0
        certs = json.loads((tmp_path / "certificates.json").read_text())
        assert len(certs) == 4

    def test_lemma4_runs(self, tmp_path):
        code = main(["verify", "lemma4", "--out", str(tmp_path), "--seed", "3",
                     "--set", "embeddings=2", "--set", "mixtures=1",
                     "--set", "k_list=3", "--set", "s_points=6"])
        assert code == 0

    def test_rate_emits_fit_record(self, tmp_path):
        code = main(["verify", "rate", "--out", str(tmp_path), "--seed", "3",
                     "--set", "trials=20000"])
        assert code == 0
        record = json.loads((tmp_path / "ratefit.json").read_text())
        assert record["status"] == "ok"
        assert len(record["grid"]) == 5

    def test_verify_rerun_byte_identical(self, tmp_path):
        args = ["verify", "lemma1", "--seed", "5", "--set", "instances=1",
                "--set", "trials=2000", "--set", "n_list=4"]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        assert (out1 / "certificates.json").read_bytes() == \
            (out2 / "certificates.json").read_bytes()
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()


class TestGradcheckCommand:
    def test_default_small_run(self, tmp_path):
        code = main(["gradcheck", "--out", str(tmp_path), "--seed", "4",
                     "--set", "cases=12"])
        assert code == 0
        rows = (tmp_path / "gradcheck.csv").read_text().splitlines()
        assert rows[0] == "case,loss_kind,tau_plus,floor_mode,step,max_rel_err,excluded"
        assert len(rows) == 13
        assert all(float(r.split(",")[5]) <= 1e-6 for r in rows[1:])


class TestGenDataCommand:
    def test_preset_roundtrip(self, tmp_path):
        code = main(["gen-data", "--out", str(tmp_path),
                     "--set", "preset=two-point"])
        assert code == 0
        mix = load_mixture(tmp_path / "mixture.txt")
        assert mix.n_points == 2

    def test_random_mixture_deterministic(self, tmp_path):
        args = ["gen-data", "--seed", "6", "--set", "s_points=6",
                "--set", "k_classes=3"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a/mixture.txt").read_bytes() == \
            (tmp_path / "b/mixture.txt").read_bytes()

    def test_generated_file_usable_for_training(self, tmp_path):
        main(["gen-data", "--out", str(tmp_path), "--set", "preset=paper-uniform"])
        code = main(["train", "--out", str(tmp_path / "run"), "--seed", "2",
                     "--set", "world=discrete", "--set", "preset=",
                     "--set", f"mixture_file={tmp_path / 'mixture.txt'}",
                     "--set", "temperature=1.0"] + FAST_TRAIN)
        assert code == 0
