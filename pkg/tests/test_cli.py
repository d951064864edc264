import json

import pytest

from svdu.harness.cli import cli_main


BLOB_FLAGS = ["--dataset", "blobs", "--blobs-d", "8", "--blobs-k", "3",
              "--blobs-n", "900", "--blobs-separation", "5.0"]


@pytest.fixture(scope="module")
def trained_model_path(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    model_path = out / "model.bin"
    code = cli_main(["train", *BLOB_FLAGS, "--epochs", "15",
                     "--seed", "3", "--out-dir", str(out),
                     "--model-out", str(model_path)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["final_train_accuracy"] > 0.9
    return model_path


class TestExitCodes:
    def test_missing_model_file_exits_1(self, tmp_path, capsys):
        code = cli_main(["universalize", *BLOB_FLAGS,
                         "--model", str(tmp_path / "nope.bin"),
                         "--attack", "gradient",
                         "--out-dir", str(tmp_path / "out")])
        assert code == 1
        assert "nope.bin" in capsys.readouterr().err

    def test_unknown_flag_exits_1(self, tmp_path, capsys):
        code = cli_main(["train", "--definitely-not-a-flag"])
        assert code == 1
        err = capsys.readouterr().err
        assert "usage" in err.lower()

    def test_unknown_subcommand_exits_1(self, capsys):
        assert cli_main(["frobnicate"]) == 1

    def test_bad_config_value_exits_1(self, tmp_path, capsys):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("config_version = 1\nblobs_d = banana\n")
        code = cli_main(["train", "--config", str(cfg),
                         "--out-dir", str(tmp_path / "out")])
        assert code == 1


class TestDeterminism:
    def test_universalize_twice_is_byte_identical(self, trained_model_path,
                                                  tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("config_version = 1\neval_size = 200\n")
        outs = []
        for run in ("a", "b"):
            out = tmp_path / run
            code = cli_main(["universalize", *BLOB_FLAGS,
                             "--config", str(cfg),
                             "--model", str(trained_model_path),
                             "--attack", "deepfool", "--samples", "24",
                             "--seed", "7", "--out-dir", str(out)])
            assert code == 0
            outs.append(out)
        a, b = outs
        assert ((a / "universal_deepfool.mat").read_bytes()
                == (b / "universal_deepfool.mat").read_bytes())
        assert ((a / "universal_deepfool.json").read_bytes()
                == (b / "universal_deepfool.json").read_bytes())
        assert ((a / "spectrum.csv").read_bytes()
                == (b / "spectrum.csv").read_bytes())

    def test_evaluate_csv_is_byte_identical(self, trained_model_path,
                                            tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("config_version = 1\neval_size = 200\n")
        prep = tmp_path / "prep"
        assert cli_main(["universalize", *BLOB_FLAGS, "--config", str(cfg),
                         "--model", str(trained_model_path),
                         "--attack", "gradient", "--samples", "16",
                         "--seed", "5", "--out-dir", str(prep)]) == 0
        blobs = []
        for run in ("x", "y"):
            out = tmp_path / run
            assert cli_main(["evaluate", *BLOB_FLAGS, "--config", str(cfg),
                             "--model", str(trained_model_path),
                             "--perturbation",
                             str(prep / "universal_gradient"),
                             "--seed", "5", "--out-dir", str(out)]) == 0
            blobs.append((out / "fooling.csv").read_bytes())
        assert blobs[0] == blobs[1]


class TestPipelines:
    def test_attack_command(self, trained_model_path, tmp_path):
        out = tmp_path / "atk"
        code = cli_main(["attack", *BLOB_FLAGS,
                         "--model", str(trained_model_path),
                         "--attack", "fgsm", "--fgsm-eps", "0.05",
                         "--samples", "20", "--seed", "2",
                         "--out-dir", str(out)])
        assert code == 0
        assert (out / "attacks.mat").exists()
        lines = (out / "attacks.csv").read_text().strip().splitlines()
        assert len(lines) == 21

    def test_compare_small_run(self, tmp_path):
        out = tmp_path / "cmp"
        code = cli_main(["compare", *BLOB_FLAGS, "--epochs", "15",
                         "--sample-size", "16", "--eval-size", "300",
                         "--seed", "11", "--out-dir", str(out)])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["reports"]) == {"svd-gradient", "svd-fgsm",
                                           "svd-deepfool", "mdfff", "random"}
        csv_text = (out / "fooling.csv").read_text()
        assert csv_text.startswith(
            "method,sign,norm,norm_pct,fooling_rate,error_rate")
        for name in summary["reports"]:
            assert (out / f"universal_{name}.mat").exists()

    def test_sweep_small_run(self, tmp_path):
        out = tmp_path / "swp"
        code = cli_main(["sweep", *BLOB_FLAGS, "--epochs", "15",
                         "--sizes", "8", "32", "--num-seeds", "2",
                         "--eval-size", "300", "--seed", "13",
                         "--out-dir", str(out)])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["mean_direction_distance"]["32"] == 0.0
        assert (out / "sweep.csv").exists()

    def test_theory_check_small_run(self, tmp_path):
        out = tmp_path / "thy"
        code = cli_main(["theory-check", "--dims", "4", "--deltas", "0.5",
                         "--trials", "1", "--n-eval", "500",
                         "--pool-size", "4000", "--m-grid", "16", "64",
                         "--trials-thm2", "3", "--seed", "17",
                         "--out-dir", str(out)])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["theorem_one_all_satisfied"] is True
        assert summary["theorem_two"]["weyl_violations"] == 0
        assert summary["theorem_two"]["dk_violations"] == 0
        assert all(g["inequality_ok"] for g in summary["fooling_error_gap"])
        assert (out / "theory.csv").read_text().startswith(
            "m,trial,eigvec_err,matrix_err,weyl_err,dk_bound")

    def test_universalize_emit_image(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("config_version = 1\neval_size = 150\n")
        out = tmp_path / "img"
        code = cli_main(["universalize", "--dataset", "blobs",
                         "--blobs-d", "16", "--blobs-k", "3",
                         "--blobs-n", "700", "--blobs-separation", "5.0",
                         "--config", str(cfg), "--attack", "random",
                         "--seed", "9", "--out-dir", str(out)])
        assert code == 0  # no model needed for the random control
        code = cli_main(["universalize", "--dataset", "blobs",
                         "--blobs-d", "16", "--blobs-k", "3",
                         "--blobs-n", "700", "--blobs-separation", "5.0",
                         "--config", str(cfg), "--attack", "random",
                         "--emit-image", "--seed", "9",
                         "--out-dir", str(out)])
        assert code == 0
        assert (out / "universal_random.pgm").read_bytes().startswith(b"P5\n")

    def test_config_flag_override_precedence(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("config_version = 1\nblobs_d = 4\nblobs_k = 2\n"
                       "blobs_n = 500\nblobs_separation = 5.0\n"
                       "epochs = 5\n")
        out = tmp_path / "out"
        model_path = tmp_path / "m.bin"
        code = cli_main(["train", "--config", str(cfg), "--blobs-d", "6",
                         "--seed", "1", "--out-dir", str(out),
                         "--model-out", str(model_path)])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["layer_dims"][0] == 6  # flag beat the config file
