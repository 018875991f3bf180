import csv
import json

import numpy as np
import pytest

from freqlens.cli import main
from freqlens.datasets import SyntheticSpec, load_batch, save_batch, synthesize
from freqlens.metrics import read_pgm
from freqlens.model import load_model


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = synthesize(SyntheticSpec(size=8, samples_per_class=6, seed=4, background=0.1, contrast=0.8))
    save_batch(data, root / "data.fql")
    assert main(["train", "--data", str(root / "data.fql"), "--epochs", "2", "--out", str(root / "std")]) == 0
    return root


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_train_writes_artifacts(workspace):
    out = workspace / "std"
    net = load_model(out / "model.fqlm")
    assert net.input_shape == (1, 8, 8) and net.num_classes == 4
    rows = list(csv.reader(open(out / "metrics.csv")))
    assert rows[0] == ["epoch", "loss", "train_accuracy", "batch_accuracy"] and len(rows) == 3
    m = manifest(out)
    assert m["status"] == "ok" and m["seed"] == 0
    assert str(workspace / "data.fql") in m["inputs"]
    assert {"freqlens", "numpy", "scipy", "python"} <= set(m["versions"])


def test_zero_epochs_gives_initial_parameters(tmp_path, workspace):
    assert main(["train", "--data", str(workspace / "data.fql"), "--epochs", "0", "--seed", "2", "--out", str(tmp_path)]) == 0
    from freqlens.model import ConvNet

    assert load_model(tmp_path / "model.fqlm").fingerprint() == ConvNet.initialize((1, 8, 8), 4, seed=2).fingerprint()


def test_seed_before_subcommand_is_kept(tmp_path):
    assert main(["--seed", "7", "--out", str(tmp_path), "verify", "--pairs", "10"]) == 0
    assert manifest(tmp_path)["seed"] == 7


def test_adversarial_training(tmp_path, workspace):
    argv = ["train", "--data", str(workspace / "data.fql"), "--epochs", "1", "--adv", "--norm", "l2", "--eps", "0.25", "--out", str(tmp_path)]
    assert main(argv) == 0
    assert manifest(tmp_path)["results"]["train_config"]["adv_epsilon"] == 0.25


def test_missing_data_path(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path)]) != 0
    assert "nowhere" in capsys.readouterr().err
    assert manifest(tmp_path)["status"] == "input-error"


def test_divergence_exit_code(tmp_path, workspace):
    argv = ["train", "--data", str(workspace / "data.fql"), "--epochs", "3", "--lr", "1e150", "--out", str(tmp_path)]
    assert main(argv) == 3


def test_unknown_attack_kind_is_usage_error(workspace):
    with pytest.raises(SystemExit) as exc:
        main(["attack", "--model", str(workspace / "std" / "model.fqlm"), "--kind", "lbfgs"])
    assert exc.value.code == 2


def test_attack_and_metrics_pipeline(tmp_path, workspace):
    model = str(workspace / "std" / "model.fqlm")
    data = str(workspace / "data.fql")
    att = tmp_path / "att"
    assert main(["attack", "--model", model, "--data", data, "--kind", "pgd", "--eps", "0.15", "--step-size", "0.02", "--out", str(att)]) == 0
    report = json.loads((att / "report.json").read_text())
    assert report["max_linf"] <= 0.15 + 1e-9
    adv = load_batch(att / "adversarial.fql")
    assert adv.images.shape == (24, 1, 8, 8)

    rct_out = tmp_path / "rct"
    assert main(["rct", "--original", str(att / "original.fql"), "--perturbed", str(att / "adversarial.fql"), "--out", str(rct_out)]) == 0
    assert (rct_out / "rct.csv").exists() and (rct_out / "rct_levels.csv").exists()

    mmd_out = tmp_path / "mmd"
    assert main(["ammd", "--original", str(att / "original.fql"), "--perturbed", str(att / "adversarial.fql"), "--out", str(mmd_out)]) == 0
    assert json.loads((mmd_out / "ammd.json").read_text())["ammd"] > 0


def test_zero_epsilon_attack_is_identity(tmp_path, workspace):
    argv = ["attack", "--model", str(workspace / "std" / "model.fqlm"), "--data", str(workspace / "data.fql"), "--kind", "pgd", "--eps", "0", "--out", str(tmp_path)]
    assert main(argv) == 0
    r = json.loads((tmp_path / "report.json").read_text())
    assert r["accuracy_after"] == r["accuracy_before"]
    assert load_batch(tmp_path / "adversarial.fql").images.tobytes() == load_batch(tmp_path / "original.fql").images.tobytes()


def test_rct_identical_gives_flat_pgm(tmp_path, workspace):
    data = str(workspace / "data.fql")
    assert main(["rct", "--original", data, "--perturbed", data, "--out", str(tmp_path)]) == 0
    pix = read_pgm(tmp_path / "rct.pgm")
    assert np.all(pix == pix.flat[0])


def test_attribute_per_class(tmp_path, workspace):
    model = str(workspace / "std" / "model.fqlm")
    argv = ["attribute", "--model", f"standard={model}", "--model", f"copy={model}", "--data", str(workspace / "data.fql"), "--per-class", "--out", str(tmp_path)]
    assert main(argv) == 0
    rows = list(csv.reader(open(tmp_path / "attribution_per_class.csv")))
    assert rows[0] == ["class", "level", "standard", "copy"]
    assert len(rows) == 1 + 4 * 15
    assert all(r[2] == r[3] for r in rows[1:])
    shares = manifest(tmp_path)["results"]["mean_low_band_share"]
    assert 0 <= shares["standard"] <= 1


def test_attribute_single_image(tmp_path, workspace):
    argv = ["attribute", "--model", str(workspace / "std" / "model.fqlm"), "--data", str(workspace / "data.fql"), "--image", "3", "--out", str(tmp_path)]
    assert main(argv) == 0
    assert len(list(csv.reader(open(tmp_path / "attribution_model.csv")))) == 16


def test_robustify_threads_agree(tmp_path, workspace, monkeypatch):
    monkeypatch.setattr("freqlens.cli.ROBUSTIFY_CHUNK", 2)
    base = ["robustify", "--model", str(workspace / "std" / "model.fqlm"), "--data", str(workspace / "data.fql"), "--n", "6", "--iterations", "5"]
    assert main(base + ["--out", str(tmp_path / "a")]) == 0
    assert main(base + ["--threads", "3", "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "counterparts.fql").read_bytes()
    assert a == (tmp_path / "b" / "counterparts.fql").read_bytes()
    assert (tmp_path / "a" / "spectrum_diff.pgm").exists()


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("FREQLENS_THREADS", "2")
    assert main(["verify", "--pairs", "10", "--out", str(tmp_path)]) == 0
    assert manifest(tmp_path)["threads"] == 2


def test_verify_reports_all_checks(tmp_path):
    assert main(["verify", "--pairs", "50", "--out", str(tmp_path)]) == 0
    checks = json.loads((tmp_path / "verify.json").read_text())
    assert checks and all(c["holds"] for c in checks.values())
