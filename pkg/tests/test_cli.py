import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from cli import cli
from utils.detector import FEATURE_LENGTH, LogisticModel
from utils.imaging import PixelImage, encode_png


def _runner() -> CliRunner:
    return CliRunner(mix_stderr=False)


def _constant_model(path, score: float = 0.75):
    """Logistic model whose score ignores the image."""
    weights = np.zeros(FEATURE_LENGTH)
    weights[-1] = math.log(score / (1 - score))
    LogisticModel.zeros().with_weights(weights).save(path)
    return str(path)


def _grey_image(path, value: float = 0.5) -> str:
    path.write_bytes(encode_png(PixelImage(data=np.full((32, 32, 3), value))))
    return str(path)


def test_unknown_command() -> None:
    result = _runner().invoke(cli, ["calibrate"])

    assert result.exit_code == 2
    assert "No such command" in result.stderr


def test_eval_with_constant_model(tmp_path) -> None:
    for name in ("a", "b", "c"):
        _grey_image(tmp_path / f"{name}.png")
    manifest = tmp_path / "tier1.csv"
    manifest.write_text("id,path,label\na,a.png,1\nb,b.png,1\nc,c.png,0\n")

    result = _runner().invoke(cli, ["eval", "--tier", "1", "--model", _constant_model(tmp_path / "m.json"), "--manifest", str(manifest)])

    assert result.exit_code == 0, result.stderr
    payload = json.loads(result.stdout)
    # Everything is predicted positive: 2 true positives, 1 false positive
    assert payload["confusion"] == {"tp": 2, "fp": 1, "tn": 0, "fn": 0}
    assert payload["metrics"]["accuracy"] == pytest.approx(2 / 3)
    assert payload["metrics"]["specificity"] == 0.0
    assert payload["metrics"]["npv"] is None


def test_assess_single_image(tmp_path) -> None:
    image = _grey_image(tmp_path / "grey.png")

    result = _runner().invoke(cli, ["assess", "--tier1", _constant_model(tmp_path / "eye.json"), "--tier2", "heuristic", image])

    assert result.exit_code == 0, result.stderr
    payload = json.loads(result.stdout)
    assert payload["decision"] == "accept"
    assert payload["tier_scores"]["eye_presence"] == pytest.approx(0.75)


def test_assess_dark_image_needs_retake(tmp_path) -> None:
    image = _grey_image(tmp_path / "dark.png", value=0.05)

    result = _runner().invoke(cli, ["assess", "--tier1", _constant_model(tmp_path / "eye.json"), "--tier2", "heuristic", image])

    assert json.loads(result.stdout)["feedback_code"] == "POOR_LIGHTING"


def test_cascade_eval(tmp_path) -> None:
    _grey_image(tmp_path / "grey.png")
    _grey_image(tmp_path / "dark.png", value=0.05)
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("id,path,hier_label\ng,grey.png,eye_good_light\nd,dark.png,eye_bad_light\n")

    result = _runner().invoke(cli, ["cascade-eval", "--tier1", _constant_model(tmp_path / "eye.json"), "--tier2", "heuristic", "--manifest", str(manifest)])

    assert result.exit_code == 0, result.stderr
    payload = json.loads(result.stdout)
    assert payload["hier_confusion"]["counts"] == [[0, 0, 0], [0, 1, 0], [0, 0, 1]]
    assert payload["binary_confusion"] == {"tp": 1, "fp": 0, "tn": 1, "fn": 0}


def test_missing_manifest_exits_with_message(tmp_path) -> None:
    result = _runner().invoke(cli, ["eval", "--tier", "2", "--model", "heuristic", "--manifest", str(tmp_path / "none.csv")])

    assert result.exit_code == 1
    assert "IoFailure" in result.stderr


def test_unreadable_model_exits_with_message(tmp_path) -> None:
    image = _grey_image(tmp_path / "grey.png")
    broken = tmp_path / "broken.json"
    broken.write_text("[]")

    result = _runner().invoke(cli, ["assess", "--tier1", str(broken), "--tier2", "heuristic", image])

    assert result.exit_code == 1
    assert "UnreadableModel" in result.stderr


def test_synth_then_train(tmp_path) -> None:
    config = tmp_path / "config.toml"
    config.write_text(
        '[experiment.dataset]\nmanifest = "data/tier1.csv"\nratios = [3, 1, 1]\nk_runs = 2\n'
        '[experiment.training]\nepochs = 10\nbatch_size = 8\ngrid = [{ lr = 0.1, momentum = 0.9 }]\n'
        "[synth]\nside = 32\nno_eye = 10\neye_bad_light = 10\neye_good_light = 10\n"
    )
    runner = _runner()

    synth = runner.invoke(cli, ["synth", "--config", str(config), "--out", str(tmp_path / "data")])
    train = runner.invoke(cli, ["train", "--config", str(config), "--tier", "1", "--out", str(tmp_path / "tier1.json")])

    assert synth.exit_code == 0, synth.stderr
    assert json.loads(synth.stdout)["tier2_rows"] == 20
    assert train.exit_code == 0, train.stderr
    report = json.loads(train.stdout)
    assert report["config"]["tier"] == 1
    assert report["config"]["preprocess_mode"] == "raw"
    assert [run["seed"] for run in report["runs"]] == [1, 2]
    assert report["chosen_hyperparameters"] == {"lr": 0.1, "momentum": 0.9}
    assert LogisticModel.load(tmp_path / "tier1.json").weights.shape == (FEATURE_LENGTH,)


def test_train_without_manifest_is_a_usage_error(tmp_path) -> None:
    config = tmp_path / "config.toml"
    config.write_text("")

    result = _runner().invoke(cli, ["train", "--config", str(config), "--tier", "1", "--out", str(tmp_path / "m.json")])

    assert result.exit_code == 2
