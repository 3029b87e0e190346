from pathlib import Path

import numpy as np
import pytest

from utils.config import CONFIG_ENV_VAR, DEFAULT_MAX_UPLOAD_BYTES, load_config, resolve_config_path, service_config
from utils.detector import FEATURE_LENGTH, LogisticModel
from utils.errors import ConfigError


def _write_model(path: Path, threshold: float = 0.5) -> Path:
    LogisticModel.zeros(threshold=threshold).with_weights(np.zeros(FEATURE_LENGTH)).save(path)
    return path


def test_defaults_from_minimal_file(tmp_path) -> None:
    path = tmp_path / "config.toml"
    path.write_text("")

    app = load_config(str(path))

    assert app.experiment.dataset.ratios == (8, 1, 1)
    assert app.experiment.dataset.k_runs == 5
    assert app.experiment.training.epochs == 20
    assert [(hp.lr, hp.momentum) for hp in app.experiment.training.grid] == [(1e-4, 0.95), (1e-4, 0.99), (2e-4, 0.95), (2e-4, 0.99)]
    assert app.experiment.preprocess.build().mode == "raw"
    assert app.synth.counts
    assert app.service is None


def test_relative_paths_resolve_against_config_dir(tmp_path) -> None:
    (tmp_path / "models").mkdir()
    _write_model(tmp_path / "models" / "eye.json")
    path = tmp_path / "config.toml"
    path.write_text(
        '[experiment.dataset]\nmanifest = "data/manifest.csv"\n'
        '[service.tier1]\nbackend = "logistic"\npath = "models/eye.json"\nthreshold = 0.7\n'
        '[service.tier2]\nbackend = "heuristic"\n'
    )

    app = load_config(str(path))
    service = service_config(app)

    assert app.experiment.dataset.manifest == str(tmp_path / "data" / "manifest.csv")
    assert service.tier1.path == str(tmp_path / "models" / "eye.json")
    assert service.tier1.threshold == 0.7
    assert service.max_upload_bytes == DEFAULT_MAX_UPLOAD_BYTES
    assert service.tier1.load().threshold == 0.7


def test_missing_model_file_fails_service_validation(tmp_path) -> None:
    path = tmp_path / "config.toml"
    path.write_text('[service.tier1]\npath = "nowhere.json"\n[service.tier2]\nbackend = "heuristic"\n')

    app = load_config(str(path))

    with pytest.raises(ConfigError):
        service_config(app)


def test_config_without_service_section(tmp_path) -> None:
    path = tmp_path / "config.toml"
    path.write_text("[synth]\nseed = 3\n")

    with pytest.raises(ConfigError):
        service_config(load_config(str(path)))


def test_invalid_toml_and_values(tmp_path) -> None:
    broken = tmp_path / "broken.toml"
    broken.write_text("[experiment\n")
    invalid = tmp_path / "invalid.toml"
    invalid.write_text("[experiment.dataset]\nratios = [8, 0, 1]\n")

    with pytest.raises(ConfigError):
        load_config(str(broken))
    with pytest.raises(ConfigError):
        load_config(str(invalid))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.toml"))


def test_environment_fallback(tmp_path, monkeypatch) -> None:
    path = tmp_path / "config.toml"
    path.write_text("")
    monkeypatch.setenv(CONFIG_ENV_VAR, str(path))

    assert resolve_config_path(None) == path
    assert resolve_config_path("explicit.toml") == Path("explicit.toml")


def test_no_config_anywhere(tmp_path, monkeypatch) -> None:
    monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)
    monkeypatch.chdir(tmp_path)

    with pytest.raises(ConfigError):
        resolve_config_path(None)
