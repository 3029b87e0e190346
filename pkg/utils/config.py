import os
from pathlib import Path
from typing import Literal, Optional

import toml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, model_validator

from utils.detector import Detector, HeuristicLightingConfig, load_detector
from utils.errors import ConfigError
from utils.imaging import PreprocessConfig, PreprocessMode
from utils.protocol import HyperParams
from utils.synthgen import GenConfig


CONFIG_ENV_VAR = "IRIS_GATE_CONFIG"
DEFAULT_MAX_UPLOAD_BYTES = 10 * 1024 * 1024

BackendKind = Literal["logistic", "onnx", "heuristic"]


def _default_grid() -> list[HyperParams]:
    return [
        HyperParams(lr=lr, momentum=momentum)
        for lr in (1e-4, 2e-4)
        for momentum in (0.95, 0.99)
    ]


class DatasetConfig(BaseModel):
    manifest: Optional[str] = None
    ratios: tuple[int, int, int] = (8, 1, 1)
    seed: int = 0
    k_runs: int = Field(default=5, ge=1)

    @model_validator(mode="after")
    def _check_ratios(self) -> "DatasetConfig":
        if any(ratio <= 0 for ratio in self.ratios):
            raise ValueError("ratios must be positive integers")
        return self


class PreprocessSection(BaseModel):
    mode: PreprocessMode = "raw"
    target_side: int = Field(default=224, ge=1)
    channel_means: Optional[list[float]] = None
    channel_stds: Optional[list[float]] = None
    wavelet_levels: Optional[int] = None

    def build(self) -> PreprocessConfig:
        base = PreprocessConfig.for_mode(self.mode, self.target_side)
        overrides = {
            key: value
            for key, value in (
                ("channel_means", self.channel_means),
                ("channel_stds", self.channel_stds),
                ("wavelet_levels", self.wavelet_levels),
            )
            if value is not None
        }
        return PreprocessConfig(**{**base.model_dump(), **overrides})


class TrainingConfig(BaseModel):
    epochs: int = Field(default=20, ge=1)
    batch_size: int = Field(default=32, ge=1)
    grid: list[HyperParams] = Field(default_factory=_default_grid, min_length=1)
    # Grid search once on the first repetition's split, then reuse the winner
    search_once: bool = True
    standardize: bool = True
    workers: int = Field(default=1, ge=1)


class DetectorSection(BaseModel):
    backend: BackendKind = "logistic"
    threshold: float = Field(default=0.5, gt=0.0, lt=1.0)


class ExperimentConfig(BaseModel):
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    preprocess: PreprocessSection = Field(default_factory=PreprocessSection)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    detector: DetectorSection = Field(default_factory=DetectorSection)


class TierModelConfig(BaseModel):
    backend: BackendKind = "logistic"
    path: Optional[str] = None
    threshold: Optional[float] = Field(default=None, ge=0.0, lt=1.0)
    positive_index: int = Field(default=1, ge=0, le=1)
    preprocess: Optional[PreprocessMode] = None
    heuristic: HeuristicLightingConfig = Field(default_factory=HeuristicLightingConfig)

    @model_validator(mode="after")
    def _check_model_file(self) -> "TierModelConfig":
        if self.backend != "heuristic":
            if not self.path:
                raise ValueError(f"{self.backend} backend needs a model path")
            if not Path(self.path).is_file():
                raise ValueError(f"Model file {self.path} does not exist")
        return self

    def load(self) -> Detector:
        preprocess_config = PreprocessConfig.for_mode(self.preprocess) if self.preprocess else None
        return load_detector(
            backend=self.backend,
            path=self.path,
            threshold=self.threshold,
            positive_index=self.positive_index,
            preprocess_config=preprocess_config,
            heuristic=self.heuristic,
        )


class ServiceConfig(BaseModel):
    host: str = "0.0.0.0"
    port: int = Field(default=8080, ge=0, le=65535)
    max_upload_bytes: int = Field(default=DEFAULT_MAX_UPLOAD_BYTES, ge=1)
    tier1: TierModelConfig
    tier2: TierModelConfig


class AppConfig(BaseModel):
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)
    # Validated on demand so that model files need only exist when serving
    service: Optional[dict] = None
    synth: GenConfig = Field(default_factory=GenConfig)


def resolve_config_path(path: Optional[str]) -> Path:
    """Explicit path first, then the IRIS_GATE_CONFIG environment variable."""
    load_dotenv()
    resolved = path or os.getenv(CONFIG_ENV_VAR)
    if not resolved:
        raise ConfigError(f"No config file given and {CONFIG_ENV_VAR} is not set")
    return Path(resolved)


def load_config(path: Optional[str] = None) -> AppConfig:
    config_path = resolve_config_path(path)
    try:
        document = toml.loads(config_path.read_text())
    except OSError as e:
        raise ConfigError(f"Cannot read config {config_path}: {e}") from e
    except toml.TomlDecodeError as e:
        raise ConfigError(f"Invalid TOML in {config_path}: {e}") from e

    # Relative model and manifest paths resolve against the config file's directory
    base = config_path.parent
    service = document.get("service", {})
    for tier in ("tier1", "tier2"):
        tier_doc = service.get(tier, {})
        if tier_doc.get("path") and not Path(tier_doc["path"]).is_absolute():
            tier_doc["path"] = str(base / tier_doc["path"])
    dataset = document.get("experiment", {}).get("dataset", {})
    if dataset.get("manifest") and not Path(dataset["manifest"]).is_absolute():
        dataset["manifest"] = str(base / dataset["manifest"])

    try:
        return AppConfig(**document)
    except ValidationError as e:
        raise ConfigError(f"Invalid config {config_path}: {e}") from e


def service_config(app: AppConfig) -> ServiceConfig:
    if app.service is None:
        raise ConfigError("Config has no [service] section")
    try:
        return ServiceConfig(**app.service)
    except ValidationError as e:
        raise ConfigError(f"Invalid [service] section: {e}") from e
