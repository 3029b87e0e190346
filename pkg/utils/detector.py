import json
import math
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional

import numpy as np
import onnxruntime as ort
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils.errors import (
    ArityMismatch,
    IoFailure,
    NonFiniteScore,
    NormalizedInput,
    ShapeContractViolation,
    ShapeMismatch,
    UnreadableModel,
)
from utils.imaging import PixelImage, PlaneTensor, PreprocessConfig, haar_dwt2, mallat_slices, preprocess


FEATURE_SIDE = 224
FEATURE_CHANNELS = 3
HIST_BINS = 16
WAVELET_LEVELS = 2
FEATURE_LAYOUT = "mean3-std3-hist16-haar2x7-bias/v1"
MODEL_VERSION = 1
SATURATION_LEVEL = 0.98
PROB_CLAMP = 1e-12

SUBBANDS = list(mallat_slices(FEATURE_SIDE, FEATURE_SIDE, WAVELET_LEVELS))
FEATURE_NAMES = (
    [f"mean_c{c}" for c in range(FEATURE_CHANNELS)]
    + [f"std_c{c}" for c in range(FEATURE_CHANNELS)]
    + [f"hist_{b:02d}" for b in range(HIST_BINS)]
    + [f"energy_c{c}_{band}" for c in range(FEATURE_CHANNELS) for band in SUBBANDS]
    + ["bias"]
)
FEATURE_LENGTH = len(FEATURE_NAMES)  # 44


class Detection(BaseModel):
    score: float = Field(ge=0.0, le=1.0)
    label: bool

    @classmethod
    def from_score(cls, score: float, threshold: float) -> "Detection":
        return cls(score=score, label=score >= threshold)


def extract_features(t: PlaneTensor) -> np.ndarray:
    """Moments, pooled histogram and Haar subband energy fractions, plus a bias term.

    Subband energy is the subband's share of the channel's total squared
    coefficients (0 for an all-zero channel), so each channel's 7 energies sum to 1.
    """
    if t.data.shape != (FEATURE_CHANNELS, FEATURE_SIDE, FEATURE_SIDE):
        raise ShapeMismatch(f"Expected {FEATURE_CHANNELS}x{FEATURE_SIDE}x{FEATURE_SIDE} tensor, got {t.data.shape}")
    data = t.data
    means = data.mean(axis=(1, 2))
    stds = data.std(axis=(1, 2))
    counts, _ = np.histogram(np.clip(data, 0.0, 1.0), bins=HIST_BINS, range=(0.0, 1.0))
    histogram = counts / data.size

    coefficients = haar_dwt2(t, WAVELET_LEVELS).data
    slices = mallat_slices(FEATURE_SIDE, FEATURE_SIDE, WAVELET_LEVELS)
    energies = []
    for plane in coefficients:
        total = float(np.sum(plane ** 2))
        for rows, cols in slices.values():
            energy = float(np.sum(plane[rows, cols] ** 2))
            energies.append(energy / total if total > 0 else 0.0)

    return np.concatenate([means, stds, histogram, energies, [1.0]])


def _as_vector(value) -> np.ndarray:
    return np.array(value, dtype=np.float64)


class LogisticModel(BaseModel):
    """Logistic reference detector over standardized engineered features."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    weights: np.ndarray
    velocity: np.ndarray
    threshold: float = Field(default=0.5, gt=0.0, lt=1.0)
    # Per-feature standardization fitted on the training subset; identity by default
    feature_shift: np.ndarray
    feature_scale: np.ndarray
    preprocess: PreprocessConfig = Field(default_factory=lambda: PreprocessConfig.for_mode("raw"))

    @field_validator("weights", "velocity", "feature_shift", "feature_scale", mode="before")
    @classmethod
    def _vector(cls, value):
        return _as_vector(value)

    @model_validator(mode="after")
    def _check_parameters(self) -> "LogisticModel":
        length = len(self.weights)
        for name in ("velocity", "feature_shift", "feature_scale"):
            if len(getattr(self, name)) != length:
                raise ValueError(f"{name} must have {length} entries")
        if not np.all(np.isfinite(self.weights)) or not np.all(np.isfinite(self.velocity)):
            raise ValueError("Model parameters must be finite")
        if np.any(self.feature_scale <= 0):
            raise ValueError("feature_scale must be strictly positive")
        return self

    @classmethod
    def zeros(
        cls,
        length: int = FEATURE_LENGTH,
        threshold: float = 0.5,
        preprocess_config: Optional[PreprocessConfig] = None,
    ) -> "LogisticModel":
        return cls(
            weights=np.zeros(length),
            velocity=np.zeros(length),
            threshold=threshold,
            feature_shift=np.zeros(length),
            feature_scale=np.ones(length),
            preprocess=preprocess_config or PreprocessConfig.for_mode("raw"),
        )

    def clone(self) -> "LogisticModel":
        return LogisticModel(
            weights=self.weights.copy(),
            velocity=self.velocity.copy(),
            threshold=self.threshold,
            feature_shift=self.feature_shift.copy(),
            feature_scale=self.feature_scale.copy(),
            preprocess=self.preprocess,
        )

    def with_weights(self, weights: np.ndarray) -> "LogisticModel":
        model = self.clone()
        model.weights = _as_vector(weights)
        model.velocity = np.zeros(len(weights))
        return model

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.feature_shift) / self.feature_scale

    def to_json_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "feature_layout": FEATURE_LAYOUT,
            "threshold": self.threshold,
            "weights": self.weights.tolist(),
            "feature_shift": self.feature_shift.tolist(),
            "feature_scale": self.feature_scale.tolist(),
            "preprocess": self.preprocess.model_dump(),
        }

    def save(self, path) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_json_dict(), indent=2))
        except OSError as e:
            raise IoFailure(f"Cannot write model {path}: {e}") from e

    @classmethod
    def from_json_dict(cls, document: dict) -> "LogisticModel":
        if document.get("version") != MODEL_VERSION:
            raise UnreadableModel(f"Unsupported model version {document.get('version')}")
        if document.get("feature_layout") != FEATURE_LAYOUT:
            raise UnreadableModel(f"Unknown feature layout {document.get('feature_layout')}")
        weights = document["weights"]
        try:
            return cls(
                weights=weights,
                velocity=np.zeros(len(weights)),
                threshold=document.get("threshold", 0.5),
                feature_shift=document.get("feature_shift", np.zeros(len(weights))),
                feature_scale=document.get("feature_scale", np.ones(len(weights))),
                preprocess=PreprocessConfig(**document.get("preprocess", {"mode": "raw", "channel_means": [0.0] * 3, "channel_stds": [1.0] * 3})),
            )
        except ValidationError as e:
            raise UnreadableModel(f"Invalid model document: {e}") from e

    @classmethod
    def load(cls, path) -> "LogisticModel":
        try:
            document = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UnreadableModel(f"Cannot read model {path}: {e}") from e
        if not isinstance(document, dict) or "weights" not in document:
            raise UnreadableModel(f"{path} is not a logistic model document")
        return cls.from_json_dict(document)


def sigmoid(x):
    # Stable on both tails
    x = np.asarray(x, dtype=np.float64)
    flat = np.atleast_1d(x)
    out = np.empty_like(flat)
    positive = flat >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-flat[positive]))
    exp_x = np.exp(flat[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out.reshape(x.shape)


def _check_arity(model: LogisticModel, features: np.ndarray) -> None:
    if features.shape[-1] != len(model.weights):
        raise ArityMismatch(f"Model expects {len(model.weights)} features, got {features.shape[-1]}")


def predict(model: LogisticModel, f: np.ndarray) -> Detection:
    f = _as_vector(f)
    _check_arity(model, f)
    score = float(sigmoid(np.dot(model.weights, model.standardize(f))))
    if not math.isfinite(score):
        raise NonFiniteScore("Logistic score is not finite")
    return Detection.from_score(score, model.threshold)


def loss_and_grad(model: LogisticModel, f: np.ndarray, y: bool) -> tuple[float, np.ndarray]:
    """Cross-entropy of one sample and its gradient with respect to the weights."""
    f = _as_vector(f)
    _check_arity(model, f)
    z = model.standardize(f)
    p = float(sigmoid(np.dot(model.weights, z)))
    clamped = min(max(p, PROB_CLAMP), 1.0 - PROB_CLAMP)
    target = 1.0 if y else 0.0
    loss = -(target * math.log(clamped) + (1.0 - target) * math.log(1.0 - clamped))
    return loss, (p - target) * z


def batch_loss_and_grad(model: LogisticModel, features: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample losses and the mean gradient over a batch (rows of features)."""
    _check_arity(model, features)
    z = model.standardize(features)
    p = sigmoid(z @ model.weights)
    clamped = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    targets = labels.astype(np.float64)
    losses = -(targets * np.log(clamped) + (1.0 - targets) * np.log(1.0 - clamped))
    grad = ((p - targets)[:, None] * z).mean(axis=0)
    return losses, grad


class HeuristicLightingConfig(BaseModel):
    min_mean: float = 0.25
    max_mean: float = 0.85
    max_saturated_fraction: float = Field(default=0.05, gt=0.0, le=1.0)
    max_std: float = Field(default=0.35, gt=0.0)
    # Width of the band inside each boundary over which the soft margin ramps 0 -> 1
    mean_softness: float = Field(default=0.05, gt=0.0)
    std_softness: float = Field(default=0.05, gt=0.0)

    @model_validator(mode="after")
    def _check_means(self) -> "HeuristicLightingConfig":
        if not 0.0 < self.min_mean < self.max_mean < 1.0:
            raise ValueError("Require 0 < min_mean < max_mean < 1")
        return self


def _margin(distance: float, softness: float) -> float:
    return min(max(distance / softness, 0.0), 1.0)


def heuristic_lighting(t: PlaneTensor, cfg: HeuristicLightingConfig) -> Detection:
    data = t.data
    if data.size == 0:
        raise ShapeMismatch("Empty tensor")
    if data.min() < 0.0 or data.max() > 1.0:
        raise NormalizedInput("Heuristic lighting needs raw [0, 1] intensities")
    mean = float(data.mean())
    std = float(data.std())
    saturated = float(np.mean(data.max(axis=0) >= SATURATION_LEVEL))

    positive = (
        cfg.min_mean <= mean <= cfg.max_mean
        and saturated <= cfg.max_saturated_fraction
        and std <= cfg.max_std
    )
    score = (
        _margin(min(mean - cfg.min_mean, cfg.max_mean - mean), cfg.mean_softness)
        * _margin(cfg.max_saturated_fraction - saturated, cfg.max_saturated_fraction)
        * _margin(cfg.max_std - std, cfg.std_softness)
    )
    return Detection(score=score, label=positive)


class Detector(ABC):
    """One binary quality check of the cascade."""

    backend = "abstract"

    def __init__(self, threshold: float, preprocess_config: PreprocessConfig) -> None:
        self.threshold = threshold
        self.preprocess = preprocess_config

    @abstractmethod
    def detect(self, t: PlaneTensor) -> Detection:
        ...

    def prepare(self, img: PixelImage) -> PlaneTensor:
        return preprocess(img, self.preprocess)

    def describe(self) -> dict:
        return {"backend": self.backend, "threshold": self.threshold, "preprocess": self.preprocess.mode}


class LogisticDetector(Detector):
    backend = "logistic"

    def __init__(self, model: LogisticModel) -> None:
        super().__init__(model.threshold, model.preprocess)
        self.model = model

    def detect(self, t: PlaneTensor) -> Detection:
        return predict(self.model, extract_features(t))


class HeuristicLightingDetector(Detector):
    """Rule-based lighting check; a threshold above 0 additionally demands that much margin."""

    backend = "heuristic"

    def __init__(self, cfg: Optional[HeuristicLightingConfig] = None, threshold: float = 0.0) -> None:
        super().__init__(threshold, PreprocessConfig.for_mode("raw"))
        self.cfg = cfg or HeuristicLightingConfig()

    def detect(self, t: PlaneTensor) -> Detection:
        detection = heuristic_lighting(t, self.cfg)
        return Detection(score=detection.score, label=detection.label and detection.score >= self.threshold)


class OnnxDetector(Detector):
    backend = "onnx"

    def __init__(
        self,
        session: ort.InferenceSession,
        threshold: float = 0.5,
        positive_index: int = 1,
        preprocess_config: Optional[PreprocessConfig] = None,
    ) -> None:
        super().__init__(threshold, preprocess_config or PreprocessConfig())
        if positive_index not in (0, 1):
            raise ValueError("positive_index must be 0 or 1")
        self.session = session
        self.positive_index = positive_index
        self.input_name = session.get_inputs()[0].name

    def detect(self, t: PlaneTensor) -> Detection:
        if t.data.shape != (FEATURE_CHANNELS, FEATURE_SIDE, FEATURE_SIDE):
            raise ShapeMismatch(f"Expected {FEATURE_CHANNELS}x{FEATURE_SIDE}x{FEATURE_SIDE} tensor, got {t.data.shape}")
        batch = t.data[None].astype(np.float32)
        logits = np.asarray(self.session.run(None, {self.input_name: batch})[0], dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(logits)):
            raise NonFiniteScore("External model produced non-finite logits")
        shifted = np.exp(logits - logits.max())
        probabilities = shifted / shifted.sum()
        return Detection.from_score(float(probabilities[self.positive_index]), self.threshold)


def _dim_matches(dim, expected: int, allow_symbolic: bool) -> bool:
    if isinstance(dim, int):
        return dim == expected
    return allow_symbolic


def load_external(
    model_file,
    threshold: float = 0.5,
    positive_index: int = 1,
    preprocess_config: Optional[PreprocessConfig] = None,
) -> OnnxDetector:
    """Open an ONNX network with a 1x3x224x224 input and a 2-logit output."""
    try:
        session = ort.InferenceSession(str(model_file), providers=["CPUExecutionProvider"])
    except Exception as e:
        raise UnreadableModel(f"Cannot load ONNX model {model_file}: {e}") from e

    inputs, outputs = session.get_inputs(), session.get_outputs()
    expected_input = (1, FEATURE_CHANNELS, FEATURE_SIDE, FEATURE_SIDE)
    input_shape = inputs[0].shape if len(inputs) == 1 else []
    if len(input_shape) != 4 or not all(
        _dim_matches(dim, size, allow_symbolic=(axis == 0)) for axis, (dim, size) in enumerate(zip(input_shape, expected_input))
    ):
        raise ShapeContractViolation(f"Model input must be 1x3x224x224, got {[i.shape for i in inputs]}")
    output_shape = outputs[0].shape if outputs else []
    if len(output_shape) != 2 or not _dim_matches(output_shape[0], 1, True) or not _dim_matches(output_shape[1], 2, False):
        raise ShapeContractViolation(f"Model output must be 2 logits, got {output_shape}")
    return OnnxDetector(session, threshold, positive_index, preprocess_config)


def load_detector(
    backend: str,
    path=None,
    threshold: Optional[float] = None,
    positive_index: int = 1,
    preprocess_config: Optional[PreprocessConfig] = None,
    heuristic: Optional[HeuristicLightingConfig] = None,
) -> Detector:
    """Build a detector of the given backend kind; a threshold of None keeps the backend default."""
    match backend:
        case "logistic":
            model = LogisticModel.load(path)
            if threshold is not None:
                model.threshold = threshold
            if preprocess_config is not None:
                model.preprocess = preprocess_config
            return LogisticDetector(model)
        case "onnx":
            return load_external(path, 0.5 if threshold is None else threshold, positive_index, preprocess_config)
        case "heuristic":
            return HeuristicLightingDetector(heuristic, 0.0 if threshold is None else threshold)
    raise ValueError(f"Unknown detector backend {backend}")


def backend_for_path(path: str) -> str:
    """Infer the backend kind from a CLI model argument."""
    if path == "heuristic":
        return "heuristic"
    if str(path).lower().endswith(".onnx"):
        return "onnx"
    return "logistic"


def predict_scores(model: LogisticModel, features: np.ndarray) -> np.ndarray:
    """Positive-class scores for a matrix of feature rows."""
    _check_arity(model, features)
    return sigmoid(model.standardize(features) @ model.weights)
