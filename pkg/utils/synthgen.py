import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator
from tqdm import tqdm

from utils.errors import InvalidGeometry, IoFailure
from utils.imaging import PixelImage, encode_png
from utils.log import log
from utils.quality_data import HIER_ORDER, HierLabel, Tier, tier_label


# Relative scene intensities before the illumination mapping
BACKGROUND_LEVEL = 0.55
SCLERA_LEVEL = 0.9
IRIS_LEVEL = 0.35
PUPIL_LEVEL = 0.05
MAX_GOOD_BLOB_FRACTION = 0.05

BackgroundKind = Literal["flat", "gradient", "clutter"]
BACKGROUND_KINDS = ("flat", "gradient", "clutter")


class SceneParams(BaseModel):
    eye_present: bool
    illumination: float = Field(ge=0.0, le=1.0)
    saturation_blob_fraction: float = Field(default=0.0, ge=0.0, le=1.0)
    side: int = Field(default=224, ge=8)
    # Semi-axes (horizontal, vertical), radii and centre, all in pixels
    sclera_axes: tuple[float, float] = (75.0, 45.0)
    iris_radius: float = 35.0
    pupil_radius: float = 13.0
    center: Optional[tuple[float, float]] = None
    noise_std: float = Field(default=0.0, ge=0.0)
    background_kind: BackgroundKind = "flat"


class GenConfig(BaseModel):
    seed: int = Field(default=7, ge=0)
    side: int = Field(default=224, ge=8)
    no_eye: int = Field(default=100, ge=0)
    eye_bad_light: int = Field(default=100, ge=0)
    eye_good_light: int = Field(default=100, ge=0)
    good_range: tuple[float, float] = (0.35, 0.7)
    dark_range: tuple[float, float] = (0.08, 0.2)
    bright_range: tuple[float, float] = (0.88, 0.95)
    blob_range: tuple[float, float] = (0.1, 0.2)
    noise_std: float = Field(default=0.02, ge=0.0)
    workers: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_ranges(self) -> "GenConfig":
        for name in ("good_range", "dark_range", "bright_range", "blob_range"):
            low, high = getattr(self, name)
            if not 0.0 < low <= high < 1.0:
                raise ValueError(f"{name} must satisfy 0 < low <= high < 1")
        if not self.dark_range[1] < self.good_range[0] or not self.good_range[1] < self.bright_range[0]:
            raise ValueError("Bad-light illumination ranges must not overlap the good range")
        if self.blob_range[0] <= MAX_GOOD_BLOB_FRACTION:
            raise ValueError(f"Blob fractions for bad lighting must exceed {MAX_GOOD_BLOB_FRACTION}")
        return self

    @property
    def counts(self) -> dict[HierLabel, int]:
        return {
            HierLabel.NO_EYE: self.no_eye,
            HierLabel.EYE_BAD_LIGHT: self.eye_bad_light,
            HierLabel.EYE_GOOD_LIGHT: self.eye_good_light,
        }


class DatasetManifest(BaseModel):
    root: str
    manifest: str
    tier1: str
    tier2: str
    rows: int
    tier1_rows: int
    tier2_rows: int


def _background(kind: BackgroundKind, side: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    match kind:
        case "flat":
            return np.full((side, side), BACKGROUND_LEVEL)
        case "gradient":
            angle = rng.uniform(0.0, 2.0 * math.pi)
            projection = (np.cos(angle) * xx + np.sin(angle) * yy) / side
            projection = (projection - projection.min()) / max(np.ptp(projection), 1e-9)
            return BACKGROUND_LEVEL - 0.1 + 0.2 * projection
        case "clutter":
            # Soft low-contrast blobs; no sharp structure that could pass for an eye
            plane = np.full((side, side), BACKGROUND_LEVEL)
            for _ in range(6):
                cx, cy = rng.uniform(0, side, size=2)
                sigma = rng.uniform(0.05, 0.15) * side
                amplitude = rng.uniform(-0.08, 0.08)
                plane += amplitude * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma ** 2))
            return np.clip(plane, 0.35, 0.75)
    raise ValueError(f"Unknown background kind {kind}")


def _draw_eye(plane: np.ndarray, p: SceneParams) -> np.ndarray:
    side = p.side
    cx, cy = p.center or (side / 2, side / 2)
    a, b = p.sclera_axes
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    ellipse_radius = np.sqrt(((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2)
    radius = np.hypot(xx - cx, yy - cy)

    plane = plane.copy()
    sclera = ellipse_radius <= 1.0
    plane[sclera] = SCLERA_LEVEL * (1.0 - 0.15 * ellipse_radius[sclera] ** 2)
    iris = sclera & (radius <= p.iris_radius)
    plane[iris] = IRIS_LEVEL * (1.1 - 0.3 * (radius[iris] / p.iris_radius) ** 2)
    plane[radius <= p.pupil_radius] = PUPIL_LEVEL
    return plane


def _blob_mask(side: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    mask = np.zeros((side, side), dtype=bool)
    if fraction <= 0:
        return mask
    blob_radius = math.sqrt(fraction * side * side / math.pi)
    low, high = min(blob_radius, side / 2), max(side - blob_radius, side / 2)
    cx, cy = rng.uniform(low, high, size=2)
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    mask[(xx - cx) ** 2 + (yy - cy) ** 2 <= blob_radius ** 2] = True
    return mask


def _gamma_for_mean(values: np.ndarray, target: float) -> float:
    """Exponent g with mean(values ** g) == target, by bisection on log g."""
    low, high = -8.0, 8.0
    for _ in range(80):
        middle = (low + high) / 2
        if np.mean(values ** math.exp(middle)) > target:
            low = middle
        else:
            high = middle
    return math.exp((low + high) / 2)


def scene_label(p: SceneParams, good_range: tuple[float, float]) -> HierLabel:
    if not p.eye_present:
        return HierLabel.NO_EYE
    good_light = good_range[0] <= p.illumination <= good_range[1] and p.saturation_blob_fraction <= MAX_GOOD_BLOB_FRACTION
    return HierLabel.EYE_GOOD_LIGHT if good_light else HierLabel.EYE_BAD_LIGHT


def gen_sample(
    p: SceneParams,
    rng_state: np.random.Generator,
    good_range: tuple[float, float] = (0.35, 0.7),
) -> tuple[PixelImage, HierLabel]:
    if p.eye_present and not 0 < p.pupil_radius < p.iris_radius < min(p.sclera_axes):
        raise InvalidGeometry("Require 0 < pupil radius < iris radius < smaller sclera axis")

    side = p.side
    plane = _background(p.background_kind, side, rng_state)
    if p.eye_present:
        plane = _draw_eye(plane, p)
    plane = np.clip(plane, 0.01, 0.99)

    # Saturated blob pixels are fixed at 1.0; the rest carry the remaining brightness
    blob = _blob_mask(side, p.saturation_blob_fraction, rng_state)
    rest = ~blob
    target = p.illumination * plane.size
    rest_target = min(max((target - blob.sum()) / max(rest.sum(), 1), 1e-3), 1.0 - 1e-3)

    image = np.ones_like(plane)
    image[rest] = plane[rest] ** _gamma_for_mean(plane[rest], rest_target)
    if p.noise_std > 0:
        image[rest] += rng_state.normal(0.0, p.noise_std, size=int(rest.sum()))
    image = np.clip(image, 0.0, 1.0)
    if rest.any():
        image[rest] = np.clip(image[rest] + (target - image.sum()) / rest.sum(), 0.0, 1.0)

    pixels = PixelImage(data=np.repeat(image[:, :, None], 3, axis=2))
    return pixels, scene_label(p, good_range)


def _draw_scene(label: HierLabel, cfg: GenConfig, rng: np.random.Generator) -> SceneParams:
    side = cfg.side
    a = rng.uniform(0.25, 0.38) * side
    b = a * rng.uniform(0.5, 0.7)
    iris = b * rng.uniform(0.7, 0.9)
    pupil = iris * rng.uniform(0.3, 0.45)
    jitter = 0.08 * side
    center = (side / 2 + rng.uniform(-jitter, jitter), side / 2 + rng.uniform(-jitter, jitter))
    background = BACKGROUND_KINDS[rng.integers(len(BACKGROUND_KINDS))]

    blob = 0.0
    match label:
        case HierLabel.NO_EYE:
            ranges = (cfg.dark_range, cfg.good_range, cfg.bright_range)
            illumination = rng.uniform(*ranges[rng.integers(len(ranges))])
        case HierLabel.EYE_GOOD_LIGHT:
            illumination = rng.uniform(*cfg.good_range)
        case HierLabel.EYE_BAD_LIGHT:
            match rng.integers(3):
                case 0:
                    illumination = rng.uniform(*cfg.dark_range)
                case 1:
                    illumination = rng.uniform(*cfg.bright_range)
                case _:
                    illumination = rng.uniform(*cfg.good_range)
                    blob = rng.uniform(*cfg.blob_range)

    return SceneParams(
        eye_present=label.eye_present,
        illumination=illumination,
        saturation_blob_fraction=blob,
        side=side,
        sclera_axes=(a, b),
        iris_radius=iris,
        pupil_radius=pupil,
        center=center,
        noise_std=cfg.noise_std,
        background_kind=background,
    )


def _sample_plan(cfg: GenConfig) -> list[tuple[int, str, HierLabel]]:
    plan = []
    for label in HIER_ORDER:
        for j in range(cfg.counts[label]):
            plan.append((len(plan), f"{label.value}_{j:05d}", label))
    return plan


def gen_dataset(cfg: GenConfig, out_dir) -> DatasetManifest:
    """Write PNGs plus the hierarchical manifest and the two per-tier manifests."""
    root = Path(out_dir)
    images_dir = root / "images"
    try:
        images_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(f"Cannot create {images_dir}: {e}") from e

    def write(item: tuple[int, str, HierLabel]) -> dict:
        index, sample_id, label = item
        # Independent per-sample stream, so order of generation never matters
        rng = np.random.default_rng([cfg.seed, index])
        image, generated_label = gen_sample(_draw_scene(label, cfg, rng), rng, cfg.good_range)
        relative = f"images/{sample_id}.png"
        try:
            (root / relative).write_bytes(encode_png(image))
        except OSError as e:
            raise IoFailure(f"Cannot write {relative}: {e}") from e
        return {"id": sample_id, "path": relative, "hier_label": generated_label.value}

    plan = _sample_plan(cfg)
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
            rows = list(tqdm(executor.map(write, plan), total=len(plan), desc="synth", leave=False))
    else:
        rows = [write(item) for item in tqdm(plan, desc="synth", leave=False)]

    manifest = pd.DataFrame(rows, columns=["id", "path", "hier_label"])
    tier_frames = {}
    for tier in (Tier.EYE_PRESENCE, Tier.LIGHTING):
        labels = manifest["hier_label"].map(lambda value: tier_label(HierLabel(value), tier))
        frame = manifest.loc[labels.notna(), ["id", "path"]].copy()
        frame["label"] = labels[labels.notna()].astype(bool).astype(int)
        tier_frames[tier] = frame

    paths = {"manifest": root / "manifest.csv", "tier1": root / "tier1.csv", "tier2": root / "tier2.csv"}
    try:
        manifest.to_csv(paths["manifest"], index=False, lineterminator="\n")
        tier_frames[Tier.EYE_PRESENCE].to_csv(paths["tier1"], index=False, lineterminator="\n")
        tier_frames[Tier.LIGHTING].to_csv(paths["tier2"], index=False, lineterminator="\n")
    except OSError as e:
        raise IoFailure(f"Cannot write manifests under {root}: {e}") from e

    log.dataset_event(root, len(manifest), len(tier_frames[Tier.EYE_PRESENCE]), len(tier_frames[Tier.LIGHTING]))
    return DatasetManifest(
        root=str(root),
        manifest=str(paths["manifest"]),
        tier1=str(paths["tier1"]),
        tier2=str(paths["tier2"]),
        rows=len(manifest),
        tier1_rows=len(tier_frames[Tier.EYE_PRESENCE]),
        tier2_rows=len(tier_frames[Tier.LIGHTING]),
    )
