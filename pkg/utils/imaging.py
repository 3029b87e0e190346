import io
from typing import Literal

import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from utils.errors import (
    ChannelMismatch,
    EmptyImage,
    IndivisibleSize,
    IoFailure,
    MalformedImage,
    ShapeMismatch,
    TooLarge,
    UnsupportedFormat,
)


SUPPORTED_FORMATS = ("PNG", "JPEG")
# Largest width*height accepted for decoding
MAX_DECODE_PIXELS = 40_000_000

IMAGENET_MEANS = [0.485, 0.456, 0.406]
IMAGENET_STDS = [0.229, 0.224, 0.225]

PreprocessMode = Literal["imagenet", "per_image", "raw", "wavelet"]


def _frozen_array(value) -> np.ndarray:
    array = np.array(value, dtype=np.float64)
    array.setflags(write=False)
    return array


class PixelImage(BaseModel):
    """Decoded raster, shape (height, width, channels), intensities in [0, 1]."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def _as_array(cls, value):
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check_layout(self) -> "PixelImage":
        if self.data.ndim != 3 or self.data.shape[2] not in (1, 3):
            raise ValueError(f"Expected (height, width, 1|3) array, got shape {self.data.shape}")
        if self.data.size and (not np.all(np.isfinite(self.data)) or self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError("Intensities must lie in [0, 1]")
        return self

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


class PlaneTensor(BaseModel):
    """Channel-major float planes, shape (channels, height, width)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def _as_array(cls, value):
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check_layout(self) -> "PlaneTensor":
        if self.data.ndim != 3:
            raise ValueError(f"Expected (channels, height, width) array, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("Tensor values must be finite")
        return self

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


class PreprocessConfig(BaseModel):
    mode: PreprocessMode = "imagenet"
    target_side: int = Field(default=224, ge=1)
    channel_means: list[float] = Field(default_factory=lambda: list(IMAGENET_MEANS))
    channel_stds: list[float] = Field(default_factory=lambda: list(IMAGENET_STDS))
    wavelet_levels: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_constants(self) -> "PreprocessConfig":
        if len(self.channel_means) != len(self.channel_stds):
            raise ValueError("channel_means and channel_stds must have the same length")
        if any(std <= 0 for std in self.channel_stds):
            raise ValueError("channel_stds must be strictly positive")
        if any(mean < 0 or mean > 1 for mean in self.channel_means):
            raise ValueError("channel_means must lie in [0, 1]")
        if 2 ** self.wavelet_levels > self.target_side:
            raise ValueError("wavelet_levels cannot exceed log2(target_side)")
        return self

    @classmethod
    def for_mode(cls, mode: PreprocessMode, target_side: int = 224) -> "PreprocessConfig":
        match mode:
            case "imagenet" | "per_image":
                return cls(mode=mode, target_side=target_side)
            case "raw":
                return cls(mode=mode, target_side=target_side, channel_means=[0.0] * 3, channel_stds=[1.0] * 3)
            case "wavelet":
                return cls(mode=mode, target_side=target_side, channel_means=[0.0] * 3, channel_stds=[1.0] * 3, wavelet_levels=2)
        raise ValueError(f"Unknown preprocessing mode {mode}")

    @property
    def channels(self) -> int:
        return len(self.channel_means)


def _unit_array(image: Image.Image) -> np.ndarray:
    match image.mode:
        case "1" | "L" | "LA":
            array = np.asarray(image.convert("L"), dtype=np.float64)[:, :, None] / 255.0
        case "I;16" | "I;16B" | "I;16L" | "I":
            array = np.asarray(image, dtype=np.float64)[:, :, None] / 65535.0
        case _:
            array = np.asarray(image.convert("RGB"), dtype=np.float64) / 255.0
    return np.clip(array, 0.0, 1.0)


def decode_image(data: bytes) -> PixelImage:
    if not data:
        raise MalformedImage("Empty image body")
    try:
        image = Image.open(io.BytesIO(data))
    except UnidentifiedImageError as e:
        raise MalformedImage(f"Undecodable image bytes: {e}") from e
    except Image.DecompressionBombError as e:
        raise TooLarge(f"Image dimensions too large: {e}") from e
    if image.format not in SUPPORTED_FORMATS:
        raise UnsupportedFormat(f"Unsupported image container {image.format}")
    width, height = image.size
    if width * height > MAX_DECODE_PIXELS:
        raise TooLarge(f"{width}x{height} image exceeds {MAX_DECODE_PIXELS} pixels")
    try:
        image.load()
        array = _unit_array(image)
    except (OSError, SyntaxError, ValueError) as e:
        raise MalformedImage(f"Corrupt {image.format} stream: {e}") from e
    return PixelImage(data=array)


def load_image(path) -> PixelImage:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IoFailure(f"Cannot read image {path}: {e}") from e
    return decode_image(data)


def encode_png(img: PixelImage) -> bytes:
    # 8-bit quantization happens only here
    array = np.round(img.data * 255.0).astype(np.uint8)
    if img.channels == 1:
        array = array[:, :, 0]
    buffer = io.BytesIO()
    Image.fromarray(array).save(buffer, format="PNG")
    return buffer.getvalue()


def to_rgb(img: PixelImage) -> PixelImage:
    if img.channels == 3:
        return img
    return PixelImage(data=np.repeat(img.data, 3, axis=2))


def _resize_bilinear(data: np.ndarray, width: int, height: int) -> np.ndarray:
    if data.shape[:2] == (height, width):
        return data
    planes = []
    for channel in range(data.shape[2]):
        plane = Image.fromarray(data[:, :, channel].astype(np.float32))
        plane = plane.resize((width, height), resample=Image.Resampling.BILINEAR)
        planes.append(np.asarray(plane, dtype=np.float64))
    return np.clip(np.stack(planes, axis=-1), 0.0, 1.0)


def resize_pad(img: PixelImage, target_side: int) -> PixelImage:
    """Scale the longer side to target_side, then zero-pad the shorter axis symmetrically."""
    if target_side < 1:
        raise ValueError("target_side must be at least 1")
    height, width, channels = img.data.shape
    if height == 0 or width == 0:
        raise EmptyImage("Cannot resize an empty image")
    if height == width == target_side:
        return img

    scale = target_side / max(height, width)
    new_width = min(target_side, max(1, round(width * scale)))
    new_height = min(target_side, max(1, round(height * scale)))
    content = _resize_bilinear(img.data, new_width, new_height)

    # Odd leftover padding goes to the bottom/right
    top = (target_side - new_height) // 2
    left = (target_side - new_width) // 2
    canvas = np.zeros((target_side, target_side, channels), dtype=np.float64)
    canvas[top:top + new_height, left:left + new_width, :] = content
    return PixelImage(data=canvas)


def normalize(img: PixelImage, cfg: PreprocessConfig) -> PlaneTensor:
    if img.channels != cfg.channels:
        raise ChannelMismatch(f"Image has {img.channels} channels, config expects {cfg.channels}")
    if img.height != cfg.target_side or img.width != cfg.target_side:
        raise ShapeMismatch(f"Image is {img.width}x{img.height}, expected {cfg.target_side}x{cfg.target_side}")

    planes = np.transpose(img.data, (2, 0, 1))
    if cfg.mode == "per_image":
        means = planes.mean(axis=(1, 2))
        stds = planes.std(axis=(1, 2))
        stds = np.where(stds < 1e-6, 1.0, stds)
    else:
        means = np.asarray(cfg.channel_means, dtype=np.float64)
        stds = np.asarray(cfg.channel_stds, dtype=np.float64)
    return PlaneTensor(data=(planes - means[:, None, None]) / stds[:, None, None])


def _check_divisible(t: PlaneTensor, levels: int) -> None:
    if levels < 0:
        raise ValueError("levels must be non-negative")
    block = 2 ** levels
    if t.height % block or t.width % block:
        raise IndivisibleSize(f"{t.height}x{t.width} is not divisible by 2^{levels}")


def haar_dwt2(t: PlaneTensor, levels: int) -> PlaneTensor:
    """Orthonormal 2-D Haar analysis in Mallat layout, applied to the running LL quadrant.

    Each 2x2 block {a, b; c, d} becomes LL=(a+b+c+d)/2 (top-left), HL=(a-b+c-d)/2
    (top-right), LH=(a+b-c-d)/2 (bottom-left) and HH=(a-b-c+d)/2 (bottom-right).
    """
    _check_divisible(t, levels)
    if levels == 0:
        return t
    out = np.array(t.data, dtype=np.float64)
    height, width = t.height, t.width
    for _ in range(levels):
        block = out[:, :height, :width]
        a = block[:, 0::2, 0::2]
        b = block[:, 0::2, 1::2]
        c = block[:, 1::2, 0::2]
        d = block[:, 1::2, 1::2]
        half_h, half_w = height // 2, width // 2
        transformed = np.empty_like(block)
        transformed[:, :half_h, :half_w] = (a + b + c + d) / 2
        transformed[:, :half_h, half_w:] = (a - b + c - d) / 2
        transformed[:, half_h:, :half_w] = (a + b - c - d) / 2
        transformed[:, half_h:, half_w:] = (a - b - c + d) / 2
        out[:, :height, :width] = transformed
        height, width = half_h, half_w
    return PlaneTensor(data=out)


def haar_idwt2(t: PlaneTensor, levels: int) -> PlaneTensor:
    _check_divisible(t, levels)
    if levels == 0:
        return t
    out = np.array(t.data, dtype=np.float64)
    for level in reversed(range(levels)):
        height, width = t.height >> level, t.width >> level
        half_h, half_w = height // 2, width // 2
        ll = out[:, :half_h, :half_w]
        hl = out[:, :half_h, half_w:width]
        lh = out[:, half_h:height, :half_w]
        hh = out[:, half_h:height, half_w:width]
        block = np.empty((t.channels, height, width), dtype=np.float64)
        block[:, 0::2, 0::2] = (ll + lh + hl + hh) / 2
        block[:, 0::2, 1::2] = (ll + lh - hl - hh) / 2
        block[:, 1::2, 0::2] = (ll - lh + hl - hh) / 2
        block[:, 1::2, 1::2] = (ll - lh - hl + hh) / 2
        out[:, :height, :width] = block
    return PlaneTensor(data=out)


def mallat_slices(height: int, width: int, levels: int) -> dict[str, tuple[slice, slice]]:
    """Row/column slices of every subband in a Mallat layout, finest level first."""
    slices = {}
    for level in range(1, levels + 1):
        h, w = height >> level, width >> level
        slices[f"LH{level}"] = (slice(h, 2 * h), slice(0, w))
        slices[f"HL{level}"] = (slice(0, h), slice(w, 2 * w))
        slices[f"HH{level}"] = (slice(h, 2 * h), slice(w, 2 * w))
    slices[f"LL{levels}"] = (slice(0, height >> levels), slice(0, width >> levels))
    return slices


def preprocess(img: PixelImage, cfg: PreprocessConfig) -> PlaneTensor:
    """Full input block: replicate grayscale, resize/pad, normalize, optional wavelet."""
    if img.channels == 1 and cfg.channels == 3:
        img = to_rgb(img)
    tensor = normalize(resize_pad(img, cfg.target_side), cfg)
    return haar_dwt2(tensor, cfg.wavelet_levels)
