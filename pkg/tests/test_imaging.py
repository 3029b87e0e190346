import io

import numpy as np
import pytest
from PIL import Image

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
from utils.imaging import (
    PixelImage,
    PlaneTensor,
    PreprocessConfig,
    decode_image,
    encode_png,
    haar_dwt2,
    haar_idwt2,
    load_image,
    mallat_slices,
    normalize,
    preprocess,
    resize_pad,
)


def _png_bytes(array: np.ndarray, mode: str = None) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(array, mode=mode).save(buffer, format="PNG")
    return buffer.getvalue()


def _constant_image(height: int, width: int, value: float, channels: int = 3) -> PixelImage:
    return PixelImage(data=np.full((height, width, channels), value))


def test_decode_white_rgb_png() -> None:
    img = decode_image(_png_bytes(np.full((2, 2, 3), 255, dtype=np.uint8)))

    assert img.data.shape == (2, 2, 3)
    assert np.all(img.data == 1.0)


def test_decode_black_grayscale_png_keeps_one_channel() -> None:
    img = decode_image(_png_bytes(np.zeros((1, 1), dtype=np.uint8)))

    assert img.data.shape == (1, 1, 1)
    assert img.data[0, 0, 0] == 0.0


def test_decode_matches_pillow_on_reference_grid() -> None:
    rng = np.random.default_rng(3)
    pixels = rng.integers(0, 256, size=(3, 4, 3), dtype=np.uint8)
    data = _png_bytes(pixels)

    img = decode_image(data)

    reference = np.asarray(Image.open(io.BytesIO(data)).convert("RGB"), dtype=np.float64) / 255.0
    np.testing.assert_allclose(img.data, reference)
    assert (img.height, img.width) == (3, 4)


def test_decode_jpeg() -> None:
    buffer = io.BytesIO()
    Image.fromarray(np.full((8, 8, 3), 128, dtype=np.uint8)).save(buffer, format="JPEG")

    img = decode_image(buffer.getvalue())

    assert img.data.shape == (8, 8, 3)
    assert abs(float(img.data.mean()) - 128 / 255) < 0.02


def test_decode_rejects_empty_and_garbage_bytes() -> None:
    with pytest.raises(MalformedImage):
        decode_image(b"")
    with pytest.raises(MalformedImage):
        decode_image(b"definitely not an image")


def test_decode_rejects_other_containers() -> None:
    buffer = io.BytesIO()
    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(buffer, format="BMP")

    with pytest.raises(UnsupportedFormat):
        decode_image(buffer.getvalue())


def test_decode_truncated_png_is_malformed() -> None:
    data = _png_bytes(np.random.default_rng(5).integers(0, 256, size=(32, 32, 3), dtype=np.uint8))

    with pytest.raises(MalformedImage):
        decode_image(data[: len(data) // 2])


def test_decode_rejects_images_past_the_pixel_cap(monkeypatch) -> None:
    monkeypatch.setattr("utils.imaging.MAX_DECODE_PIXELS", 100)

    with pytest.raises(TooLarge):
        decode_image(_png_bytes(np.zeros((16, 16), dtype=np.uint8)))


def test_decompression_bomb_is_too_large(monkeypatch) -> None:
    data = _png_bytes(np.zeros((16, 16), dtype=np.uint8))
    monkeypatch.setattr(Image, "MAX_IMAGE_PIXELS", 100)

    with pytest.raises(TooLarge):
        decode_image(data)


def test_load_image_missing_file(tmp_path) -> None:
    with pytest.raises(IoFailure):
        load_image(tmp_path / "missing.png")


def test_encode_png_quantizes_to_eight_bits() -> None:
    img = _constant_image(5, 7, 0.5)

    decoded = decode_image(encode_png(img))

    assert decoded.data.shape == (5, 7, 3)
    np.testing.assert_allclose(decoded.data, 128 / 255)


def test_pixel_image_rejects_out_of_range_values() -> None:
    with pytest.raises(ValueError):
        PixelImage(data=np.full((2, 2, 3), 1.5))


def test_pixel_image_is_immutable() -> None:
    img = _constant_image(2, 2, 0.5)

    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1.0


def test_resize_pad_identity_at_target_size() -> None:
    img = _constant_image(224, 224, 0.3)

    assert resize_pad(img, 224) is img


def test_resize_pad_wide_image_pads_rows_evenly() -> None:
    img = _constant_image(224, 448, 0.5)

    out = resize_pad(img, 224)

    assert out.data.shape == (224, 224, 3)
    assert np.all(out.data[:56] == 0.0)
    assert np.all(out.data[168:] == 0.0)
    np.testing.assert_allclose(out.data[56:168], 0.5, atol=1e-6)


def test_resize_pad_tall_image_pad_mask() -> None:
    img = _constant_image(100, 50, 0.5)

    out = resize_pad(img, 224)

    # 100x50 scales to 224x112 and pads 56 columns on each side
    content = np.zeros((224, 224), dtype=bool)
    content[:, 56:168] = True
    assert np.all(out.data[~content] == 0.0)
    np.testing.assert_allclose(out.data[content], 0.5, atol=1e-6)


def test_resize_pad_odd_padding_goes_bottom() -> None:
    img = _constant_image(3, 10, 1.0)

    out = resize_pad(img, 10)

    # 3 content rows, 7 pad rows: 3 above, 4 below
    rows = out.data[:, :, 0].max(axis=1)
    assert list(np.flatnonzero(rows > 0)) == [3, 4, 5]


def test_resize_pad_empty_image() -> None:
    with pytest.raises(EmptyImage):
        resize_pad(PixelImage(data=np.zeros((0, 5, 3))), 224)


def test_normalize_mean_cancellation() -> None:
    cfg = PreprocessConfig(target_side=4, channel_means=[0.5] * 3, channel_stds=[1.0] * 3)

    t = normalize(_constant_image(4, 4, 0.5), cfg)

    assert t.data.shape == (3, 4, 4)
    assert np.all(t.data == 0.0)


def test_normalize_imagenet_affine_map() -> None:
    cfg = PreprocessConfig(target_side=2)

    t = normalize(_constant_image(2, 2, 1.0), cfg)

    assert t.data[0, 0, 0] == pytest.approx((1.0 - 0.485) / 0.229)
    assert t.data[0, 0, 0] == pytest.approx(2.2489, abs=1e-4)


def test_normalize_raw_is_transpose() -> None:
    data = np.random.default_rng(0).uniform(size=(4, 4, 3))
    cfg = PreprocessConfig.for_mode("raw", target_side=4)

    t = normalize(PixelImage(data=data), cfg)

    np.testing.assert_array_equal(t.data, np.transpose(data, (2, 0, 1)))


def test_normalize_per_image_standardizes_each_channel() -> None:
    data = np.random.default_rng(1).uniform(size=(8, 8, 3))
    cfg = PreprocessConfig.for_mode("per_image", target_side=8)

    t = normalize(PixelImage(data=data), cfg)

    np.testing.assert_allclose(t.data.mean(axis=(1, 2)), 0.0, atol=1e-12)
    np.testing.assert_allclose(t.data.std(axis=(1, 2)), 1.0, atol=1e-12)


def test_normalize_is_affine_between_two_images() -> None:
    rng = np.random.default_rng(5)
    cfg = PreprocessConfig(target_side=8)
    a, b = rng.uniform(size=(2, 8, 8, 3))
    blend = 0.3 * a + 0.7 * b

    mixed = normalize(PixelImage(data=blend), cfg).data
    expected = 0.3 * normalize(PixelImage(data=a), cfg).data + 0.7 * normalize(PixelImage(data=b), cfg).data

    np.testing.assert_allclose(mixed, expected, atol=1e-12)


def test_normalize_channel_and_shape_mismatch() -> None:
    cfg = PreprocessConfig(target_side=4)

    with pytest.raises(ChannelMismatch):
        normalize(_constant_image(4, 4, 0.5, channels=1), cfg)
    with pytest.raises(ShapeMismatch):
        normalize(_constant_image(5, 4, 0.5), cfg)


def test_haar_zero_levels_is_identity() -> None:
    t = PlaneTensor(data=np.random.default_rng(2).normal(size=(3, 6, 10)))

    assert haar_dwt2(t, 0) is t
    assert haar_idwt2(t, 0) is t


def test_haar_constant_plane() -> None:
    t = PlaneTensor(data=np.full((1, 4, 4), 0.7))

    out = haar_dwt2(t, 1).data[0]

    np.testing.assert_allclose(out[:2, :2], 1.4)
    assert np.all(out[2:, :] == 0.0)
    assert np.all(out[:, 2:] == 0.0)


def test_haar_single_block_subbands() -> None:
    t = PlaneTensor(data=np.array([[[1.0, 2.0], [3.0, 4.0]]]))

    out = haar_dwt2(t, 1).data[0]

    assert out[0, 0] == pytest.approx(5.0)   # LL
    assert out[0, 1] == pytest.approx(-1.0)  # HL, column difference
    assert out[1, 0] == pytest.approx(-2.0)  # LH, row difference
    assert out[1, 1] == pytest.approx(0.0)   # HH, the block has no diagonal component
    # Orthonormal: energy preserved
    assert np.sum(out ** 2) == pytest.approx(30.0)


def test_haar_preserves_energy_and_inverts() -> None:
    x = PlaneTensor(data=np.random.default_rng(4).normal(size=(3, 16, 24)))

    forward = haar_dwt2(x, 2)

    assert np.sum(forward.data ** 2) == pytest.approx(np.sum(x.data ** 2))
    np.testing.assert_allclose(haar_idwt2(forward, 2).data, x.data, atol=1e-5)


@pytest.mark.parametrize("levels", [1, 2])
def test_haar_energy_and_inverse_on_full_size_tensors(levels: int) -> None:
    rng = np.random.default_rng(levels)
    for _ in range(100):
        x = PlaneTensor(data=rng.normal(size=(3, 224, 224)))

        forward = haar_dwt2(x, levels)

        energy = np.sum(x.data ** 2)
        assert abs(np.sum(forward.data ** 2) - energy) <= 1e-5 * energy
        np.testing.assert_allclose(haar_idwt2(forward, levels).data, x.data, atol=1e-5)


def test_haar_ll_only_reconstructs_constant() -> None:
    coefficients = np.zeros((1, 8, 8))
    coefficients[0, :2, :2] = 4 * 0.25  # LL2 of a constant 0.25 plane

    restored = haar_idwt2(PlaneTensor(data=coefficients), 2)

    np.testing.assert_allclose(restored.data, 0.25)


def test_haar_indivisible_size() -> None:
    t = PlaneTensor(data=np.zeros((1, 6, 6)))

    with pytest.raises(IndivisibleSize):
        haar_dwt2(t, 2)
    with pytest.raises(IndivisibleSize):
        haar_idwt2(t, 2)


def test_mallat_slices_cover_the_plane_once() -> None:
    slices = mallat_slices(8, 8, 2)
    cover = np.zeros((8, 8), dtype=int)
    for rows, cols in slices.values():
        cover[rows, cols] += 1

    assert list(slices) == ["LH1", "HL1", "HH1", "LH2", "HL2", "HH2", "LL2"]
    assert np.all(cover == 1)


def test_preprocess_grayscale_wavelet_mode() -> None:
    img = _constant_image(50, 100, 0.5, channels=1)

    t = preprocess(img, PreprocessConfig.for_mode("wavelet"))

    assert t.data.shape == (3, 224, 224)
    # LL2 of the content region carries 4x the intensity
    assert t.data[0, 28, 28] == pytest.approx(2.0, abs=1e-6)
