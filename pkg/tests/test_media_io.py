import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from panosum.errors import DimensionMismatch, EmptySequence, InvalidValue, MalformedImage, MissingField, UnsupportedFormat
from panosum.media_io import (
    CameraIntrinsics,
    decode_image,
    encode_image,
    load_frame_sequence,
    load_intrinsics,
    to_grayscale,
    write_image,
)

images = st.one_of(
    arrays(np.uint8, st.tuples(st.integers(1, 7), st.integers(1, 7))),
    arrays(np.uint8, st.tuples(st.integers(1, 7), st.integers(1, 7), st.just(3))),
)


def test_decode_tiny_ppm():
    data = b"P6\n2 1\n255\n" + bytes([10, 20, 30, 40, 50, 60])
    img = decode_image(data)
    assert img.shape == (1, 2, 3)
    assert img.tolist() == [[[10, 20, 30], [40, 50, 60]]]


def test_decode_black_png():
    img = decode_image(encode_image(np.zeros((1, 1, 3), np.uint8), "PNG"))
    assert img.shape == (1, 1, 3)
    assert img.tolist() == [[[0, 0, 0]]]


def test_decode_pgm_is_single_channel():
    img = decode_image(b"P5\n3 2\n255\n" + bytes(range(6)))
    assert img.shape == (2, 3)
    assert img[1, 2] == 5


def test_pnm_header_comments_are_skipped():
    img = decode_image(b"P5\n# made by hand\n1 1\n255\n\x07")
    assert img.tolist() == [[7]]


def test_truncated_payload():
    with pytest.raises(MalformedImage):
        decode_image(b"P6\n2 2\n255\n" + bytes(3))


@pytest.mark.parametrize("data", [b"GIF89a....", b"", b"P3\n1 1\n255\n0 0 0"])
def test_unknown_magic(data):
    with pytest.raises(UnsupportedFormat):
        decode_image(data)


def test_bad_header():
    with pytest.raises(MalformedImage):
        decode_image(b"P6\nx y\n255\n")
    with pytest.raises(MalformedImage):
        decode_image(b"P6\n1 1\n65535\n" + bytes(6))


def test_corrupt_png():
    good = encode_image(np.zeros((4, 4), np.uint8), "PNG")
    with pytest.raises(MalformedImage):
        decode_image(good[:20])


def test_encode_rejects_jpeg():
    with pytest.raises(UnsupportedFormat):
        encode_image(np.zeros((2, 2), np.uint8), "JPEG")


@settings(max_examples=40, deadline=None)
@given(images, st.sampled_from(["PPM", "PNG"]))
def test_round_trip_is_lossless(img, fmt):
    out = decode_image(encode_image(img, fmt))
    assert out.dtype == np.uint8
    np.testing.assert_array_equal(out, img)


def test_grayscale_formula():
    assert to_grayscale(np.array([[[255, 0, 0]]], np.uint8))[0, 0] == 76
    for v in (0, 1, 127, 128, 254, 255):
        assert to_grayscale(np.full((1, 1, 3), v, np.uint8))[0, 0] == v


def test_grayscale_matches_per_pixel_oracle(rng):
    img = rng.integers(0, 256, size=(9, 11, 3), dtype=np.uint8)
    gray = to_grayscale(img)
    for y in range(img.shape[0]):
        for x in range(img.shape[1]):
            r, g, b = (int(c) for c in img[y, x])
            # round half up, the way the formula is stated
            expected = int(np.floor(0.299 * r + 0.587 * g + 0.114 * b + 0.5))
            assert gray[y, x] == expected


@settings(max_examples=25, deadline=None)
@given(images)
def test_grayscale_idempotent(img):
    g = to_grayscale(img)
    np.testing.assert_array_equal(to_grayscale(g), g)
    assert g.ndim == 2


def test_load_sequence_orders_and_indexes(tmp_path):
    for name in ("frame_0003.ppm", "frame_0001.ppm", "frame_0002.ppm"):
        write_image(tmp_path / name, np.full((4, 5, 3), int(name[-5]), np.uint8))
    frames = load_frame_sequence(tmp_path, "*.ppm")
    assert [f.index for f in frames] == [0, 1, 2]
    assert [f.source_name for f in frames] == ["frame_0001.ppm", "frame_0002.ppm", "frame_0003.ppm"]
    assert [int(f.image[0, 0, 0]) for f in frames] == [1, 2, 3]


def test_load_sequence_errors(tmp_path):
    with pytest.raises(EmptySequence):
        load_frame_sequence(tmp_path)
    write_image(tmp_path / "a.png", np.zeros((48, 64, 3), np.uint8))
    write_image(tmp_path / "b.png", np.zeros((48, 64, 3), np.uint8))
    write_image(tmp_path / "c.png", np.zeros((24, 32, 3), np.uint8))
    with pytest.raises(DimensionMismatch):
        load_frame_sequence(tmp_path)
    with pytest.raises(FileNotFoundError):
        load_frame_sequence(tmp_path / "missing")


def test_load_intrinsics(tmp_path):
    p = tmp_path / "k.json"
    p.write_text(json.dumps({"fx": 500, "fy": 500, "cx": 320, "cy": 240}))
    assert load_intrinsics(p) == CameraIntrinsics(500, 500, 320, 240)

    p.write_text(json.dumps({"fx": 500, "fy": 500, "cx": 320}))
    with pytest.raises(MissingField):
        load_intrinsics(p)

    p.write_text(json.dumps({"fx": -1, "fy": 500, "cx": 320, "cy": 240}))
    with pytest.raises(InvalidValue):
        load_intrinsics(p)

    p.write_text("{not json")
    with pytest.raises(InvalidValue):
        load_intrinsics(p)


def test_intrinsics_matrix():
    k = CameraIntrinsics(400.0, 410.0, 100.0, 80.0)
    np.testing.assert_allclose(k.K @ k.K_inv, np.eye(3), atol=1e-15)
