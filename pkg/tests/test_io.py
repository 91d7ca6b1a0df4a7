import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ctxpaint.errors import FormatError
from ctxpaint.io import (
    decode_icdf,
    encode_icdf,
    load_icdf,
    load_image,
    save_icdf,
    save_image,
    to_model_range,
    to_unit_range,
)


def chunk(kind: bytes, body: bytes) -> bytes:
    return struct.pack(">I", len(body)) + kind + body + struct.pack(">I", zlib.crc32(kind + body))


def hand_png_2x2() -> bytes:
    """RGB 8-bit, no interlace; each scanline starts with filter byte 0."""
    rows = [bytes([0, 255, 0, 0, 0, 255, 0]), bytes([0, 0, 0, 255, 10, 20, 30])]
    ihdr = struct.pack(">IIBBBBB", 2, 2, 8, 2, 0, 0, 0)
    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr)
            + chunk(b"IDAT", zlib.compress(b"".join(rows))) + chunk(b"IEND", b""))


def test_hand_written_png_fixture(tmp_path):
    path = tmp_path / "fixture.png"
    path.write_bytes(hand_png_2x2())
    img = load_image(path)
    want = np.array([
        [[255, 0], [0, 10]],
        [[0, 255], [0, 20]],
        [[0, 0], [255, 30]],
    ]) / 255.0
    assert img.shape == (3, 2, 2) and img.dtype == np.float32
    np.testing.assert_allclose(img, want, rtol=0, atol=1e-7)


def test_png_crc_error_reports_offset(tmp_path):
    raw = bytearray(hand_png_2x2())
    raw[20] ^= 0xFF  # inside the IHDR body
    (tmp_path / "bad.png").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="at byte 8"):
        load_image(tmp_path / "bad.png")
    (tmp_path / "short.png").write_bytes(hand_png_2x2()[:-12])
    with pytest.raises(FormatError, match="byte"):
        load_image(tmp_path / "short.png")
    (tmp_path / "sig.png").write_bytes(b"GIF89a" + bytes(20))
    with pytest.raises(FormatError, match="byte 0"):
        load_image(tmp_path / "sig.png")


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.sampled_from([1, 3]), st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(0, 1)))
def test_png_round_trip_quantization_bound(tmp_path_factory, img):
    path = tmp_path_factory.mktemp("png") / "x.png"
    save_image(path, img)
    back = load_image(path)
    assert back.shape == img.shape
    assert np.max(np.abs(back - img)) <= 1 / 510 + 1e-7


def test_png_encoding_clamps(tmp_path):
    save_image(tmp_path / "c.png", np.array([[[-0.5, 1.7]]]))
    assert load_image(tmp_path / "c.png").ravel().tolist() == [0.0, 1.0]
    with pytest.raises(FormatError):
        save_image(tmp_path / "bad.png", np.zeros((2, 4, 4)))


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_icdf_round_trip_bit_exact(arr):
    assert decode_icdf(encode_icdf(arr)).tobytes() == arr.tobytes()
    assert decode_icdf(encode_icdf(arr)).shape == arr.shape


def test_icdf_layout(tmp_path):
    raw = encode_icdf(np.array([[1.0, 2.0, 3.0]], np.float32))
    assert raw[:4] == b"ICDF" and raw[4] == 2
    assert struct.unpack("<2I", raw[5:13]) == (1, 3)
    assert struct.unpack("<3f", raw[13:]) == (1.0, 2.0, 3.0)
    save_icdf(tmp_path / "t.icdf", np.arange(6.0).reshape(2, 3))
    assert load_icdf(tmp_path / "t.icdf").tolist() == [[0, 1, 2], [3, 4, 5]]


def test_icdf_errors_name_offsets():
    good = encode_icdf(np.ones((2, 2)))
    with pytest.raises(FormatError, match="byte 0"):
        decode_icdf(b"XXXX" + good[4:])
    with pytest.raises(FormatError, match="byte 17"):
        decode_icdf(good[:17])
    with pytest.raises(FormatError, match="byte"):
        decode_icdf(good[:3])


def test_range_conversion():
    x = np.array([0.0, 0.25, 1.0], np.float32)
    assert to_model_range(x).tolist() == [-1.0, -0.5, 1.0]
    assert to_unit_range(np.array([-3.0, 0.0, 3.0])).tolist() == [0.0, 0.5, 1.0]
