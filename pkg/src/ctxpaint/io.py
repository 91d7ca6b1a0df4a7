"""Raw tensor files (ICDF) and 8-bit PNG image I/O.

ICDF layout::

    b"ICDF" | u8 rank | rank x u32 LE extents | f32 LE payload (row-major)
"""

from __future__ import annotations

import io
import os
import struct
import zlib

import numpy as np
from PIL import Image

from .errors import FormatError

ICDF_MAGIC = b"ICDF"
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def encode_icdf(array) -> bytes:
    arr = np.asarray(array, dtype="<f4")
    if arr.ndim > 255:
        raise FormatError("ICDF supports rank <= 255")
    header = ICDF_MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def decode_icdf(raw: bytes, name: str = "<bytes>") -> np.ndarray:
    if len(raw) < 5:
        raise FormatError(f"{name}: truncated header at byte {len(raw)}")
    if raw[:4] != ICDF_MAGIC:
        raise FormatError(f"{name}: bad magic {raw[:4]!r} at byte 0")
    rank = raw[4]
    dims_end = 5 + 4 * rank
    if len(raw) < dims_end:
        raise FormatError(f"{name}: truncated extents at byte {len(raw)}")
    shape = struct.unpack(f"<{rank}I", raw[5:dims_end])
    count = int(np.prod(shape)) if rank else 1
    expected = dims_end + 4 * count
    if len(raw) != expected:
        offset = min(len(raw), expected)
        raise FormatError(
            f"{name}: payload size mismatch at byte {offset} "
            f"(expected {expected} bytes total, found {len(raw)})"
        )
    return np.frombuffer(raw, dtype="<f4", offset=dims_end).reshape(shape).astype(np.float32)


def save_icdf(path, array) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_icdf(array))


def load_icdf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    return decode_icdf(raw, name=os.fspath(path))


def _check_png_chunks(raw: bytes, name: str) -> None:
    if raw[:8] != PNG_SIGNATURE:
        raise FormatError(f"{name}: not a PNG signature at byte 0")
    pos = 8
    while pos < len(raw):
        if pos + 8 > len(raw):
            raise FormatError(f"{name}: truncated chunk header at byte {pos}")
        (length,) = struct.unpack(">I", raw[pos : pos + 4])
        ctype = raw[pos + 4 : pos + 8]
        end = pos + 12 + length
        if end > len(raw):
            raise FormatError(f"{name}: chunk {ctype!r} overruns file at byte {pos}")
        (crc,) = struct.unpack(">I", raw[end - 4 : end])
        if zlib.crc32(raw[pos + 4 : end - 4]) & 0xFFFFFFFF != crc:
            raise FormatError(f"{name}: CRC mismatch in chunk {ctype!r} at byte {pos}")
        if ctype == b"IEND":
            return
        pos = end
    raise FormatError(f"{name}: missing IEND chunk at byte {pos}")


def read_png(path) -> Image.Image:
    name = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    _check_png_chunks(raw, name)
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:  # Pillow raises a zoo of exception types
        raise FormatError(f"{name}: undecodable PNG ({exc})") from None
    return img


def load_image(path) -> np.ndarray:
    """Decode a PNG into float32 ``[C, H, W]`` with values ``byte / 255``."""
    img = read_png(path)
    if img.mode in ("L", "1", "I;16", "I"):
        arr = np.asarray(img.convert("L"), dtype=np.float32)[None]
    else:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32).transpose(2, 0, 1)
    return arr / 255.0


def quantize(img) -> np.ndarray:
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.round(arr * 255.0).astype(np.uint8)


def save_image(path, img) -> None:
    """Encode float ``[C, H, W]`` (C in {1, 3}) in ``[0, 1]`` as 8-bit PNG."""
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise FormatError(f"cannot encode image of shape {arr.shape} as PNG")
    q = quantize(arr)
    if q.shape[0] == 1:
        pil = Image.fromarray(q[0])
    else:
        pil = Image.fromarray(np.ascontiguousarray(q.transpose(1, 2, 0)))
    pil.save(path, format="PNG", optimize=False)


def to_model_range(img01: np.ndarray) -> np.ndarray:
    return (np.asarray(img01, dtype=np.float32) * 2.0 - 1.0).astype(np.float32)


def to_unit_range(img: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(img, dtype=np.float32) + 1.0) * 0.5, 0.0, 1.0)
