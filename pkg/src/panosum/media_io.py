"""Frame, intrinsics and image file I/O.

Images are plain ``numpy.uint8`` arrays: ``(H, W)`` for gray and
``(H, W, 3)`` for RGB. This module is the only place that reads or writes
pixel data on disk.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import (
    DimensionMismatch,
    EmptySequence,
    InvalidValue,
    MalformedImage,
    MissingField,
    UnsupportedFormat,
)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
SUPPORTED_FORMATS = ("PPM", "PNG")


@dataclass(frozen=True)
class Frame:
    index: int
    image: np.ndarray
    source_name: str


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InvalidValue(f"{name} must be a number, got {value!r}")
            if not math.isfinite(value):
                raise InvalidValue(f"{name} must be finite, got {value!r}")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidValue(f"focal lengths must be positive (fx={self.fx}, fy={self.fy})")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


def channels(image: np.ndarray) -> int:
    return 1 if image.ndim == 2 else image.shape[2]


def validate_image(image: np.ndarray) -> np.ndarray:
    if not isinstance(image, np.ndarray) or image.dtype != np.uint8:
        raise InvalidValue("images must be uint8 numpy arrays")
    if image.ndim not in (2, 3) or (image.ndim == 3 and image.shape[2] != 3):
        raise InvalidValue(f"unsupported image shape {image.shape}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise InvalidValue("image must be at least 1x1")
    return image


def _read_pnm_header(data: bytes) -> tuple[int, int, int, int]:
    """Parse a binary PNM header; returns (width, height, maxval, payload offset)."""
    fields: list[int] = []
    pos = 2
    n = len(data)
    while len(fields) < 3:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise MalformedImage("invalid PNM header")
        fields.append(int(data[start:pos]))
    if pos >= n or not data[pos : pos + 1].isspace():
        raise MalformedImage("invalid PNM header terminator")
    width, height, maxval = fields
    return width, height, maxval, pos + 1


def _decode_pnm(data: bytes, n_channels: int) -> np.ndarray:
    width, height, maxval, offset = _read_pnm_header(data)
    if width < 1 or height < 1:
        raise MalformedImage(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise MalformedImage(f"only 8-bit PNM (maxval 255) is supported, got {maxval}")
    expected = width * height * n_channels
    payload = data[offset : offset + expected]
    if len(payload) < expected:
        raise MalformedImage(f"truncated payload: {len(payload)} of {expected} bytes")
    pixels = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width) if n_channels == 1 else (height, width, 3)
    return pixels.reshape(shape).copy()


def _decode_png(data: bytes) -> np.ndarray:
    try:
        with PILImage.open(io.BytesIO(data)) as pil:
            pil.load()
            mode = pil.mode
            if mode in ("1", "L", "LA", "I;16", "I;16B", "I"):
                if mode not in ("1", "L", "LA"):
                    raise MalformedImage(f"only 8-bit PNG is supported, got mode {mode}")
                pil = pil.convert("L")
            else:
                pil = pil.convert("RGB")
            return np.array(pil, dtype=np.uint8)
    except MalformedImage:
        raise
    except Exception as exc:  # Pillow raises a variety of errors on bad input
        raise MalformedImage(f"cannot decode PNG: {exc}") from exc


def decode_image(data: bytes) -> np.ndarray:
    """Decode binary PPM (P6), PGM (P5) or PNG bytes into a uint8 array."""
    if data.startswith(b"P6"):
        return _decode_pnm(data, 3)
    if data.startswith(b"P5"):
        return _decode_pnm(data, 1)
    if data.startswith(PNG_SIGNATURE):
        return _decode_png(data)
    raise UnsupportedFormat("unrecognized image magic")


def encode_image(image: np.ndarray, fmt: str = "PNG") -> bytes:
    """Encode losslessly. ``PPM`` writes P6 for RGB and P5 for gray."""
    fmt = fmt.upper()
    if fmt not in SUPPORTED_FORMATS:
        raise UnsupportedFormat(f"cannot encode {fmt!r}; supported: {SUPPORTED_FORMATS}")
    image = validate_image(image)
    height, width = image.shape[:2]
    if fmt == "PPM":
        magic = b"P5" if image.ndim == 2 else b"P6"
        header = magic + f"\n{width} {height}\n255\n".encode("ascii")
        return header + np.ascontiguousarray(image).tobytes()
    buf = io.BytesIO()
    PILImage.fromarray(image, mode="L" if image.ndim == 2 else "RGB").save(buf, format="PNG")
    return buf.getvalue()


def read_image(path: str | Path) -> np.ndarray:
    return decode_image(Path(path).read_bytes())


def write_image(path: str | Path, image: np.ndarray) -> None:
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".ppm", ".pgm", ".pnm") else "PNG"
    path.write_bytes(encode_image(image, fmt))


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Rec. 601 luma, rounded half up. Gray input is returned unchanged."""
    if image.ndim == 2:
        return image
    rgb = image.astype(np.float64)
    luma = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


def load_frame_sequence(directory: str | Path, glob_pattern: str = "*") -> list[Frame]:
    """Load every file matching ``glob_pattern`` in lexicographic order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"frames directory not found: {directory}")
    paths = sorted((p for p in directory.glob(glob_pattern) if p.is_file()), key=lambda p: p.name)
    if not paths:
        raise EmptySequence(f"no frames matching {glob_pattern!r} in {directory}")
    frames = []
    for index, path in enumerate(paths):
        image = read_image(path)
        if frames and image.shape != frames[0].image.shape:
            raise DimensionMismatch(
                f"{path.name} has shape {image.shape}, expected {frames[0].image.shape}"
            )
        frames.append(Frame(index=index, image=image, source_name=path.name))
    return frames


def load_intrinsics(path: str | Path) -> CameraIntrinsics:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidValue(f"intrinsics file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidValue("intrinsics document must be a JSON object")
    for key in ("fx", "fy", "cx", "cy"):
        if key not in doc:
            raise MissingField(f"intrinsics missing {key!r}")
    return CameraIntrinsics(doc["fx"], doc["fy"], doc["cx"], doc["cy"])
