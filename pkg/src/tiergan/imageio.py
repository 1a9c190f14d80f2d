"""Binary PGM/PPM codecs and the 8-bit preprocessing chain."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MaxvalError, TruncatedImageError, UnsupportedFormatError

_WHITESPACE = b" \t\r\n\v\f"


@dataclass
class ImageU8:
    width: int
    height: int
    channels: int
    pixels: np.ndarray  # uint8, shape (height, width, channels)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8).reshape(self.height, self.width, self.channels)
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")

    @classmethod
    def from_array(cls, arr) -> "ImageU8":
        arr = np.asarray(arr, dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(w, h, c, arr)


def _read_token(buf: bytes, pos: int):
    while True:
        while pos < len(buf) and buf[pos] in _WHITESPACE:
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos] not in b"\r\n":
                pos += 1
            continue
        break
    start = pos
    while pos < len(buf) and buf[pos] not in _WHITESPACE and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise TruncatedImageError("header ended early")
    return buf[start:pos], pos


def decode_pnm(buf: bytes) -> ImageU8:
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormatError(f"unsupported format {magic!r}; only binary P5/P6 are read")
    channels = 1 if magic == b"P5" else 3
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise UnsupportedFormatError(f"malformed header field {tok!r}") from None
    width, height, maxval = fields
    if maxval != 255:
        raise MaxvalError(f"maxval must be 255, got {maxval}")
    if width < 1 or height < 1:
        raise UnsupportedFormatError(f"bad dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * channels
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise TruncatedImageError(f"payload has {len(payload)} of {need} bytes")
    return ImageU8(width, height, channels, np.frombuffer(payload, dtype=np.uint8))


def encode_pnm(img: ImageU8) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (img.width, img.height)
    return header + np.ascontiguousarray(img.pixels, dtype=np.uint8).tobytes()


def load_pgm_ppm(path) -> ImageU8:
    return decode_pnm(Path(path).read_bytes())


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_pgm(img: ImageU8, path) -> None:
    if img.channels != 1:
        raise ValueError("save_pgm needs a single-channel image")
    _atomic_write(Path(path), encode_pnm(img))


def save_ppm(img: ImageU8, path) -> None:
    if img.channels != 3:
        raise ValueError("save_ppm needs a three-channel image")
    _atomic_write(Path(path), encode_pnm(img))


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_grayscale(img: ImageU8) -> ImageU8:
    """Rec.601 luma: round(0.299 R + 0.587 G + 0.114 B)."""
    if img.channels != 3:
        raise ValueError(f"to_grayscale needs 3 channels, got {img.channels}")
    # integer weights keep the rounding exact: 299 + 587 + 114 = 1000
    rgb = img.pixels.astype(np.int64)
    acc = rgb[..., 0] * 299 + rgb[..., 1] * 587 + rgb[..., 2] * 114
    y = np.clip((acc + 500) // 1000, 0, 255).astype(np.uint8)
    return ImageU8(img.width, img.height, 1, y)


def resize_nearest(img: ImageU8, out_w: int, out_h: int) -> ImageU8:
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    rows = (np.arange(out_h) * img.height) // out_h
    cols = (np.arange(out_w) * img.width) // out_w
    return ImageU8(out_w, out_h, img.channels, img.pixels[rows][:, cols])


def normalize(img: ImageU8) -> np.ndarray:
    """(1, H, W) float32 in [0, 1]."""
    if img.channels != 1:
        raise ValueError(f"normalize needs a single-channel image, got {img.channels}")
    return (img.pixels[:, :, 0].astype(np.float32) / np.float32(255.0))[None]


def denormalize(t) -> ImageU8:
    arr = np.asarray(getattr(t, "data", t), dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise ValueError(f"denormalize expects (1, H, W), got {arr.shape}")
        arr = arr[0]
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot denormalize non-finite values")
    px = np.clip(round_half_away(arr * 255.0), 0, 255).astype(np.uint8)
    return ImageU8.from_array(px)


def preprocess(img: ImageU8, size: int) -> ImageU8:
    """Grayscale (if colour) and nearest-neighbour resize to ``size`` x ``size``."""
    if img.channels == 3:
        img = to_grayscale(img)
    return resize_nearest(img, size, size)
