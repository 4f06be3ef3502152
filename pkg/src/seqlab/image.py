"""Image value type and binary PNM (P5/P6) reading and writing."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np


class ImageError(ValueError):
    """Malformed image data or file."""


class Image:
    """An immutable H x W x C grid of 8-bit intensities, C in {1, 3}.

    ``pixels`` is stored as a read-only ``uint8`` array of shape (H, W, C);
    its row-major flattening is the canonical pixel order.
    """

    __slots__ = ("pixels",)

    def __init__(self, pixels):
        arr = np.asarray(pixels)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ImageError(f"expected (H, W, C) array, got shape {arr.shape}")
        h, w, c = arr.shape
        if h < 1 or w < 1:
            raise ImageError(f"empty image {arr.shape}")
        if c not in (1, 3):
            raise ImageError(f"channels must be 1 or 3, got {c}")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255) or not np.all(arr == np.floor(arr)):
                raise ImageError("intensities must be integers in [0, 255]")
            arr = arr.astype(np.uint8)
        else:
            arr = arr.copy() if arr.flags.writeable else arr
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Image is immutable")

    @classmethod
    def _trusted(cls, arr: np.ndarray) -> "Image":
        """Wrap an (H, W, C) uint8 array the caller owns, skipping validation."""
        img = object.__new__(cls)
        arr.setflags(write=False)
        object.__setattr__(img, "pixels", arr)
        return img

    @classmethod
    def from_flat(cls, height: int, width: int, channels: int, values) -> "Image":
        flat = np.asarray(values)
        if flat.size != height * width * channels:
            raise ImageError(
                f"{flat.size} values for {height}x{width}x{channels} image"
            )
        return cls(flat.reshape(height, width, channels))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"Image({self.height}x{self.width}x{self.channels})"


def _tokens(data: bytes, count: int, path) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated header integers, skipping comments."""
    out, pos, n = [], 0, len(data)
    while len(out) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageError(f"{path}: truncated PNM header")
        tok = data[start:pos]
        if not tok.isdigit():
            raise ImageError(f"{path}: bad header token {tok!r}")
        out.append(int(tok))
    # exactly one whitespace byte separates header from raster
    if pos >= n or not data[pos : pos + 1].isspace():
        raise ImageError(f"{path}: missing raster separator")
    return out, pos + 1


def decode_pnm(data: bytes, path="<bytes>") -> Image:
    magic = data[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise ImageError(f"{path}: unsupported magic {magic!r} (want P5 or P6)")
    (width, height, maxval), start = _tokens(data[2:], 3, path)
    start += 2
    if maxval != 255:
        raise ImageError(f"{path}: maxval must be 255, got {maxval}")
    if width < 1 or height < 1:
        raise ImageError(f"{path}: bad dimensions {width}x{height}")
    size = width * height * channels
    raster = data[start : start + size]
    if len(raster) != size:
        raise ImageError(f"{path}: expected {size} raster bytes, got {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return Image(arr)


def encode_pnm(img: Image) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def read_pnm(path: str | os.PathLike) -> Image:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageError(f"{path}: {exc}") from exc
    return decode_pnm(data, path)


def write_pnm(path: str | os.PathLike, img: Image) -> None:
    Path(path).write_bytes(encode_pnm(img))
