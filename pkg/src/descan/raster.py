"""Image container and the binary netpbm (PGM P5 / PPM P6) codec.

Intensities are linear in [0, 1]; a byte b maps to b/255 on load and back
to round-half-away-from-zero on save, so load/save round-trips bytes
exactly.  Only maxval 255 is supported.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import CodecError, DimensionError

__all__ = ["Image", "Mask", "load_image", "save_image", "channel_map"]


@dataclass(frozen=True)
class Image:
    """A rectangular raster of float intensities, shape (height, width, channels).

    channels is 1 (grayscale) or 3 (RGB).  The pixel array is row-major, so
    flattening yields the width*height*channels sample order the operators
    assume.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, np.newaxis]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise DimensionError(
                f"pixels must have shape (h, w) or (h, w, 1|3), got {px.shape}"
            )
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise DimensionError(f"image dimensions must be positive, got {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def clamped(self) -> "Image":
        """Copy with all samples clipped to [0, 1]."""
        return Image(np.clip(self.pixels, 0.0, 1.0))

    def to_bytes(self) -> np.ndarray:
        """Quantize to uint8, rounding half away from zero after clamping."""
        clipped = np.clip(self.pixels, 0.0, 1.0)
        return np.floor(clipped * 255.0 + 0.5).astype(np.uint8)

    @classmethod
    def from_bytes(cls, data: np.ndarray) -> "Image":
        return cls(np.asarray(data, dtype=np.float64) / 255.0)


@dataclass(frozen=True)
class Mask:
    """Boolean per-pixel annotation; dimensions must match the image it tags."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise DimensionError(f"mask must be 2-D, got shape {bits.shape}")
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def matches(self, image: Image) -> bool:
        return (self.height, self.width) == (image.height, image.width)


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Read one whitespace/comment-delimited header token starting at pos."""
    n = len(data)
    while pos < n:
        b = data[pos : pos + 1]
        if b == b"#":
            eol = data.find(b"\n", pos)
            if eol < 0:
                raise CodecError("unterminated comment in header", offset=pos)
            pos = eol + 1
        elif b.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise CodecError("truncated header", offset=pos)
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def _int_token(data: bytes, pos: int, what: str) -> tuple[int, int]:
    token, pos = _next_token(data, pos)
    try:
        return int(token), pos
    except ValueError:
        raise CodecError(f"invalid {what} {token!r}", offset=pos - len(token)) from None


def load_image(path) -> Image:
    """Decode a binary PGM (P5) or PPM (P6) file with maxval 255."""
    data = Path(path).read_bytes()
    magic, pos = _next_token(data, 0)
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise CodecError(f"unsupported magic {magic!r} (need P5 or P6)", offset=0)
    width, pos = _int_token(data, pos, "width")
    height, pos = _int_token(data, pos, "height")
    if width < 1 or height < 1:
        raise CodecError(f"invalid dimensions {width}x{height}", offset=pos)
    maxval, pos = _int_token(data, pos, "maxval")
    if maxval != 255:
        raise CodecError(f"unsupported maxval {maxval} (need 255)", offset=pos)
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise CodecError("missing whitespace after maxval", offset=pos)
    pos += 1  # exactly one whitespace byte separates header from payload
    expected = width * height * channels
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise CodecError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}",
            offset=pos + len(payload),
        )
    raster = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Image.from_bytes(raster)


def save_image(image: Image, path) -> None:
    """Encode to binary PGM/PPM with maxval 255, the bit-exact load inverse."""
    magic = b"P5" if image.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (image.width, image.height)
    Path(path).write_bytes(header + image.to_bytes().tobytes())


def channel_map(
    image: Image,
    transform: Callable[[np.ndarray], np.ndarray] | Sequence[Callable],
) -> Image:
    """Apply a scalar transform to each channel independently.

    transform is either one callable used for every channel or a sequence
    with one callable per channel; each receives and returns a 2-D array.
    """
    if callable(transform):
        transforms = [transform] * image.channels
    else:
        transforms = list(transform)
        if len(transforms) != image.channels:
            raise DimensionError(
                f"need {image.channels} transforms, got {len(transforms)}"
            )
    out = np.empty_like(image.pixels)
    for c, fn in enumerate(transforms):
        mapped = np.asarray(fn(image.pixels[:, :, c]), dtype=np.float64)
        if mapped.shape != image.pixels.shape[:2]:
            raise DimensionError(
                f"transform changed channel shape to {mapped.shape}"
            )
        out[:, :, c] = mapped
    return Image(out)
