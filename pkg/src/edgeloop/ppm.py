"""Binary PPM (P6, maxval 255) reader/writer.

The decoder honors the PPM grammar: header fields are separated by
arbitrary whitespace, ``#`` comments may appear wherever whitespace can,
and exactly one whitespace byte separates the maxval from the raw
interleaved RGB payload.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_WHITESPACE = b" \t\n\r\x0b\x0c"


class PpmError(ValueError):
    """Base class for PPM parse failures."""


class PpmMagicError(PpmError):
    pass


class PpmHeaderError(PpmError):
    pass


class PpmMaxvalError(PpmError):
    pass


class PpmTruncatedError(PpmError):
    pass


@dataclass
class Image:
    """8-bit RGB image, row-major interleaved samples."""

    width: int
    height: int
    data: bytes

    def __post_init__(self):
        if len(self.data) != self.width * self.height * 3:
            raise ValueError(
                f"image payload is {len(self.data)} bytes, expected "
                f"{self.width}x{self.height}x3 = {self.width * self.height * 3}"
            )

    def to_array(self) -> np.ndarray:
        """(H, W, 3) uint8 view of the pixel data."""
        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.height, self.width, 3)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Image":
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise ValueError(f"expected (H, W, 3) uint8 array, got {arr.shape} {arr.dtype}")
        return cls(width=arr.shape[1], height=arr.shape[0], data=arr.tobytes())


def _skip_separators(buf: bytes, pos: int) -> int:
    while pos < len(buf):
        c = buf[pos : pos + 1]
        if c in (b"#",):
            nl = buf.find(b"\n", pos)
            pos = len(buf) if nl < 0 else nl + 1
        elif c and c in _WHITESPACE:
            pos += 1
        else:
            break
    return pos


def _read_int(buf: bytes, pos: int, what: str) -> tuple[int, int]:
    pos = _skip_separators(buf, pos)
    start = pos
    while pos < len(buf) and buf[pos : pos + 1].isdigit():
        pos += 1
    if pos == start:
        raise PpmHeaderError(f"expected integer for {what} at byte {start}")
    return int(buf[start:pos]), pos


def decode_ppm(data: bytes) -> Image:
    """Parse binary P6 bytes into an :class:`Image`."""
    if data[:2] != b"P6":
        raise PpmMagicError(f"bad magic {data[:2]!r}, expected b'P6'")
    pos = 2
    width, pos = _read_int(data, pos, "width")
    height, pos = _read_int(data, pos, "height")
    maxval, pos = _read_int(data, pos, "maxval")
    if width < 1 or height < 1:
        raise PpmHeaderError(f"non-positive dimensions {width}x{height}")
    if maxval != 255:
        raise PpmMaxvalError(f"maxval {maxval} unsupported, only 255")
    if pos >= len(data) or data[pos : pos + 1] not in _WHITESPACE:
        raise PpmHeaderError("missing single whitespace after maxval")
    pos += 1
    need = width * height * 3
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise PpmTruncatedError(f"payload is {len(payload)} bytes, expected {need}")
    return Image(width=width, height=height, data=bytes(payload))


def encode_ppm(img: Image) -> bytes:
    """Canonical P6 encoding: ``P6\\n{w} {h}\\n255\\n`` + payload."""
    return b"P6\n%d %d\n255\n" % (img.width, img.height) + img.data
