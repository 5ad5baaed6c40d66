"""Binary PPM (P6) / PGM (P5) reading and writing, 8-bit only."""

from __future__ import annotations

import numpy as np


class NetpbmError(ValueError):
    """Malformed or unsupported Netpbm file."""


class MaxvalError(NetpbmError):
    """The file declares a maxval other than 255."""


class TruncatedError(NetpbmError):
    """The pixel payload is shorter than the header promises."""


_MAGIC = {b"P6": 3, b"P5": 1}


def _tokens(buf: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset of the single whitespace byte that ends
    the last token.
    """
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise NetpbmError("incomplete header")
        tokens.append(buf[start:pos])
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise NetpbmError("header must end with a single whitespace byte")
    return tokens, pos + 1


def decode(buf: bytes, expect: bytes | None = None) -> np.ndarray:
    """Decode P6 to uint8 [H, W, 3] or P5 to uint8 [H, W]."""
    magic = buf[:2]
    if magic not in _MAGIC:
        raise NetpbmError(f"unsupported magic {magic!r}")
    if expect is not None and magic != expect:
        raise NetpbmError(f"expected {expect.decode()} file, found {magic.decode()}")
    tokens, offset = _tokens(buf[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise NetpbmError(f"non-numeric header fields {tokens!r}") from None
    if width <= 0 or height <= 0:
        raise NetpbmError(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise MaxvalError(f"maxval {maxval} unsupported (only 255)")
    channels = _MAGIC[magic]
    size = width * height * channels
    payload = buf[2 + offset:2 + offset + size]
    if len(payload) < size:
        raise TruncatedError(f"payload has {len(payload)} of {size} bytes")
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape((height, width, 3) if channels == 3 else (height, width)).copy()


def encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise NetpbmError("values must fit in 8 bits")
        arr = arr.astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    elif arr.ndim == 2:
        magic = b"P5"
    else:
        raise NetpbmError(f"cannot encode array of shape {arr.shape}")
    h, w = arr.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(arr).tobytes()


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read(), b"P6")


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read(), b"P5")


def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise NetpbmError(f"PPM needs [H, W, 3], got {image.shape}")
    with open(path, "wb") as fh:
        fh.write(encode(image))


def write_pgm(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise NetpbmError(f"PGM needs [H, W], got {mask.shape}")
    with open(path, "wb") as fh:
        fh.write(encode(mask))
