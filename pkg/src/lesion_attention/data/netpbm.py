"""Binary PPM (P6) and PGM (P5) reading and writing."""

from pathlib import Path

import numpy as np

from ..errors import ParseError

_WS = b" \t\n\r\x0b\x0c"


def quantize(values):
    """Map ``[0, 1]`` floats to bytes: clamp, scale by 255, round half away from zero."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def _read_header(buf, path, magic, n_fields):
    if buf[:2] != magic:
        raise ParseError(f"bad magic {buf[:2]!r}, expected {magic!r}", offset=0, path=path)
    pos = 2
    fields = []
    while len(fields) < n_fields:
        if pos >= len(buf):
            raise ParseError("header ended early", offset=pos, path=path)
        ch = buf[pos:pos + 1]
        if ch in (b"#",):
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if ch in _WS and ch:
            pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos:pos + 1] not in _WS and buf[pos:pos + 1] != b"#":
            pos += 1
        token = buf[start:pos]
        if not token.isdigit():
            raise ParseError(f"expected ASCII decimal, got {token!r}", offset=start, path=path)
        fields.append(int(token))
    if pos >= len(buf) or buf[pos:pos + 1] not in _WS:
        raise ParseError("missing whitespace after header", offset=pos, path=path)
    return fields, pos + 1


def _load(path, magic, channels):
    path = Path(path)
    buf = path.read_bytes()
    (w, h, maxval), offset = _read_header(buf, path, magic, 3)
    if maxval != 255:
        raise ParseError(f"unsupported maxval {maxval}", offset=offset - 1, path=path)
    if w < 1 or h < 1:
        raise ParseError(f"invalid size {w}x{h}", offset=2, path=path)
    need = w * h * channels
    payload = buf[offset:offset + need]
    if len(payload) < need:
        raise ParseError(f"pixel payload truncated: need {need} bytes, have {len(payload)}",
                         offset=offset + len(payload), path=path)
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, channels)


def load_ppm(path):
    """Read a binary P6 file as a ``[3, H, W]`` float64 array in ``[0, 1]``."""
    raw = _load(path, b"P6", 3)
    return raw.transpose(2, 0, 1).astype(np.float64) / 255.0


def load_pgm(path):
    """Read a binary P5 file as an ``[H, W]`` uint8 array."""
    return _load(path, b"P5", 1)[:, :, 0].copy()


def encode_ppm(image):
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"PPM image must be [3, H, W], got shape {img.shape}")
    _, h, w = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + quantize(img).transpose(1, 2, 0).tobytes()


def encode_pgm(values):
    """Encode a 2-D float array in ``[0, 1]``, or a uint8 array as-is."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"PGM values must be 2-D, got shape {arr.shape}")
    data = arr if arr.dtype == np.uint8 else quantize(arr)
    h, w = arr.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes()


def save_ppm(image, path):
    Path(path).write_bytes(encode_ppm(image))


def save_pgm(values, path):
    Path(path).write_bytes(encode_pgm(values))
