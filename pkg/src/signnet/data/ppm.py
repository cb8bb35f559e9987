"""Binary PPM (P6) and PGM (P5) codec for 8-bit images."""

from __future__ import annotations

import numpy as np

from ..errors import DataError

# Rec. 601 luma weights.
LUMA = np.array([0.299, 0.587, 0.114])


def _tokens(buf, count, path):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out, i, n = [], 0, len(buf)
    while len(out) < count:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i:i + 1].isspace() and buf[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise DataError(f"{path}: truncated PNM header")
        out.append(buf[start:i])
    return out, i + 1


def decode_pnm(buf, path="<bytes>"):
    """Decode P6/P5 bytes into a uint8 array (H, W, 3) or (H, W)."""
    if len(buf) < 2 or buf[:2] not in (b"P6", b"P5"):
        raise DataError(f"{path}: not a binary PPM/PGM file")
    channels = 3 if buf[:2] == b"P6" else 1
    try:
        (_, w, h, maxval), offset = _tokens(buf, 4, path)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise DataError(f"{path}: malformed PNM header") from exc
    if w < 1 or h < 1 or maxval != 255:
        raise DataError(f"{path}: unsupported geometry {w}x{h} or maxval {maxval}")
    need = w * h * channels
    body = buf[offset:offset + need]
    if len(body) != need:
        raise DataError(f"{path}: expected {need} pixel bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8)
    return arr.reshape(h, w, 3) if channels == 3 else arr.reshape(h, w)


def read_pnm(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    return decode_pnm(buf, str(path))


def encode_ppm(rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) uint8 array, got {rgb.shape}")
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def write_ppm(path, rgb):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(rgb))


def to_gray(img):
    """Rec. 601 luma of a uint8 image, scaled to [0, 1]."""
    img = np.asarray(img)
    if img.ndim == 2:
        return img.astype(np.float64) / 255.0
    return (img.astype(np.float64) @ LUMA) / 255.0
