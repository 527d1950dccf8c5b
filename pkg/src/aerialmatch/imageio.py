"""Binary PPM (P6, maxval 255) reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatViolation


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM needs an (H, W, 3) image, got {img.shape}")
    h, w = img.shape[:2]
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + q.tobytes()


def decode_ppm(data: bytes, name: str = "<bytes>") -> np.ndarray:
    # header is exactly three newline-terminated ASCII lines
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6":
        raise FormatViolation(f"{name}: not a binary PPM (bad magic)")
    try:
        w, h = (int(v) for v in parts[1].split())
        maxval = int(parts[2])
    except ValueError:
        raise FormatViolation(f"{name}: malformed PPM header") from None
    if maxval != 255 or w <= 0 or h <= 0:
        raise FormatViolation(f"{name}: unsupported PPM header ({w}x{h}, maxval {maxval})")
    body = parts[3]
    if len(body) != w * h * 3:
        raise FormatViolation(f"{name}: expected {w * h * 3} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def write_ppm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(img))


def read_ppm(path) -> np.ndarray:
    path = Path(path)
    return decode_ppm(path.read_bytes(), str(path))
