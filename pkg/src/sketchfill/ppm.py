"""Binary PPM (P6) image files.

Layout: ASCII magic "P6", whitespace-separated width, height and maxval 255
('#' comments allowed), one whitespace byte, then height*width*3 bytes of
row-major RGB. Arrays are [3, H, W] float64 in [0, 1], top-left origin.
"""
from __future__ import annotations

import numpy as np


class ImageFormatError(ValueError):
    """File is not a readable 8-bit P6 image."""


def write_image(path, image: np.ndarray) -> None:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ImageFormatError(f"expected a [3,H,W] image, got shape {arr.shape}")
    if str(path).lower().endswith(".ppm") is False:
        raise ImageFormatError(f"unsupported output format for {path!r}; use .ppm")
    _, h, w = arr.shape
    quantized = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    payload = quantized.transpose(1, 2, 0).tobytes()
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(payload)


def _tokens(blob: bytes):
    """Yield header tokens, skipping whitespace and '#' comments."""
    i, n = 0, len(blob)
    while i < n:
        c = blob[i : i + 1]
        if c.isspace():
            i += 1
            continue
        if c == b"#":
            while i < n and blob[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not blob[i : i + 1].isspace():
            i += 1
        yield blob[start:i], i
    return


def read_image(path) -> np.ndarray:
    if str(path).lower().endswith(".ppm") is False:
        raise ImageFormatError(f"unsupported input format for {path!r}; use .ppm")
    with open(path, "rb") as f:
        blob = f.read()
    fields, end = [], 0
    try:
        for tok, pos in _tokens(blob):
            fields.append(tok)
            end = pos
            if len(fields) == 4:
                break
    except Exception as exc:  # undecodable header bytes
        raise ImageFormatError(f"malformed header in {path!r}") from exc
    if len(fields) < 4 or fields[0] != b"P6":
        raise ImageFormatError(f"{path!r} is not a binary P6 file")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError as exc:
        raise ImageFormatError(f"non-numeric header fields in {path!r}") from exc
    if w < 1 or h < 1:
        raise ImageFormatError(f"bad dimensions {w}x{h} in {path!r}")
    if maxval != 255:
        raise ImageFormatError(f"unsupported depth: maxval {maxval} (only 255)")
    data = blob[end + 1 :]
    need = w * h * 3
    if len(data) < need:
        raise ImageFormatError(
            f"truncated pixel data in {path!r}: need {need} bytes, have {len(data)}"
        )
    pixels = np.frombuffer(data[:need], dtype=np.uint8).reshape(h, w, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0
