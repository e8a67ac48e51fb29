"""Grayscale PGM (P5) and PNG reading/writing, values scaled to [0, 1]."""
from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np
from PIL import Image


class ImageFormatError(ValueError):
    pass


_PGM_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+"
                         rb"(?:#[^\n]*\n\s*)*(\d+)\s")


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = _PGM_HEADER.match(raw)
    if m is None:
        raise ImageFormatError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(v) for v in m.groups())
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    body = raw[m.end():]
    need = w * h * dtype.itemsize
    if len(body) < need:
        raise ImageFormatError(f"{path}: truncated pixel data")
    pix = np.frombuffer(body[:need], dtype=dtype).reshape(h, w)
    return pix.astype(np.float32) / maxval


def write_pgm(path, img: np.ndarray, bits: int = 8) -> None:
    maxval = 255 if bits == 8 else 65535
    q = np.round(np.clip(img, 0, 1) * maxval)
    dtype = np.dtype("u1") if bits == 8 else np.dtype(">u2")
    h, w = q.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(q.astype(dtype).tobytes())


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except OSError as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        return arr.astype(np.float32) / 65535.0
    if mode in ("L", "1"):
        return arr.astype(np.float32) / 255.0
    raise ImageFormatError(f"{path}: expected grayscale PNG, got mode {mode}")


def write_png(path, img: np.ndarray, bits: int = 8) -> None:
    if bits == 8:
        q = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
        Image.fromarray(q).save(path, optimize=False)
    else:
        q = np.round(np.clip(img, 0, 1) * 65535).astype(np.uint16)
        Image.fromarray(q).save(path, optimize=False)


def read_image(path) -> np.ndarray:
    """Read an 8- or 16-bit grayscale PNG/PGM as float32 in [0, 1]."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".pgm", ".pnm"):
        return read_pgm(path)
    if ext == ".png":
        return read_png(path)
    raise ImageFormatError(f"{path}: unsupported image extension {ext!r}")


def write_image(path, img: np.ndarray, bits: int = 8) -> None:
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".pgm", ".pnm"):
        write_pgm(path, img, bits)
    elif ext == ".png":
        write_png(path, img, bits)
    else:
        raise ImageFormatError(f"{path}: unsupported image extension {ext!r}")


def read_mask(path) -> np.ndarray:
    return read_image(path) >= 0.5


def write_mask(path, mask: np.ndarray) -> None:
    write_image(path, mask.astype(np.float32), bits=8)
