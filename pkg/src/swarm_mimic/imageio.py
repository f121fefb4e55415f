"""Netpbm (PGM/PPM) reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("PGM needs a 2-D uint8 array")
    _write(path, f"P5\n{img.shape[1]} {img.shape[0]}\n255\n", img)


def write_ppm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("PPM needs an HxWx3 uint8 array")
    _write(path, f"P6\n{img.shape[1]} {img.shape[0]}\n255\n", img)


def _write(path, header: str, img: np.ndarray) -> None:
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(np.ascontiguousarray(img).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def read_gray(path) -> np.ndarray:
    """Any image Pillow understands, converted to 8-bit grayscale."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def read_pgm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode != "L":
            raise ValueError(f"{path} is not an 8-bit PGM")
        return np.asarray(im, dtype=np.uint8)


def read_ppm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode != "RGB":
            raise ValueError(f"{path} is not an 8-bit PPM")
        return np.asarray(im, dtype=np.uint8)


def fit_to(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Scale so the image covers ``height x width``, then center-crop."""
    h, w = image.shape
    scale = max(height / h, width / w)
    nh, nw = max(height, round(h * scale)), max(width, round(w * scale))
    resized = np.asarray(Image.fromarray(image).resize((nw, nh), Image.BILINEAR), dtype=np.uint8)
    top, left = (nh - height) // 2, (nw - width) // 2
    return resized[top:top + height, left:left + width].copy()
