"""Domain adaptation by compositing white-background renders onto backgrounds."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyPool
from .imageio import fit_to, read_gray
from .vision import HEIGHT, WIDTH

WHITE_THRESHOLD = 250
IMAGE_SUFFIXES = {".pgm", ".pnm", ".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg"}


@dataclass
class BackgroundPool:
    images: list
    source: Optional[str] = None

    def __post_init__(self):
        if not self.images:
            raise EmptyPool("background pool is empty")
        for k, img in enumerate(self.images):
            if img.shape != (HEIGHT, WIDTH) or img.dtype != np.uint8:
                raise DimensionMismatch(f"background {k} has shape {img.shape}, expected {HEIGHT}x{WIDTH} uint8")

    @property
    def count(self) -> int:
        return len(self.images)

    @classmethod
    def from_directory(cls, directory, raw_shape: Optional[tuple] = None) -> "BackgroundPool":
        """Load every grayscale image in ``directory`` (sorted by name).

        ``.raw`` files are read as 8-bit pixels of ``raw_shape``; everything
        is scaled to cover 128x768 and center-cropped.
        """
        d = Path(directory)
        images = []
        for p in sorted(d.iterdir()):
            suffix = p.suffix.lower()
            if suffix == ".raw":
                if raw_shape is None:
                    raise ValueError(f"{p}: raw images need raw_shape")
                img = np.fromfile(p, dtype=np.uint8).reshape(raw_shape)
            elif suffix in IMAGE_SUFFIXES:
                img = read_gray(p)
            else:
                continue
            images.append(fit_to(img, HEIGHT, WIDTH))
        if not images:
            raise EmptyPool(f"no background images found in {d}")
        return cls(images, str(d))


@dataclass(frozen=True)
class AdaptedSample:
    image: np.ndarray
    action: np.ndarray
    episode: int
    tick: int
    agent: int
    background_id: int


def composite(foreground: np.ndarray, background: np.ndarray, threshold: int = WHITE_THRESHOLD) -> np.ndarray:
    """Keep foreground pixels darker than ``threshold``; elsewhere show the background."""
    fg = np.asarray(foreground)
    bg = np.asarray(background)
    if fg.shape != bg.shape:
        raise DimensionMismatch(f"foreground {fg.shape} and background {bg.shape} differ")
    return np.where(fg >= threshold, bg, fg).astype(np.uint8)


def synthetic_backgrounds(count: int, rng: np.random.Generator) -> BackgroundPool:
    """Stand-in backgrounds: smooth gradients, sensor noise and random rectangles."""
    images = []
    rows = np.linspace(0.0, 1.0, HEIGHT)[:, None]
    cols = np.linspace(0.0, 1.0, WIDTH)[None, :]
    for _ in range(count):
        a, b, c = rng.uniform(-60, 60, size=3)
        base = rng.uniform(110, 200) + a * rows + b * cols + c * np.sin(2 * np.pi * cols * rng.integers(1, 6))
        for _ in range(int(rng.integers(3, 12))):
            r0, c0 = int(rng.integers(0, HEIGHT)), int(rng.integers(0, WIDTH))
            h, w = int(rng.integers(5, 60)), int(rng.integers(10, 200))
            base[r0:r0 + h, c0:c0 + w] = rng.uniform(60, 230)
        base = base + rng.normal(0.0, 4.0, size=base.shape)
        images.append(np.clip(np.rint(base), 0, 255).astype(np.uint8))
    return BackgroundPool(images, "synthetic")


def build_adapted_dataset(samples: Sequence, pool: BackgroundPool, rng: np.random.Generator,
                          threshold: int = WHITE_THRESHOLD) -> list[AdaptedSample]:
    """Composite each sample onto a uniformly drawn background; actions are copied verbatim.

    ``samples`` are objects with ``image``, ``action``, ``episode``, ``tick``
    and ``agent`` attributes.
    """
    if pool is None or pool.count == 0:
        raise EmptyPool("background pool is empty")
    choice = rng.integers(pool.count, size=len(samples))
    return [
        AdaptedSample(composite(s.image, pool.images[b], threshold), np.array(s.action, dtype=np.float64),
                      s.episode, s.tick, s.agent, int(b))
        for s, b in zip(samples, choice)
    ]


MANIFEST_COLUMNS = ["sample_id", "image_path", "ax", "ay", "az", "episode", "tick", "agent", "background_id"]


def write_manifest(path, rows) -> None:
    """``rows`` yield ``(sample_id, image_path, action, episode, tick, agent, background_id)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for sid, img_path, action, episode, tick, agent, bg in rows:
            w.writerow([sid, img_path, *(repr(float(a)) for a in action), episode, tick, agent, bg])


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and list(rows[0].keys())[: len(MANIFEST_COLUMNS)] != MANIFEST_COLUMNS:
        raise ValueError(f"{path}: unexpected manifest columns {list(rows[0].keys())}")
    for r in rows:
        r["action"] = np.array([float(r["ax"]), float(r["ay"]), float(r["az"])])
        for k in ("episode", "tick", "agent", "background_id"):
            r[k] = int(r[k])
    return rows
