"""On-disk sample sets: one PGM per sample under ``images/`` plus a CSV manifest.

The manifest is the one used by compositing; ``image_path`` is relative to
the set's directory and ``background_id`` is -1 for plain renders.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapt import read_manifest, write_manifest
from .errors import DimensionMismatch
from .imageio import read_pgm, write_pgm
from .vision import HEIGHT, WIDTH

IMAGES = "images"
MANIFEST = "manifest.csv"


@dataclass
class SampleSet:
    images: np.ndarray
    actions: np.ndarray
    episode: np.ndarray
    tick: np.ndarray
    agent: np.ndarray
    background_id: np.ndarray

    def __len__(self):
        return len(self.images)

    def __post_init__(self):
        n = len(self.images)
        if self.images.shape[1:] != (HEIGHT, WIDTH):
            raise DimensionMismatch(f"images have shape {self.images.shape[1:]}, expected {HEIGHT}x{WIDTH}")
        for name in ("actions", "episode", "tick", "agent", "background_id"):
            if len(getattr(self, name)) != n:
                raise DimensionMismatch(f"{name} has {len(getattr(self, name))} rows, expected {n}")

    @classmethod
    def from_samples(cls, samples) -> "SampleSet":
        """Build from objects with ``image``/``action``/``episode``/``tick``/``agent``."""
        if not samples:
            return cls(np.empty((0, HEIGHT, WIDTH), np.uint8), np.empty((0, 3)), *(np.empty(0, int),) * 4)
        return cls(
            np.stack([s.image for s in samples]).astype(np.uint8),
            np.stack([s.action for s in samples]).astype(np.float64),
            np.array([s.episode for s in samples]),
            np.array([s.tick for s in samples]),
            np.array([s.agent for s in samples]),
            np.array([getattr(s, "background_id", -1) for s in samples]),
        )

    def rows(self):
        return [
            (k, image_name(k), self.actions[k], int(self.episode[k]), int(self.tick[k]),
             int(self.agent[k]), int(self.background_id[k]))
            for k in range(len(self))
        ]

    def samples(self) -> list:
        return [_Row(self.images[k], self.actions[k], int(self.episode[k]), int(self.tick[k]),
                     int(self.agent[k])) for k in range(len(self))]


@dataclass(frozen=True)
class _Row:
    image: np.ndarray
    action: np.ndarray
    episode: int
    tick: int
    agent: int


def image_name(k: int) -> str:
    return f"{IMAGES}/{k:06d}.pgm"


def save_samples(directory, data: SampleSet) -> Path:
    d = Path(directory)
    (d / IMAGES).mkdir(parents=True, exist_ok=True)
    for k in range(len(data)):
        write_pgm(d / image_name(k), data.images[k])
    write_manifest(d / MANIFEST, data.rows())
    return d


def load_samples(directory) -> SampleSet:
    d = Path(directory)
    if not (d / MANIFEST).exists():
        raise FileNotFoundError(f"{d} is not a sample directory (no {MANIFEST})")
    rows = read_manifest(d / MANIFEST)
    images = np.empty((len(rows), HEIGHT, WIDTH), np.uint8)
    for k, r in enumerate(rows):
        images[k] = read_pgm(d / r["image_path"])
    return SampleSet(
        images,
        np.array([r["action"] for r in rows]).reshape(-1, 3),
        np.array([r["episode"] for r in rows], dtype=int),
        np.array([r["tick"] for r in rows], dtype=int),
        np.array([r["agent"] for r in rows], dtype=int),
        np.array([r["background_id"] for r in rows], dtype=int),
    )
