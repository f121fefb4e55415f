"""Swarm order metrics and Grad-CAM saliency for the vision policy."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NoPairs
from .imageio import write_pgm, write_ppm
from .nn.network import Network, backward_std, feature_maps


@dataclass(frozen=True)
class DistanceSeries:
    t: np.ndarray
    dmin: np.ndarray
    dmax: np.ndarray
    dmean: np.ndarray

    def __len__(self):
        return len(self.t)


def pair_distances(positions: np.ndarray) -> np.ndarray:
    """Distances over all unordered pairs ``i < j`` of one snapshot."""
    p = np.asarray(positions, dtype=np.float64)
    iu, ju = np.triu_indices(len(p), k=1)
    d = p[iu] - p[ju]
    return np.sqrt(np.sum(d * d, axis=1))


def distance_series(log) -> DistanceSeries:
    """Per-tick min, max and mean pairwise distance of an episode log."""
    positions = np.asarray(log.positions, dtype=np.float64)
    if positions.ndim != 3 or positions.shape[1] < 2:
        raise NoPairs("distance metrics need at least two agents")
    d = np.array([pair_distances(p) for p in positions])
    t = np.arange(len(d)) * log.dt
    return DistanceSeries(t, d.min(axis=1), d.max(axis=1), d.mean(axis=1))


def grad_cam(net: Network, image, component: Optional[int] = None) -> np.ndarray:
    """Saliency on the last convolutional feature map (8x48 at full resolution).

    The attributed scalar is the Euclidean norm of the predicted body-frame
    command, or one of its components when ``component`` is given. An
    all-zero map is returned as is.
    """
    out, features, cache = feature_maps(net, image)
    y = out[0] * net.target_std + net.target_mean
    if component is None:
        norm = float(np.linalg.norm(y))
        dy = y / norm if norm > 0 else np.zeros(3)
    else:
        dy = np.zeros(3)
        dy[component] = 1.0
    dout = (dy * net.target_std)[None]
    grads = backward_std(net, dout, cache, stop_at_features=True)[0]
    weights = grads.mean(axis=(0, 1))
    cam = np.maximum(features[0] @ weights, 0.0)
    peak = cam.max()
    return cam / peak if peak > 0 else cam


def bilinear_sample(coarse: np.ndarray, rows, cols) -> np.ndarray:
    """Interpolate ``coarse`` at fractional cell coordinates, cell centers at
    integers, clamped to the border."""
    c = np.asarray(coarse, dtype=np.float64)
    r = np.clip(np.asarray(rows, dtype=np.float64), 0, c.shape[0] - 1)
    q = np.clip(np.asarray(cols, dtype=np.float64), 0, c.shape[1] - 1)
    r0 = np.minimum(np.floor(r).astype(int), c.shape[0] - 2) if c.shape[0] > 1 else np.zeros_like(r, int)
    q0 = np.minimum(np.floor(q).astype(int), c.shape[1] - 2) if c.shape[1] > 1 else np.zeros_like(q, int)
    r1 = np.minimum(r0 + 1, c.shape[0] - 1)
    q1 = np.minimum(q0 + 1, c.shape[1] - 1)
    fr = r - r0
    fq = q - q0
    top = c[r0, q0] * (1 - fq) + c[r0, q1] * fq
    bot = c[r1, q0] * (1 - fq) + c[r1, q1] * fq
    return top * (1 - fr) + bot * fr


def upsample(coarse: np.ndarray, height: int = 128, width: int = 768) -> np.ndarray:
    """Bilinear upsampling with pixel-center alignment."""
    c = np.asarray(coarse, dtype=np.float64)
    rows = (np.arange(height) + 0.5) * c.shape[0] / height - 0.5
    cols = (np.arange(width) + 0.5) * c.shape[1] / width - 0.5
    return bilinear_sample(c, rows[:, None], cols[None, :])


def jet(x) -> np.ndarray:
    """Jet colormap, RGB in [0, 1].

    Each channel is a clipped tent: red peaks at 3/4, green at 1/2 and blue
    at 1/4, all with slope 4, so jet(0) = (0, 0, 0.5) and jet(1) = (0.5, 0, 0).
    """
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)[..., None]
    centers = np.array([0.75, 0.5, 0.25])
    return np.clip(1.5 - np.abs(4.0 * (x - centers)), 0.0, 1.0)


def render_heatmap(image: np.ndarray, saliency: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend the jet-colored, upsampled map over the grayscale image (uint8 RGB)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    img = np.asarray(image, dtype=np.float64)
    heat = jet(upsample(saliency, img.shape[0], img.shape[1])) * 255.0
    out = alpha * heat + (1.0 - alpha) * img[..., None]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def write_series_csv(series: DistanceSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "dmin", "dmax", "dmean"])
        for row in zip(series.t, series.dmin, series.dmax, series.dmean):
            w.writerow([repr(float(v)) for v in row])


def export_artifacts(item, path) -> None:
    """Write a distance series (CSV), an RGB heat map (PPM) or a grayscale image (PGM).

    Episode logs are reduced to their distance series.
    """
    if hasattr(item, "positions") and hasattr(item, "dt"):
        item = distance_series(item)
    if isinstance(item, DistanceSeries):
        write_series_csv(item, path)
        return
    arr = np.asarray(item)
    if arr.ndim == 3 and arr.shape[2] == 3:
        write_ppm(path, arr)
    elif arr.ndim == 2:
        write_pgm(path, arr)
    else:
        raise ValueError(f"cannot export array of shape {arr.shape}")
