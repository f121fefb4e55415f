"""Position-based flocking expert.

Frame convention used everywhere in the package: right-handed, z-up world;
body frame x-forward, y-left, z-up; yaw is positive from x toward y.
An agent's ``attitude`` is the world-to-body rotation matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CoincidentAgents, NoNeighbors

COINCIDENT_EPS = 1e-9


@dataclass(frozen=True)
class FlockingParams:
    k_sep: float = 7.0
    k_coh: float = 1.0
    k_mig: float = 1.0
    r_max: float = 7.0
    v_max: float = 2.0

    def __post_init__(self):
        for name in ("k_sep", "k_coh", "k_mig"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.r_max <= 0 or self.v_max <= 0:
            raise ValueError("r_max and v_max must be > 0")

    @property
    def equilibrium_distance(self) -> float:
        return float(np.sqrt(self.k_sep / self.k_coh))


def as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("vector components must be finite")
    return a


def yaw_matrix(yaw: float) -> np.ndarray:
    """World-to-body rotation for a level attitude with the given yaw."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def quarter_turn_matrix(k: int) -> np.ndarray:
    """Exact integer world-to-body rotation for a yaw of k * 90 degrees."""
    c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][k % 4]
    return np.array([[c, s, 0], [-s, c, 0], [0, 0, 1]], dtype=np.float64)


def yaw_of(attitude: np.ndarray) -> float:
    # row 0 of world->body is the body x axis expressed in world coordinates
    return float(np.arctan2(attitude[0, 1], attitude[0, 0]))


@dataclass(frozen=True)
class AgentState:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position))
        object.__setattr__(self, "velocity", as_vec3(self.velocity))
        att = np.asarray(self.attitude, dtype=np.float64)
        if att.shape != (3, 3):
            raise ValueError("attitude must be a 3x3 matrix")
        if not np.allclose(att @ att.T, np.eye(3), atol=1e-9) or np.linalg.det(att) < 0:
            raise ValueError("attitude must be a proper rotation")
        object.__setattr__(self, "attitude", att)


def neighbors(positions: Sequence, i: int, r_max: float) -> set[int]:
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if not 0 <= i < len(p):
        raise IndexError(f"agent index {i} out of range for {len(p)} agents")
    d = np.linalg.norm(p - p[i], axis=1)
    return {int(j) for j in np.flatnonzero(d < r_max) if j != i}


def _rel(rel_positions) -> np.ndarray:
    r = np.asarray(rel_positions, dtype=np.float64).reshape(-1, 3)
    if len(r) == 0:
        raise NoNeighbors("neighbor set is empty")
    return r


def separation_velocity(rel_positions, k_sep: float) -> np.ndarray:
    r = _rel(rel_positions)
    sq = np.einsum("ij,ij->i", r, r)
    if np.any(sq < COINCIDENT_EPS**2):
        raise CoincidentAgents("zero-length relative position")
    return -(k_sep / len(r)) * (r / sq[:, None]).sum(axis=0)


def cohesion_velocity(rel_positions, k_coh: float) -> np.ndarray:
    r = _rel(rel_positions)
    return (k_coh / len(r)) * r.sum(axis=0)


def migration_velocity(p_i, p_mig, k_mig: float) -> np.ndarray:
    d = np.asarray(p_mig, dtype=np.float64) - np.asarray(p_i, dtype=np.float64)
    n = np.linalg.norm(d)
    if n < COINCIDENT_EPS:
        return np.zeros(3)
    return k_mig * d / n


def clamp_speed(v, v_max: float) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n <= v_max or n == 0.0:
        return v.copy()
    return v * (v_max / n)


def reynolds_velocity(positions, i: int, params: FlockingParams) -> np.ndarray:
    """Separation plus cohesion over the neighbor set; zero with no neighbors."""
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    nb = sorted(neighbors(p, i, params.r_max))
    if not nb:
        return np.zeros(3)
    rel = p[nb] - p[i]
    return separation_velocity(rel, params.k_sep) + cohesion_velocity(rel, params.k_coh)


def expert_command(
    states: Sequence[AgentState],
    i: int,
    params: FlockingParams = FlockingParams(),
    migration_goal: Optional[Sequence[float]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(v_world, v_rey_world)`` for agent ``i``.

    ``v_world`` is the speed-clamped sum of the Reynolds and migration terms;
    ``v_rey_world`` is the unclamped Reynolds part alone.
    """
    positions = np.array([s.position for s in states])
    v_rey = reynolds_velocity(positions, i, params)
    v = v_rey
    if migration_goal is not None:
        v = v + migration_velocity(positions[i], migration_goal, params.k_mig)
    return clamp_speed(v, params.v_max), v_rey


def reynolds_all(positions: np.ndarray, params: FlockingParams) -> np.ndarray:
    """Vectorized Reynolds command for every agent, shape (n, 3)."""
    p = np.asarray(positions, dtype=np.float64)
    r = p[None, :, :] - p[:, None, :]  # r[i, j] = p_j - p_i
    sq = np.einsum("ijk,ijk->ij", r, r)
    mask = np.sqrt(sq) < params.r_max
    np.fill_diagonal(mask, False)
    if np.any(mask & (sq < COINCIDENT_EPS**2)):
        raise CoincidentAgents("zero-length relative position")
    count = mask.sum(axis=1)
    safe_sq = np.where(mask, sq, 1.0)
    sep = -(r / safe_sq[..., None] * mask[..., None]).sum(axis=1)
    coh = (r * mask[..., None]).sum(axis=1)
    denom = np.maximum(count, 1)[:, None]
    out = (params.k_sep * sep + params.k_coh * coh) / denom
    out[count == 0] = 0.0
    return out


def rotate_frame(v, attitude, direction: str = "world_to_body") -> np.ndarray:
    R = np.asarray(attitude, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if direction == "world_to_body":
        return R @ v
    if direction == "body_to_world":
        return R.T @ v
    raise ValueError(f"unknown direction {direction!r}")
