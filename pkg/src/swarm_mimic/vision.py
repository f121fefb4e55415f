"""Software renderer for the omnidirectional cube-map observation.

Each agent carries six body-fixed pinhole cameras. Their 128x128 grayscale
views are concatenated left to right in the order
``left, front, right, back, top, bottom`` into one 128x768 image.

Camera frame: z along the optical axis, x toward increasing image column,
y toward increasing image row. Pixel ``(row, col)`` samples the ray through
its center ``(col + 0.5, row + 0.5)``; the principal point is (64, 64).

Geometry is evaluated with explicit ``x + y + z`` dot products and exact
signed-permutation camera matrices, so a quarter-turn of the observer's yaw
permutes camera-frame coordinates bit-for-bit. That keeps rendering exactly
consistent with :func:`swarm_mimic.nn.augment.yaw_rotate_pair`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .flock import AgentState

FACE = 128
N_FACES = 6
HEIGHT, WIDTH = FACE, FACE * N_FACES
FACE_NAMES = ("left", "front", "right", "back", "top", "bottom")
BACKGROUND = 255

LATERAL_HFOV = math.radians(135.0)
LATERAL_VFOV = math.radians(90.0)
CAP_FOV = math.radians(90.0)


@dataclass(frozen=True)
class Camera:
    name: str
    body_to_camera: np.ndarray
    fu: float
    fv: float
    cx: float = FACE / 2
    cy: float = FACE / 2
    size: int = FACE

    @property
    def half_tan_u(self) -> float:
        return self.cx / self.fu

    @property
    def half_tan_v(self) -> float:
        return self.cy / self.fv


def _lateral(name: str, axis: tuple, right: tuple) -> Camera:
    fu = (FACE / 2) / math.tan(LATERAL_HFOV / 2)
    fv = (FACE / 2) / math.tan(LATERAL_VFOV / 2)
    m = np.array([right, (0, 0, -1), axis], dtype=np.float64)
    return Camera(name, m, fu, fv)


def _cap(name: str, down: tuple, axis: tuple) -> Camera:
    f = (FACE / 2) / math.tan(CAP_FOV / 2)
    right = (0, -1, 0)
    m = np.array([right, down, axis], dtype=np.float64)
    return Camera(name, m, f, f)


def default_cameras() -> tuple[Camera, ...]:
    # body frame: x forward, y left, z up
    return (
        _lateral("left", (0, 1, 0), (1, 0, 0)),
        _lateral("front", (1, 0, 0), (0, -1, 0)),
        _lateral("right", (0, -1, 0), (-1, 0, 0)),
        _lateral("back", (-1, 0, 0), (0, 1, 0)),
        _cap("top", (1, 0, 0), (0, 0, 1)),
        _cap("bottom", (-1, 0, 0), (0, 0, -1)),
    )


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple = field(default_factory=default_cameras)

    def __post_init__(self):
        if len(self.cameras) != N_FACES:
            raise ValueError("a rig has exactly six cameras")
        for cam in self.cameras:
            m = cam.body_to_camera
            if not np.allclose(m @ m.T, np.eye(3)) or np.linalg.det(m) < 0:
                raise ValueError(f"camera {cam.name} is not a proper rotation")

    def covers(self, direction_body) -> bool:
        return any(in_frustum(cam.body_to_camera @ np.asarray(direction_body, float), cam)
                   for cam in self.cameras)


@dataclass(frozen=True)
class DroneSilhouetteModel:
    """Quadrotor drawn as a body sphere plus four rotor disks in a '+' layout.

    Rotor disks are thin oblate spheroids so they stay visible edge-on.
    """

    bounding_radius: float = 0.25
    body_radius: float = 0.12
    rotor_radius: float = 0.08
    rotor_half_thickness: float = 0.02
    albedo: int = 40

    def __post_init__(self):
        if self.bounding_radius <= 0:
            raise ValueError("bounding_radius must be > 0")
        if self.rotor_radius >= self.bounding_radius:
            raise ValueError("rotor_radius must be below bounding_radius")

    @property
    def arm(self) -> float:
        return self.bounding_radius - self.rotor_radius

    def rotor_offsets(self) -> np.ndarray:
        a = self.arm
        return np.array([[a, 0, 0], [0, a, 0], [-a, 0, 0], [0, -a, 0]], dtype=np.float64)


def _dot(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def _apply(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.array([_dot(m[0], v), _dot(m[1], v), _dot(m[2], v)])


def in_frustum(p_cam, cam: Camera, tol: float = 1e-9) -> bool:
    x, y, z = (float(c) for c in p_cam)
    if z <= 0:
        return False
    return abs(x / z) <= cam.half_tan_u + tol and abs(y / z) <= cam.half_tan_v + tol


def project_point(p_cam, cam: Optional[Camera] = None) -> Optional[tuple[float, float]]:
    """Continuous pixel coordinates ``(u, v)`` or ``None`` outside the frustum."""
    if cam is None:
        cam = default_cameras()[1]
    if not in_frustum(p_cam, cam):
        return None
    x, y, z = (float(c) for c in p_cam)
    return cam.cx + cam.fu * x / z, cam.cy + cam.fv * y / z


def pixel_index(uv: tuple[float, float], size: int = FACE) -> tuple[int, int]:
    """``(row, col)`` of the pixel containing continuous coordinates ``uv``."""
    u, v = uv
    return min(max(int(math.floor(v)), 0), size - 1), min(max(int(math.floor(u)), 0), size - 1)


def _pixel_rays(cam: Camera) -> np.ndarray:
    idx = np.arange(cam.size, dtype=np.float64) + 0.5
    xs = (idx - cam.cx) / cam.fu
    ys = (idx - cam.cy) / cam.fv
    rays = np.empty((cam.size, cam.size, 3))
    rays[..., 0] = xs[None, :]
    rays[..., 1] = ys[:, None]
    rays[..., 2] = 1.0
    return rays


def _tangent_range(a: float, z: float, r: float, half_tan: float) -> tuple[float, float]:
    """Range of a/z-slopes covered by a disk of radius r centered at (a, z)."""
    dist = math.hypot(a, z)
    if dist <= r:
        return -math.inf, math.inf
    center = math.atan2(a, z)
    spread = math.asin(r / dist)
    lo, hi = center - spread, center + spread
    if lo <= -math.pi / 2 or hi >= math.pi / 2:
        if hi <= -math.pi / 2 or lo >= math.pi / 2:
            return math.inf, -math.inf
        lo_t = -math.inf if lo <= -math.pi / 2 else math.tan(lo)
        hi_t = math.inf if hi >= math.pi / 2 else math.tan(hi)
        return lo_t, hi_t
    return math.tan(lo), math.tan(hi)


def _spheroid_hits(rays, center, axis, a: float, b: float) -> np.ndarray:
    """Rays from the origin that hit a spheroid (equatorial radius a, polar b)."""
    kappa = 1.0 / (b * b) - 1.0 / (a * a)
    inv_a2 = 1.0 / (a * a)
    dd = _dot(rays, rays)
    dc = _dot(rays, center)
    cc = float(_dot(center, center))
    if axis is None:
        qa, qb, qc = dd * inv_a2, -2.0 * dc * inv_a2, cc * inv_a2 - 1.0
    else:
        dn = _dot(rays, axis)
        cn = float(_dot(center, axis))
        qa = dd * inv_a2 + dn * dn * kappa
        qb = -2.0 * dc * inv_a2 - 2.0 * dn * cn * kappa
        qc = cc * inv_a2 + cn * cn * kappa - 1.0
    disc = qb * qb - 4.0 * qa * qc
    hit = disc >= 0.0
    # far root in front of the camera
    far = (-qb + np.sqrt(np.where(hit, disc, 0.0))) / (2.0 * qa)
    return hit & (far > 0.0)


class CubemapRenderer:
    """Renders agents as flat dark silhouettes on a uniform white background."""

    def __init__(
        self,
        rig: Optional[CameraRig] = None,
        model: Optional[DroneSilhouetteModel] = None,
        cull_distance: float = 30.0,
        background: int = BACKGROUND,
    ):
        self.rig = rig if rig is not None else CameraRig()
        self.model = model if model is not None else DroneSilhouetteModel()
        self.cull_distance = cull_distance
        self.background = background
        self._rays = [_pixel_rays(c) for c in self.rig.cameras]

    def render_view(self, states: Sequence[AgentState], observer: int, camera: int,
                    with_ids: bool = False):
        """One 128x128 face. With ``with_ids`` also return the agent-id map (-1 = none)."""
        if not 0 <= observer < len(states):
            raise IndexError(f"observer {observer} out of range")
        cam = self.rig.cameras[camera]
        rays = self._rays[camera]
        img = np.full((cam.size, cam.size), self.background, dtype=np.uint8)
        ids = np.full((cam.size, cam.size), -1, dtype=np.int32)
        obs = states[observer]
        w2c = cam.body_to_camera @ obs.attitude
        model = self.model
        offsets = model.rotor_offsets()

        order = []
        for j, s in enumerate(states):
            if j == observer:
                continue
            rel = s.position - obs.position
            dist = math.sqrt(float(_dot(rel, rel)))
            if dist > self.cull_distance:
                continue
            order.append((dist, j, rel))
        # painter's algorithm: far to near
        order.sort(key=lambda e: (-e[0], e[1]))

        for _, j, rel in order:
            other = states[j]
            center = _apply(w2c, rel)
            r_bound = model.bounding_radius * 1.01
            if center[2] < -r_bound:
                continue
            rows, cols = self._bbox(center, r_bound, cam)
            if rows is None:
                continue
            sub = rays[rows[0]:rows[1], cols[0]:cols[1]]
            hit = _spheroid_hits(sub, center, None, model.body_radius, model.body_radius)
            up = _apply(w2c, other.attitude[2])
            for off in offsets:
                world_off = other.attitude.T @ off
                rc = _apply(w2c, rel + world_off)
                hit |= _spheroid_hits(sub, rc, up, model.rotor_radius, model.rotor_half_thickness)
            if hit.any():
                img[rows[0]:rows[1], cols[0]:cols[1]][hit] = model.albedo
                ids[rows[0]:rows[1], cols[0]:cols[1]][hit] = j
            else:
                # sub-pixel agents still leave a one-pixel footprint
                uv = project_point(center, cam)
                if uv is not None:
                    r, c = pixel_index(uv, cam.size)
                    img[r, c] = model.albedo
                    ids[r, c] = j
        if with_ids:
            return img, ids
        return img

    @staticmethod
    def _bbox(center, r: float, cam: Camera):
        x, y, z = (float(c) for c in center)
        lo_u, hi_u = _tangent_range(x, z, r, cam.half_tan_u)
        lo_v, hi_v = _tangent_range(y, z, r, cam.half_tan_v)
        if lo_u > hi_u or lo_v > hi_v:
            return None, None

        def span(lo, hi, c, f):
            a = 0 if lo == -math.inf else math.floor(c + f * lo) - 1
            b = cam.size if hi == math.inf else math.floor(c + f * hi) + 2
            a, b = max(a, 0), min(b, cam.size)
            return (a, b) if a < b else None

        cs = span(lo_u, hi_u, cam.cx, cam.fu)
        rs = span(lo_v, hi_v, cam.cy, cam.fv)
        if cs is None or rs is None:
            return None, None
        return rs, cs

    def render(self, states: Sequence[AgentState], observer: int, with_ids: bool = False):
        """Full 128x768 cube map for ``observer``."""
        views = [self.render_view(states, observer, k, with_ids=with_ids) for k in range(N_FACES)]
        if with_ids:
            return (np.concatenate([v[0] for v in views], axis=1),
                    np.concatenate([v[1] for v in views], axis=1))
        return np.concatenate(views, axis=1)


def render_cubemap(states: Sequence[AgentState], observer: int,
                   rig: Optional[CameraRig] = None, renderer: Optional[CubemapRenderer] = None) -> np.ndarray:
    if renderer is None:
        renderer = CubemapRenderer(rig)
    return renderer.render(states, observer)


def face_slice(k: int) -> slice:
    return slice(FACE * k, FACE * (k + 1))


def agent_pixel(states: Sequence[AgentState], observer: int, target: int,
                rig: Optional[CameraRig] = None) -> Optional[tuple[int, int, int]]:
    """``(face, row, col)`` of the target's projected center in the first face that sees it.

    Lateral faces are tried first, preferring the one whose axis is closest.
    """
    rig = rig if rig is not None else CameraRig()
    obs = states[observer]
    rel = states[target].position - obs.position
    best = None
    for k, cam in enumerate(rig.cameras):
        pc = _apply(cam.body_to_camera @ obs.attitude, rel)
        uv = project_point(pc, cam)
        if uv is None:
            continue
        # prefer the face where the point is most central
        off = max(abs(pc[0] / pc[2]) / cam.half_tan_u, abs(pc[1] / pc[2]) / cam.half_tan_v)
        if best is None or off < best[0]:
            r, c = pixel_index(uv, cam.size)
            best = (off, k, r, c)
    return None if best is None else best[1:]
