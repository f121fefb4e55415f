"""Deterministic multi-agent world: spawning, dynamics, termination, scenarios,
and episode rollout under an arbitrary policy."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import SpawnInfeasible
from .flock import (
    AgentState,
    FlockingParams,
    clamp_speed,
    migration_velocity,
    reynolds_all,
    yaw_matrix,
)

SPAWN_ATTEMPTS = 10_000
YAW_SPEED_MIN = 0.1
LEADER_GAIN = 1.0


class Status(str, enum.Enum):
    RUNNING = "running"
    COLLISION = "collision"
    DISPERSION = "dispersion"
    COMPLETE = "complete"


@dataclass(frozen=True)
class WorldConfig:
    n_agents: int = 9
    dt: float = 0.1
    tau: float = 0.3
    spawn_side: float = 4.0
    spawn_min_dist: float = 1.5
    collision_thresh: float = 1.0
    dispersion_thresh: float = 7.0
    max_samples: int = 200
    altitude: float = 2.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if self.dt <= 0 or self.tau <= 0:
            raise ValueError("dt and tau must be > 0")
        if not self.spawn_min_dist < self.spawn_side * math.sqrt(3):
            raise ValueError("spawn_min_dist must be below the cube diagonal")
        if not self.collision_thresh < self.dispersion_thresh:
            raise ValueError("collision_thresh must be below dispersion_thresh")


SCENARIO_KINDS = ("free", "common_goal", "opposing_goals", "circle", "carousel", "push_pull")


@dataclass(frozen=True)
class ScenarioConfig:
    """What the swarm is asked to do.

    ``goals`` maps agent index to a migration point (agents absent from the
    mapping get no migration term). Leader scenarios script agent 0 along a
    trajectory; every other agent runs the policy.
    """

    kind: str = "free"
    goals: dict = field(default_factory=dict)
    radius: float = 2.5
    angular_rate: float = math.radians(10.0)
    altitude: float = 2.5
    amplitude: float = 0.0
    waypoint_offset: float = 3.0
    leader_speed: float = 0.5
    dwell: float = 20.0
    axis_masks: dict = field(default_factory=dict)
    spawn_positions: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")

    @property
    def has_leader(self) -> bool:
        return self.kind in ("circle", "carousel", "push_pull")

    def mask(self, i: int) -> np.ndarray:
        return np.asarray(self.axis_masks.get(i, (1.0, 1.0, 1.0)), dtype=np.float64)

    def goal(self, i: int):
        g = self.goals.get(i)
        return None if g is None else np.asarray(g, dtype=np.float64)


def make_scenario(
    kind: str,
    n_agents: int,
    altitude: float = 2.5,
    goal_distance: float = 15.0,
    **overrides,
) -> ScenarioConfig:
    """Build one of the standard scenarios for ``n_agents`` agents."""
    goals: dict = {}
    masks: dict = {}
    spawn = None
    if kind == "common_goal":
        goals = {i: (goal_distance, 0.0, altitude) for i in range(n_agents)}
    elif kind == "opposing_goals":
        if n_agents < 2:
            raise ValueError("opposing_goals needs at least two agents")
        first = (n_agents + 1) // 2
        goals = {
            i: (goal_distance if i < first else -goal_distance, 0.0, altitude)
            for i in range(n_agents)
        }
    elif kind in ("circle", "carousel"):
        radius = overrides.get("radius", 2.5)
        spawn = ((radius, 0.0, altitude), (0.0, 0.0, altitude))
        if kind == "carousel":
            overrides.setdefault("amplitude", 1.0)
    elif kind == "push_pull":
        w = overrides.get("waypoint_offset", 3.0)
        spawn = ((0.0, w, altitude), (0.0, 0.0, altitude))
        masks = {i: (0.0, 1.0, 0.0) for i in range(1, n_agents)}
    elif kind != "free":
        raise ValueError(f"unknown scenario kind {kind!r}")
    if spawn is not None and n_agents != 2:
        raise ValueError(f"{kind} is a two-agent scenario")
    return ScenarioConfig(
        kind=kind,
        goals=goals,
        altitude=altitude,
        axis_masks=masks,
        spawn_positions=spawn,
        **overrides,
    )


def spawn_swarm(config: WorldConfig, rng: np.random.Generator) -> list[AgentState]:
    """Rejection-sample agent positions inside the spawn cube."""
    half = config.spawn_side / 2.0
    center = np.array([0.0, 0.0, config.altitude])
    for _ in range(SPAWN_ATTEMPTS):
        pos = center + rng.uniform(-half, half, size=(config.n_agents, 3))
        if config.n_agents == 1 or pairwise_distances(pos)[np.triu_indices(config.n_agents, 1)].min() >= config.spawn_min_dist:
            return [AgentState(p) for p in pos]
    raise SpawnInfeasible(
        f"could not place {config.n_agents} agents {config.spawn_min_dist} m apart "
        f"in a {config.spawn_side} m cube after {SPAWN_ATTEMPTS} attempts"
    )


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    p = np.asarray(positions, dtype=np.float64)
    diff = p[:, None, :] - p[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def step_dynamics(state: AgentState, v_cmd, dt: float, tau: float) -> AgentState:
    """First-order velocity tracking followed by Euler position update.

    Yaw turns to face the horizontal velocity when it exceeds 0.1 m/s.
    """
    v_cmd = np.asarray(v_cmd, dtype=np.float64)
    v = state.velocity + (dt / tau) * (v_cmd - state.velocity)
    p = state.position + v * dt
    attitude = state.attitude
    if math.hypot(v[0], v[1]) > YAW_SPEED_MIN:
        attitude = yaw_matrix(math.atan2(v[1], v[0]))
    return AgentState(p, v, attitude)


def check_termination(states: Sequence[AgentState], t: int, config: WorldConfig) -> Status:
    if len(states) > 1:
        d = pairwise_distances(np.array([s.position for s in states]))
        iu = np.triu_indices(len(states), 1)
        pairs = d[iu]
        if pairs.min() < config.collision_thresh:
            return Status.COLLISION
        if pairs.max() > config.dispersion_thresh:
            return Status.DISPERSION
    if t >= config.max_samples:
        return Status.COMPLETE
    return Status.RUNNING


def leader_position(scenario: ScenarioConfig, t: float) -> np.ndarray:
    h = scenario.altitude
    if scenario.kind in ("circle", "carousel"):
        a = scenario.angular_rate * t
        z = h + scenario.amplitude * math.sin(a) if scenario.kind == "carousel" else h
        return np.array([scenario.radius * math.cos(a), scenario.radius * math.sin(a), z])
    if scenario.kind == "push_pull":
        # dwell at +w, travel to -w, dwell, travel back; repeat
        w = scenario.waypoint_offset
        if scenario.leader_speed <= 0:
            return np.array([0.0, w, h])
        travel = 2 * w / scenario.leader_speed
        period = 2 * (scenario.dwell + travel)
        s = t % period
        legs = [(scenario.dwell, w, w), (travel, w, -w), (scenario.dwell, -w, -w), (travel, -w, w)]
        for duration, y0, y1 in legs:
            if s <= duration:
                return np.array([0.0, y0 + (y1 - y0) * s / duration, h])
            s -= duration
        return np.array([0.0, w, h])
    raise ValueError(f"scenario {scenario.kind!r} has no leader")


def leader_command(scenario: ScenarioConfig, state: AgentState, t: float, dt: float, v_max: float) -> np.ndarray:
    target = leader_position(scenario, t + dt)
    feedforward = (target - leader_position(scenario, t)) / dt
    return clamp_speed(feedforward + LEADER_GAIN * (target - state.position), v_max)


def apply_axis_mask(v, mask) -> np.ndarray:
    return np.asarray(v, dtype=np.float64) * np.asarray(mask, dtype=np.float64)


# -- policies ---------------------------------------------------------------

class Policy:
    """Maps a frozen world snapshot to world-frame Reynolds commands.

    ``act`` receives all states, the controlled agent indices and, when
    ``uses_vision`` is true, one cube-map observation per controlled agent.
    Migration, masking and speed clamping are applied by the world.
    """

    uses_vision = False

    def act(self, states, agents, observations=None) -> np.ndarray:
        raise NotImplementedError


class ExpertPolicy(Policy):
    def __init__(self, params: FlockingParams = FlockingParams()):
        self.params = params

    def act(self, states, agents, observations=None):
        rey = reynolds_all(np.array([s.position for s in states]), self.params)
        return rey[list(agents)]


class FunctionPolicy(Policy):
    """Wraps ``fn(states, i, observation) -> Vec3`` as a policy."""

    def __init__(self, fn: Callable, uses_vision: bool = False):
        self.fn = fn
        self.uses_vision = uses_vision

    def act(self, states, agents, observations=None):
        obs = observations if observations is not None else [None] * len(agents)
        return np.array([self.fn(states, i, o) for i, o in zip(agents, obs)], dtype=np.float64).reshape(-1, 3)


class MixedPolicy(Policy):
    """``beta * expert + (1 - beta) * learner``."""

    def __init__(self, expert: Policy, learner: Policy, beta: float):
        if not 0.0 <= beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        self.expert, self.learner, self.beta = expert, learner, beta

    @property
    def uses_vision(self):
        return self.beta < 1.0 and self.learner.uses_vision

    def act(self, states, agents, observations=None):
        if self.beta == 1.0:
            return self.expert.act(states, agents)
        out = self.learner.act(states, agents, observations)
        if self.beta == 0.0:
            return out
        return self.beta * self.expert.act(states, agents) + (1.0 - self.beta) * out


def zero_policy() -> Policy:
    return FunctionPolicy(lambda states, i, obs: np.zeros(3))


# -- rollout ------------------------------------------------------------------

@dataclass
class EpisodeLog:
    dt: float
    positions: list = field(default_factory=list)
    velocities: list = field(default_factory=list)
    attitudes: list = field(default_factory=list)
    commands: list = field(default_factory=list)
    expert_commands: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    observations: list = field(default_factory=list)
    controlled: tuple = ()
    status: Status = Status.RUNNING
    error: Optional[BaseException] = None

    @property
    def n_steps(self) -> int:
        return len(self.commands)

    def states_at(self, t: int) -> list[AgentState]:
        return [
            AgentState(p, v, a)
            for p, v, a in zip(self.positions[t], self.velocities[t], self.attitudes[t])
        ]

    def to_csv(self, path) -> None:
        cols = ["t", "agent_id", "px", "py", "pz", "vx", "vy", "vz",
                "cmd_x", "cmd_y", "cmd_z", "expert_x", "expert_y", "expert_z", "status"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            last = len(self.positions) - 1
            for t in range(len(self.positions)):
                status = self.status.value if t == last else Status.RUNNING.value
                for i in range(len(self.positions[t])):
                    row = [repr(round(t * self.dt, 9)), i]
                    row += [repr(float(x)) for x in self.positions[t][i]]
                    row += [repr(float(x)) for x in self.velocities[t][i]]
                    if t < len(self.commands):
                        row += [repr(float(x)) for x in self.commands[t][i]]
                        row += [repr(float(x)) for x in self.expert_commands[t][i]]
                    else:
                        row += [""] * 6
                    row.append(status)
                    w.writerow(row)


def initial_states(scenario: ScenarioConfig, world: WorldConfig, rng) -> list[AgentState]:
    if scenario.spawn_positions is not None:
        return [AgentState(p) for p in scenario.spawn_positions]
    return spawn_swarm(world, rng)


def label_for(rey_world: np.ndarray, attitude: np.ndarray, v_max: float) -> np.ndarray:
    """Body-frame training target: the speed-clamped Reynolds command."""
    return attitude @ clamp_speed(rey_world, v_max)


def run_episode(
    policy: Policy,
    scenario: ScenarioConfig,
    world: WorldConfig,
    params: FlockingParams = FlockingParams(),
    recording: bool = False,
    rng: Optional[np.random.Generator] = None,
    renderer=None,
    states: Optional[list[AgentState]] = None,
    max_steps: Optional[int] = None,
) -> EpisodeLog:
    """Roll out ``policy`` for every non-leader agent until termination.

    With ``recording`` the log keeps the controlled agents' observations and
    body-frame expert labels per tick. Policy errors end the episode early;
    the partial log is returned with ``error`` set.
    """
    if rng is None:
        rng = np.random.default_rng(world.rng_seed)
    if states is None:
        states = initial_states(scenario, world, rng)
    n = len(states)
    controlled = tuple(range(1, n)) if scenario.has_leader else tuple(range(n))
    need_images = recording or policy.uses_vision
    if need_images and renderer is None:
        from .vision import CubemapRenderer

        renderer = CubemapRenderer()
    expert = ExpertPolicy(params)
    config = world if max_steps is None else _with_max(world, max_steps)
    log = EpisodeLog(dt=world.dt, controlled=controlled)

    t = 0
    while True:
        log.positions.append(np.array([s.position for s in states]))
        log.velocities.append(np.array([s.velocity for s in states]))
        log.attitudes.append(np.array([s.attitude for s in states]))
        status = check_termination(states, t, config)
        if status is not Status.RUNNING:
            log.status = status
            return log
        time_s = t * world.dt
        obs = [renderer.render(states, i) for i in controlled] if need_images else None
        rey = reynolds_all(log.positions[-1], params)

        try:
            learned = policy.act(states, controlled, obs if policy.uses_vision else None)
        except Exception as exc:  # noqa: BLE001 - surfaced through the log
            log.error = exc
            log.status = Status.RUNNING
            return log
        cmds = np.zeros((n, 3))
        expert_cmds = np.zeros((n, 3))
        for k, i in enumerate(controlled):
            goal = scenario.goal(i)
            mig = np.zeros(3) if goal is None else migration_velocity(states[i].position, goal, params.k_mig)
            mask = scenario.mask(i)
            cmds[i] = clamp_speed(apply_axis_mask(learned[k] + mig, mask), params.v_max)
            expert_cmds[i] = clamp_speed(apply_axis_mask(rey[i] + mig, mask), params.v_max)
        if scenario.has_leader:
            cmds[0] = expert_cmds[0] = leader_command(scenario, states[0], time_s, world.dt, params.v_max)
        log.commands.append(cmds)
        log.expert_commands.append(expert_cmds)
        if recording:
            log.observations.append(obs)
            log.labels.append(np.array([label_for(rey[i], states[i].attitude, params.v_max) for i in controlled]))
        states = [step_dynamics(s, c, world.dt, world.tau) for s, c in zip(states, cmds)]
        t += 1


def _with_max(world: WorldConfig, max_steps: int) -> WorldConfig:
    from dataclasses import replace

    return replace(world, max_samples=max_steps)


class NoisyPolicy(Policy):
    """Adds Ornstein-Uhlenbeck exploration noise (per agent) to a base policy."""

    def __init__(self, base: Policy, sigma: float, rng: np.random.Generator,
                 theta: float = 0.5, dt: float = 0.1):
        self.base, self.sigma, self.rng, self.theta, self.dt = base, sigma, rng, theta, dt
        self._noise = None

    @property
    def uses_vision(self):
        return self.base.uses_vision

    def act(self, states, agents, observations=None):
        out = self.base.act(states, agents, observations)
        if self.sigma <= 0:
            return out
        if self._noise is None or self._noise.shape != out.shape:
            self._noise = np.zeros_like(out)
        kick = self.sigma * math.sqrt(2.0 * self.theta * self.dt)
        self._noise += -self.theta * self.dt * self._noise + kick * self.rng.standard_normal(out.shape)
        return out + self._noise


def read_log_csv(path, controlled: Optional[tuple] = None) -> EpisodeLog:
    """Inverse of :meth:`EpisodeLog.to_csv`.

    Attitudes are not stored; they are rebuilt from the velocities with the
    same yaw-follow rule as the dynamics, starting from identity.
    """
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty episode log")
    n = 1 + max(int(r["agent_id"]) for r in rows)
    if len(rows) % n:
        raise ValueError(f"{path}: row count {len(rows)} is not a multiple of {n} agents")
    ticks = len(rows) // n
    times = sorted({float(r["t"]) for r in rows})
    dt = times[1] - times[0] if len(times) > 1 else 0.1
    log = EpisodeLog(dt=round(dt, 9), controlled=controlled if controlled is not None else tuple(range(n)))
    att = np.array([np.eye(3)] * n)

    def vec(r, keys):
        return [float(r[k]) for k in keys]

    for t in range(ticks):
        chunk = rows[t * n:(t + 1) * n]
        pos = np.array([vec(r, ("px", "py", "pz")) for r in chunk])
        vel = np.array([vec(r, ("vx", "vy", "vz")) for r in chunk])
        if t > 0:
            att = att.copy()
            for i in range(n):
                if math.hypot(vel[i, 0], vel[i, 1]) > YAW_SPEED_MIN:
                    att[i] = yaw_matrix(math.atan2(vel[i, 1], vel[i, 0]))
        log.positions.append(pos)
        log.velocities.append(vel)
        log.attitudes.append(att)
        if chunk[0]["cmd_x"] != "":
            log.commands.append(np.array([vec(r, ("cmd_x", "cmd_y", "cmd_z")) for r in chunk]))
            log.expert_commands.append(np.array([vec(r, ("expert_x", "expert_y", "expert_z")) for r in chunk]))
    log.status = Status(rows[-1]["status"])
    return log
