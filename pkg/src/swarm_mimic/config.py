"""Run configuration: sectioned ``key = value`` files plus overrides.

Example file::

    # comments start with '#'
    [world]
    n_agents = 3
    [train]
    max_epochs = 12
    [network]
    widths = 8, 16, 32, 64

Values resolve as defaults <- file <- overrides. Overrides use dotted keys
(``world.n_agents=3``). Unknown sections or keys and values of the wrong
type are rejected with the offending line number.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Optional

from .errors import ConfigError
from .flock import FlockingParams
from .nn.network import NetworkConfig
from .nn.train import TrainConfig
from .rng import subseed
from .sim import SCENARIO_KINDS, WorldConfig


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    threads: int = 1


@dataclass(frozen=True)
class WorldSection:
    n_agents: int = 9
    dt: float = 0.1
    tau: float = 0.3
    spawn_side: float = 4.0
    spawn_min_dist: float = 1.5
    collision_thresh: float = 1.0
    dispersion_thresh: float = 7.0
    max_samples: int = 200
    altitude: float = 2.5


@dataclass(frozen=True)
class FlockSection:
    k_sep: float = 7.0
    k_coh: float = 1.0
    k_mig: float = 1.0
    r_max: float = 7.0
    v_max: float = 2.0


@dataclass(frozen=True)
class ScenarioSection:
    kind: str = "common_goal"
    goal_distance: float = 15.0


@dataclass(frozen=True)
class NetworkSection:
    widths: tuple = (8, 16, 32, 64)
    dropout: float = 0.5


@dataclass(frozen=True)
class TrainSection:
    lr0: float = 1e-3
    lr_decay: float = 0.5
    patience: int = 10
    batch: int = 128
    weight_decay: float = 5e-4
    max_epochs: int = 100
    augment_yaw: bool = True
    augment_photometric: bool = True
    chunk: int = 2
    split_ratio: float = 0.8


@dataclass(frozen=True)
class ExpertSection:
    episodes: int = 1


@dataclass(frozen=True)
class CollectSection:
    episodes: int = 4
    noise: float = 2.0


@dataclass(frozen=True)
class AdaptSection:
    backgrounds: str = ""
    synthetic: int = 16
    threshold: int = 250


@dataclass(frozen=True)
class DaggerSection:
    iterations: int = 5
    episodes: int = 4
    betas: tuple = ()
    noise: float = 0.0
    warm_start: bool = True


@dataclass(frozen=True)
class EvalSection:
    episodes: int = 10
    duration: float = 20.0


@dataclass(frozen=True)
class AttributeSection:
    count: int = 16
    component: str = "norm"
    alpha: float = 0.5


SECTIONS = {
    "run": RunSection,
    "world": WorldSection,
    "flock": FlockSection,
    "scenario": ScenarioSection,
    "network": NetworkSection,
    "train": TrainSection,
    "expert": ExpertSection,
    "collect": CollectSection,
    "adapt": AdaptSection,
    "dagger": DaggerSection,
    "eval": EvalSection,
    "attribute": AttributeSection,
}

TWO_AGENT_KINDS = ("circle", "carousel", "push_pull")

# element types of tuple-valued keys
TUPLE_ITEMS = {("network", "widths"): int, ("dagger", "betas"): float}


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    world: WorldSection = field(default_factory=WorldSection)
    flock: FlockSection = field(default_factory=FlockSection)
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    train: TrainSection = field(default_factory=TrainSection)
    expert: ExpertSection = field(default_factory=ExpertSection)
    collect: CollectSection = field(default_factory=CollectSection)
    adapt: AdaptSection = field(default_factory=AdaptSection)
    dagger: DaggerSection = field(default_factory=DaggerSection)
    eval: EvalSection = field(default_factory=EvalSection)
    attribute: AttributeSection = field(default_factory=AttributeSection)

    # -- module configs ---------------------------------------------------

    @property
    def seed(self) -> int:
        return self.run.seed

    def world_config(self, **changes) -> WorldConfig:
        """World settings; two-agent scenarios always get two agents."""
        base = WorldConfig(**dataclasses.asdict(self.world), rng_seed=subseed(self.seed, "world"))
        if self.scenario.kind in TWO_AGENT_KINDS:
            base = replace(base, n_agents=2)
        return replace(base, **changes)

    def flocking(self) -> FlockingParams:
        return FlockingParams(**dataclasses.asdict(self.flock))

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(widths=self.network.widths, dropout=self.network.dropout)

    def train_config(self, name: str = "train", **changes) -> TrainConfig:
        d = dataclasses.asdict(self.train)
        d.pop("split_ratio")
        return replace(TrainConfig(**d, rng_seed=subseed(self.seed, name)), **changes)

    # -- serialization ------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            section = getattr(self, name)
            for f in fields(section):
                lines.append(f"{f.name} = {format_value(getattr(section, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    def with_overrides(self, overrides: Iterable[str]) -> "RunConfig":
        cfg = self
        for text in overrides:
            if "=" not in text:
                raise ConfigError(f"override {text!r}: expected section.key=value")
            dotted, value = (s.strip() for s in text.split("=", 1))
            if "." not in dotted:
                raise ConfigError(f"override {text!r}: key must be section.key")
            section, key = dotted.split(".", 1)
            cfg = cfg._set(section, key, value, f"override {text!r}")
        return cfg

    def _set(self, section: str, key: str, raw: str, where: str) -> "RunConfig":
        if section not in SECTIONS:
            raise ConfigError(f"{where}: unknown section [{section}]")
        current = getattr(self, section)
        names = {f.name: f for f in fields(current)}
        if key not in names:
            raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
        value = parse_value(raw, names[key].default if names[key].default is not dataclasses.MISSING else None,
                            TUPLE_ITEMS.get((section, key)), where, key)
        return replace(self, **{section: replace(current, **{key: value})})


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(format_value(v) for v in value)
    return str(value)


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def parse_value(raw: str, default, item_type, where: str, key: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(item_type(p.strip()) for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        kind = type(default).__name__ if not isinstance(default, tuple) else f"list of {item_type.__name__}"
        raise ConfigError(f"{where}: {key} expects {kind}, got {raw!r}") from None


def parse_text(text: str, source: str = "<config>", base: Optional[RunConfig] = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    section = None
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        where = f"{source}:{lineno}"
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"{where}: malformed section header {stripped!r}")
            section = stripped[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected 'key = value', got {stripped!r}")
        key, value = (s.strip() for s in stripped.split("=", 1))
        sec = section
        if sec is None:
            if "." not in key:
                raise ConfigError(f"{where}: key {key!r} outside any section")
            sec, key = key.split(".", 1)
        if (sec, key) in seen:
            raise ConfigError(f"{where}: duplicate key {key!r} in [{sec}]")
        seen.add((sec, key))
        cfg = cfg._set(sec, key, value, where)
    validate(cfg)
    return cfg


def parse_config(path=None, overrides: Iterable[str] = ()) -> RunConfig:
    """Resolve defaults <- file at ``path`` <- dotted ``overrides``."""
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
        cfg = parse_text(text, str(p), cfg)
    cfg = cfg.with_overrides(overrides)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Cross-field checks, reported as ConfigError."""
    if cfg.scenario.kind not in SCENARIO_KINDS:
        raise ConfigError(f"scenario.kind must be one of {', '.join(SCENARIO_KINDS)}")
    if cfg.run.threads < 1:
        raise ConfigError("run.threads must be >= 1")
    if cfg.attribute.component not in ("norm", "x", "y", "z"):
        raise ConfigError("attribute.component must be norm, x, y or z")
    try:
        cfg.world_config()
        cfg.flocking()
        cfg.network_config()
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not 0.0 < cfg.train.split_ratio < 1.0:
        raise ConfigError("train.split_ratio must lie in (0, 1)")
    if cfg.dagger.iterations < 1:
        raise ConfigError("dagger.iterations must be >= 1")
    if any(not 0.0 <= b <= 1.0 for b in cfg.dagger.betas):
        raise ConfigError("dagger.betas must lie in [0, 1]")
