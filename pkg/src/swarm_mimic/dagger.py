"""Multi-agent dataset aggregation: roll out the learner, label with the
expert, aggregate, retrain, keep the best policy on held-out data."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import Divergence
from .flock import FlockingParams
from .nn.network import Network, NetworkConfig, init_network
from .nn.policy import VisionPolicy
from .nn.train import TrainConfig, evaluate, train
from .rng import substream, subseed
from .sim import (
    ExpertPolicy,
    MixedPolicy,
    NoisyPolicy,
    Policy,
    WorldConfig,
    make_scenario,
    run_episode,
)
from .vision import CubemapRenderer

log = logging.getLogger(__name__)

TRAIN, VAL = "train", "val"


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    action: np.ndarray  # expert label, body frame
    command: np.ndarray  # executed command incl. migration, body frame
    agent: int
    tick: int
    episode: int
    iteration: int = 0


@dataclass
class Dataset:
    samples: list = field(default_factory=list)
    splits: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def indices(self, split: str) -> list[int]:
        return [k for k, s in enumerate(self.splits) if s == split]

    def arrays(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.indices(split)
        if not idx:
            return np.empty((0, 128, 768), np.uint8), np.empty((0, 3))
        return (np.stack([self.samples[k].image for k in idx]),
                np.stack([self.samples[k].action for k in idx]))


def aggregate_and_split(dataset: Dataset, new_samples, ratio: float = 0.8,
                        rng: Optional[np.random.Generator] = None) -> Dataset:
    """Append ``new_samples``; exactly ``round(ratio * n)`` of them go to training.

    Earlier samples keep their assignment.
    """
    new_samples = list(new_samples)
    if not new_samples:
        return Dataset(list(dataset.samples), list(dataset.splits))
    if rng is None:
        rng = np.random.default_rng()
    n = len(new_samples)
    n_train = int(round(ratio * n))
    labels = np.array([VAL] * n, dtype=object)
    labels[rng.permutation(n)[:n_train]] = TRAIN
    return Dataset(dataset.samples + new_samples, dataset.splits + list(labels))


@dataclass(frozen=True)
class DaggerConfig:
    n_iterations: int = 5
    episodes_per_iteration: int = 4
    betas: tuple = ()
    scenario: str = "common_goal"
    goal_distance: float = 15.0
    exploration_noise: float = 0.0
    warm_start: bool = True
    split_ratio: float = 0.8
    world: WorldConfig = WorldConfig()
    flock: FlockingParams = FlockingParams()
    train: TrainConfig = TrainConfig()
    network: NetworkConfig = NetworkConfig()
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if any(not 0.0 <= b <= 1.0 for b in self.betas):
            raise ValueError("betas must lie in [0, 1]")

    def beta(self, iteration: int) -> float:
        return float(self.betas[iteration]) if iteration < len(self.betas) else 0.0


def episode_samples(log_, episode: int, iteration: int = 0) -> list[Sample]:
    out = []
    for t, (obs, labels) in enumerate(zip(log_.observations, log_.labels)):
        cmds = log_.commands[t]
        atts = log_.attitudes[t]
        for k, i in enumerate(log_.controlled):
            out.append(Sample(obs[k], labels[k], atts[i] @ cmds[i], i, t, episode, iteration))
    return out


def collect_episode(policy: Policy, config: DaggerConfig, tag: str, episode: int,
                    iteration: int = 0, renderer: Optional[CubemapRenderer] = None):
    """One recorded episode; returns ``(samples, status)``.

    Every random draw comes from substreams named after ``tag`` and
    ``episode``, so episodes can run in any order or process.
    """
    scenario = make_scenario(config.scenario, config.world.n_agents, altitude=config.world.altitude,
                             goal_distance=config.goal_distance)
    rng = substream(config.rng_seed, f"{tag}/episode{episode}")
    acting = policy
    if config.exploration_noise > 0:
        acting = NoisyPolicy(policy, config.exploration_noise,
                             substream(config.rng_seed, f"{tag}/noise{episode}"), dt=config.world.dt)
    log_ = run_episode(acting, scenario, config.world, config.flock, recording=True,
                       rng=rng, renderer=renderer if renderer is not None else CubemapRenderer())
    if log_.error is not None:
        log.warning("episode %d aborted: %s", episode, log_.error)
        return episode_samples(log_, episode, iteration), "error"
    return episode_samples(log_, episode, iteration), log_.status.value


def _episode_job(args):
    return collect_episode(*args)


def collect(policy: Policy, config: DaggerConfig, n_episodes: int, tag: str,
            renderer: Optional[CubemapRenderer] = None, iteration: int = 0,
            first_episode: int = 0, threads: int = 1):
    """Run ``n_episodes`` recorded episodes; returns ``(samples, statuses)``.

    With ``threads > 1`` episodes run in worker processes; results do not
    depend on the worker count.
    """
    episodes = range(first_episode, first_episode + n_episodes)
    if threads > 1 and n_episodes > 1:
        jobs = [(policy, config, tag, ep, iteration) for ep in episodes]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_episode_job, jobs))
    else:
        renderer = renderer if renderer is not None else CubemapRenderer()
        results = [collect_episode(policy, config, tag, ep, iteration, renderer) for ep in episodes]
    samples = [s for batch, _ in results for s in batch]
    return samples, [status for _, status in results]


def run_iteration(policy: Policy, config: DaggerConfig, iteration: int = 0,
                  renderer: Optional[CubemapRenderer] = None, threads: int = 1):
    """Roll out ``beta * expert + (1 - beta) * policy`` and label with the expert."""
    mixed = MixedPolicy(ExpertPolicy(config.flock), policy, config.beta(iteration))
    return collect(mixed, config, config.episodes_per_iteration, f"dagger/iter{iteration}",
                   renderer, iteration, first_episode=iteration * config.episodes_per_iteration,
                   threads=threads)


@dataclass
class IterationReport:
    iteration: int
    beta: float
    new_samples: int
    dataset_size: int
    train_size: int
    val_size: int
    val_loss: float
    final_val_loss: float
    statuses: dict


@dataclass
class DaggerResult:
    policies: list
    best: Network
    best_iteration: int
    reports: list
    dataset: Dataset
    histories: list


def write_report(reports: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "beta", "new_samples", "dataset_size", "train_size", "val_size",
                    "val_loss", "final_val_loss", "statuses"])
        for r in reports:
            st = ";".join(f"{k}:{v}" for k, v in sorted(r.statuses.items()))
            w.writerow([r.iteration, repr(r.beta), r.new_samples, r.dataset_size, r.train_size,
                        r.val_size, repr(r.val_loss), repr(r.final_val_loss), st])


def run_dagger(config: DaggerConfig, initial: Optional[Network] = None,
               dataset: Optional[Dataset] = None, on_iteration=None, threads: int = 1) -> DaggerResult:
    """Iterate collect -> aggregate -> train ``n_iterations`` times.

    ``initial`` is the first learner (randomly initialized when absent);
    ``dataset`` seeds the aggregate, e.g. with a bootstrap collection.
    A training divergence propagates with ``reports`` of the completed
    iterations attached. The returned best policy minimizes loss on the final validation split;
    ties go to the earliest iteration.
    """
    renderer = CubemapRenderer()
    net = initial.copy() if initial is not None else init_network(
        config.network, substream(config.rng_seed, "dagger/init"))
    data = dataset if dataset is not None else Dataset()
    policies, reports, histories = [], [], []
    for i in range(config.n_iterations):
        new, statuses = run_iteration(VisionPolicy(net), config, i, renderer, threads)
        data = aggregate_and_split(data, new, config.split_ratio, substream(config.rng_seed, f"dagger/split{i}"))
        xtr, ttr = data.arrays(TRAIN)
        xva, tva = data.arrays(VAL)
        tcfg = TrainConfig(**{**config.train.__dict__, "rng_seed": subseed(config.rng_seed, f"dagger/train{i}")})
        warm = net if (config.warm_start and (i > 0 or initial is not None)) else None
        try:
            net, hist = train(xtr, ttr, xva, tva, tcfg, config.network, init=warm)
        except Divergence as exc:
            err = Divergence(f"iteration {i}: {exc}", exc.history)
            err.reports = reports
            raise err from exc
        policies.append(net)
        histories.append(hist)
        reports.append(IterationReport(i, config.beta(i), len(new), len(data), len(xtr), len(xva),
                                       min(r.val_loss for r in hist), float("nan"), dict(Counter(statuses))))
        log.info("iteration %d: %d new samples, dataset %d, val %.5f", i, len(new), len(data), reports[-1].val_loss)
        if on_iteration is not None:
            on_iteration(reports[-1], net)
    xva, tva = data.arrays(VAL)
    finals = [evaluate(p, xva, tva) for p in policies]
    for r, f in zip(reports, finals):
        r.final_val_loss = f
    best_i = int(np.argmin(finals))
    return DaggerResult(policies, policies[best_i], best_i, reports, data, histories)
