"""``swarm-mimic`` command line: experiment pipelines over one master seed."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .adapt import BackgroundPool, build_adapted_dataset, synthetic_backgrounds
from .analysis import distance_series, export_artifacts, grad_cam, render_heatmap
from .config import RunConfig, parse_config
from .dagger import TRAIN, VAL, DaggerConfig, Dataset, Sample, aggregate_and_split, collect, run_dagger, write_report
from .datasets import SampleSet, load_samples, save_samples
from .errors import SwarmMimicError
from .imageio import write_pgm
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.policy import VisionPolicy
from .nn.train import train, write_history
from .rng import substream
from .sim import ExpertPolicy, make_scenario, read_log_csv, run_episode
from .vision import CubemapRenderer

log = logging.getLogger("swarm_mimic")

OUT_ENV = "SWARM_MIMIC_OUT"
CONFIG_SNAPSHOT = "config.ini"
INVOCATION = "invocation.txt"
COMPONENTS = {"norm": None, "x": 0, "y": 1, "z": 2}


# -- shared plumbing ----------------------------------------------------------

def output_dir(args) -> Path:
    if args.out:
        d = Path(args.out)
    else:
        d = Path(os.environ.get(OUT_ENV, "runs")) / f"{args.command}-seed{args.resolved.seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def snapshot(out: Path, cfg: RunConfig, args, inputs: dict) -> None:
    """Record the resolved config and the input paths next to the artifacts."""
    cfg.write(out / CONFIG_SNAPSHOT)
    lines = [f"command = {args.command}"] + [f"{k} = {v}" for k, v in sorted(inputs.items())]
    (out / INVOCATION).write_text("\n".join(lines) + "\n", encoding="utf-8")


def scenario_for(cfg: RunConfig, world):
    return make_scenario(cfg.scenario.kind, world.n_agents, altitude=world.altitude,
                         goal_distance=cfg.scenario.goal_distance)


def dagger_config(cfg: RunConfig, noise: float, **changes) -> DaggerConfig:
    return DaggerConfig(
        n_iterations=cfg.dagger.iterations,
        episodes_per_iteration=cfg.dagger.episodes,
        betas=cfg.dagger.betas,
        scenario=cfg.scenario.kind,
        goal_distance=cfg.scenario.goal_distance,
        exploration_noise=noise,
        warm_start=cfg.dagger.warm_start,
        split_ratio=cfg.train.split_ratio,
        world=cfg.world_config(),
        flock=cfg.flocking(),
        train=cfg.train_config("dagger/train"),
        network=cfg.network_config(),
        rng_seed=cfg.seed,
        **changes,
    )


def _rollout(job):
    policy, cfg, world, tag, episode = job
    rng = substream(cfg.seed, f"{tag}/episode{episode}")
    return run_episode(policy, scenario_for(cfg, world), world, cfg.flocking(), rng=rng)


def rollouts(policy, cfg: RunConfig, world, tag: str, n: int) -> list:
    jobs = [(policy, cfg, world, tag, e) for e in range(n)]
    if cfg.run.threads > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=cfg.run.threads) as pool:
            return list(pool.map(_rollout, jobs))
    return [_rollout(j) for j in jobs]


def write_episodes(out: Path, logs: list) -> None:
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "status", "ticks", "dmin", "dmax"])
        for e, lg in enumerate(logs):
            lg.to_csv(out / f"episode_{e:03d}.csv")
            status = "error" if lg.error is not None else lg.status.value
            if len(lg.positions[0]) > 1:
                series = distance_series(lg)
                export_artifacts(series, out / f"distances_{e:03d}.csv")
                w.writerow([e, status, lg.n_steps, repr(float(series.dmin.min())), repr(float(series.dmax.max()))])
            else:
                w.writerow([e, status, lg.n_steps, "", ""])


def to_samples(data: SampleSet) -> list[Sample]:
    return [Sample(data.images[k], data.actions[k], data.actions[k], int(data.agent[k]),
                   int(data.tick[k]), int(data.episode[k])) for k in range(len(data))]


def load_many(paths) -> SampleSet:
    sets = [load_samples(p) for p in paths]
    return SampleSet(*(np.concatenate([getattr(s, f) for s in sets]) for f in
                       ("images", "actions", "episode", "tick", "agent", "background_id")))


def fit(cfg: RunConfig, data: SampleSet, name: str, init=None):
    split = aggregate_and_split(Dataset(), to_samples(data), cfg.train.split_ratio, substream(cfg.seed, f"{name}/split"))
    xtr, ttr = split.arrays(TRAIN)
    xva, tva = split.arrays(VAL)
    log.info("training on %d samples, validating on %d", len(xtr), len(xva))
    net, history = train(xtr, ttr, xva, tva, cfg.train_config(name), cfg.network_config(), init=init)
    return net, history, split


# -- subcommands --------------------------------------------------------------

def cmd_expert_run(args, cfg: RunConfig, out: Path) -> None:
    snapshot(out, cfg, args, {})
    logs = rollouts(ExpertPolicy(cfg.flocking()), cfg, cfg.world_config(), "expert", cfg.expert.episodes)
    write_episodes(out, logs)


def cmd_collect(args, cfg: RunConfig, out: Path) -> None:
    snapshot(out, cfg, args, {})
    dc = dagger_config(cfg, cfg.collect.noise)
    samples, statuses = collect(ExpertPolicy(dc.flock), dc, cfg.collect.episodes, "collect", threads=cfg.run.threads)
    save_samples(out, SampleSet.from_samples(samples))
    log.info("collected %d samples (%s)", len(samples), dict(Counter(statuses)))


def cmd_adapt(args, cfg: RunConfig, out: Path) -> None:
    snapshot(out, cfg, args, {"data": args.data})
    data = load_samples(args.data)
    if cfg.adapt.backgrounds:
        pool = BackgroundPool.from_directory(cfg.adapt.backgrounds)
    else:
        pool = synthetic_backgrounds(cfg.adapt.synthetic, substream(cfg.seed, "adapt/backgrounds"))
        (out / "backgrounds").mkdir(exist_ok=True)
        for k, img in enumerate(pool.images):
            write_pgm(out / "backgrounds" / f"{k:03d}.pgm", img)
    adapted = build_adapted_dataset(data.samples(), pool, substream(cfg.seed, "adapt/assign"), cfg.adapt.threshold)
    save_samples(out, SampleSet.from_samples(adapted))


def cmd_train(args, cfg: RunConfig, out: Path) -> None:
    snapshot(out, cfg, args, {"data": ",".join(args.data), "init": args.init or ""})
    init = load_checkpoint(args.init) if args.init else None
    net, history, _ = fit(cfg, load_many(args.data), "train", init)
    save_checkpoint(net, out / "model.vswm")
    write_history(history, out / "history.csv")


def cmd_dagger(args, cfg: RunConfig, out: Path) -> None:
    snapshot(out, cfg, args, {"bootstrap": ",".join(args.bootstrap or []), "init": args.init or ""})
    initial = load_checkpoint(args.init) if args.init else None
    dataset = None
    if args.bootstrap:
        boot = load_many(args.bootstrap)
        if initial is None:
            initial, history, dataset = fit(cfg, boot, "dagger/bootstrap")
            save_checkpoint(initial, out / "bootstrap.vswm")
            write_history(history, out / "history_bootstrap.csv")
        else:
            dataset = aggregate_and_split(Dataset(), to_samples(boot), cfg.train.split_ratio,
                                          substream(cfg.seed, "dagger/bootstrap/split"))

    def on_iteration(report, net):
        save_checkpoint(net, out / f"iter_{report.iteration:02d}.vswm")

    result = run_dagger(dagger_config(cfg, cfg.dagger.noise), initial, dataset, on_iteration, cfg.run.threads)
    for i, history in enumerate(result.histories):
        write_history(history, out / f"history_{i:02d}.csv")
    write_report(result.reports, out / "report.csv")
    save_checkpoint(result.best, out / "best.vswm")
    log.info("best policy from iteration %d", result.best_iteration)


def cmd_eval(args, cfg: RunConfig, out: Path) -> None:
    snapshot(out, cfg, args, {"checkpoint": args.checkpoint})
    net = load_checkpoint(args.checkpoint)
    world = cfg.world_config()
    world = replace(world, max_samples=int(round(cfg.eval.duration / world.dt)))
    logs = rollouts(VisionPolicy(net), cfg, world, "eval", cfg.eval.episodes)
    write_episodes(out, logs)


def cmd_attribute(args, cfg: RunConfig, out: Path) -> None:
    snapshot(out, cfg, args, {"checkpoint": args.checkpoint, "data": args.data})
    net = load_checkpoint(args.checkpoint)
    data = load_samples(args.data)
    count = min(cfg.attribute.count, len(data))
    picks = np.linspace(0, len(data) - 1, count).round().astype(int) if count else []
    with open(out / "saliency.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "peak_row", "peak_col", "heatmap"])
        for k in picks:
            cam = grad_cam(net, data.images[k], COMPONENTS[cfg.attribute.component])
            r, c = np.unravel_index(int(np.argmax(cam)), cam.shape)
            name = f"heatmap_{k:06d}.ppm"
            export_artifacts(render_heatmap(data.images[k], cam, cfg.attribute.alpha), out / name)
            w.writerow([int(k), int(r), int(c), name])


def cmd_replay(args, cfg: RunConfig, out: Path) -> None:
    snapshot(out, cfg, args, {"log": args.log, "agent": args.agent, "every": args.every})
    lg = read_log_csv(args.log)
    n = len(lg.positions[0])
    if not 0 <= args.agent < n:
        raise ValueError(f"agent {args.agent} not in episode with {n} agents")
    renderer = CubemapRenderer()
    for t in range(0, len(lg.positions), args.every):
        write_pgm(out / f"frame_{t:04d}.pgm", renderer.render(lg.states_at(t), args.agent))


COMMANDS = {
    "expert-run": (cmd_expert_run, "expert flocking rollouts with distance series"),
    "collect": (cmd_collect, "expert-labeled rendered dataset from expert rollouts"),
    "adapt": (cmd_adapt, "composite a dataset onto background images"),
    "train": (cmd_train, "behavior cloning on one or more datasets"),
    "dagger": (cmd_dagger, "iterative on-policy data aggregation and retraining"),
    "eval": (cmd_eval, "closed-loop rollouts of a trained vision policy"),
    "attribute": (cmd_attribute, "Grad-CAM heat maps for dataset samples"),
    "replay": (cmd_replay, "re-render cube maps from an episode log"),
}

# per-subcommand flags mirroring config keys: (flag, dotted key, type)
SHORTCUTS = {
    "expert-run": [("--scenario", "scenario.kind", str), ("--agents", "world.n_agents", int),
                   ("--episodes", "expert.episodes", int)],
    "collect": [("--scenario", "scenario.kind", str), ("--agents", "world.n_agents", int),
                ("--episodes", "collect.episodes", int), ("--noise", "collect.noise", float)],
    "adapt": [("--backgrounds", "adapt.backgrounds", str)],
    "train": [("--epochs", "train.max_epochs", int)],
    "dagger": [("--scenario", "scenario.kind", str), ("--agents", "world.n_agents", int),
               ("--iterations", "dagger.iterations", int), ("--episodes", "dagger.episodes", int),
               ("--epochs", "train.max_epochs", int), ("--noise", "dagger.noise", float)],
    "eval": [("--scenario", "scenario.kind", str), ("--agents", "world.n_agents", int),
             ("--episodes", "eval.episodes", int), ("--duration", "eval.duration", float)],
    "attribute": [("--count", "attribute.count", int), ("--component", "attribute.component", str)],
    "replay": [],
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="master seed (run.seed)")
    common.add_argument("--out", help=f"artifact directory (default ${OUT_ENV}/<command>-seed<seed>)")
    common.add_argument("--threads", type=int, help="worker processes for episodes (run.threads)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="swarm-mimic", description="Vision-based swarm imitation experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        for flag, key, typ in SHORTCUTS[name]:
            p.add_argument(flag, type=typ, dest="_" + key, metavar=key.split(".")[1].upper(), help=f"sets {key}")
        if name == "adapt":
            p.add_argument("--data", required=True, help="sample directory to composite")
        if name == "train":
            p.add_argument("--data", required=True, nargs="+", help="sample directories")
            p.add_argument("--init", help="checkpoint to continue from")
        if name == "dagger":
            p.add_argument("--bootstrap", nargs="+", help="sample directories for pre-training")
            p.add_argument("--init", help="initial policy checkpoint")
        if name in ("eval", "attribute"):
            p.add_argument("--checkpoint", required=True)
        if name == "attribute":
            p.add_argument("--data", required=True, help="sample directory")
        if name == "replay":
            p.add_argument("--log", required=True, help="episode CSV")
            p.add_argument("--agent", type=int, default=0, help="observer agent")
            p.add_argument("--every", type=int, default=1, help="render every n-th tick")
    return parser


def resolve(args) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"run.threads={args.threads}")
    for key, value in vars(args).items():
        if key.startswith("_") and value is not None:
            overrides.append(f"{key[1:]}={value}")
    return parse_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.resolved = resolve(args)
        out = output_dir(args)
        COMMANDS[args.command][0](args, args.resolved, out)
    except (SwarmMimicError, OSError, ValueError) as exc:
        print(f"swarm-mimic {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
