"""Command-line entry point.

Subcommands cover the single pipeline stages (gen, strip, label, rollout,
train, eval, paths, report) plus `run`, which chains them from one spec.
Exit codes: 2 for configuration problems, 3 for data problems, 4 for
numerical failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import datasets, iql, pipeline, tracking
from .errors import ConfigError, DataError, OtrlabError, exit_code_for
from .labeling import OtrConfig, label_dataset

log = logging.getLogger("otrlab")


def _spec_from_args(args) -> pipeline.ExperimentSpec:
    if args.config:
        spec = config_mod.load_spec(args.config)
        if args.out is not None:
            spec.out_dir = Path(args.out)
    else:
        if args.out is None:
            raise ConfigError("either --config or --out is required")
        spec = config_mod.default_spec(args.profile, args.out)
    if args.seeds is not None:
        spec = replace(spec, seeds=tuple(int(s) for s in args.seeds.split(",")))
    if args.stages is not None:
        spec = replace(spec, stages=tuple(args.stages.split(",")))
    if args.workers is not None:
        spec = replace(spec, workers=args.workers)
    return spec


def _add_spec_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON experiment spec")
    parser.add_argument("--profile", default="desk",
                        choices=config_mod.PROFILES,
                        help="built-in defaults when no --config is given")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seeds", help="comma-separated seed list override")
    parser.add_argument("--stages", help="comma-separated stage subset")
    parser.add_argument("--workers", type=int,
                        help="parallel worker processes for per-seed stages")


def cmd_run(args) -> None:
    spec = _spec_from_args(args)
    config_mod.save_spec(spec, spec.out_dir / "spec.json")
    pipeline.run_experiment(spec)


def cmd_gen(args) -> None:
    env = tracking.EnvConfig(horizon=args.horizon)
    expert, unlabeled = datasets.generate_corpus(
        env, args.experts, args.unlabeled, seed=args.seed, out_dir=args.out)
    print(f"wrote {expert}.traj and {unlabeled}.traj")


def cmd_strip(args) -> None:
    ds = datasets.load_dataset(args.dataset)
    stripped = datasets.strip_rewards(ds)
    stem = datasets.save_dataset(stripped, args.out or args.dataset)
    print(f"wrote {stem}.traj (reward_status={stripped.manifest.reward_status})")


def cmd_inspect(args) -> None:
    ds = datasets.load_dataset(args.dataset)
    print(json.dumps(ds.manifest.to_dict(), indent=2, sort_keys=True))
    returns = None
    if ds.manifest.reward_status in ("ground_truth", "labeled"):
        returns = np.array([tr.rewards.sum() for tr in ds.trajectories])
    else:
        try:
            sidecar = datasets.load_sidecar_returns(args.dataset)
            returns = np.array([sidecar[tr.episode_id]
                                for tr in ds.trajectories])
        except DataError:
            pass
    if returns is not None:
        hist, edges = np.histogram(returns, bins=10)
        print("episodic return histogram:")
        for count, lo, hi in zip(hist, edges[:-1], edges[1:]):
            print(f"  [{lo:8.2f}, {hi:8.2f}): {'#' * count} {count}")


def cmd_label(args) -> None:
    experts = datasets.load_dataset(args.experts)
    unlabeled = datasets.load_dataset(args.unlabeled)
    if args.max_experts is not None:
        experts.trajectories = experts.trajectories[:args.max_experts]
        experts.manifest.episode_count = len(experts.trajectories)
    cfg = OtrConfig(metric=args.metric, epsilon=args.epsilon,
                    max_iters=args.max_iters, alpha=args.alpha, beta=args.beta)
    labeled, report = label_dataset(experts, unlabeled, cfg)
    labeled.manifest.seeds["label"] = args.seed
    stem = datasets.save_dataset(labeled, args.out)
    stem.with_suffix(".labelreport.json").write_text(report.to_json())
    print(report.summary())
    print(f"wrote {stem}.traj and {stem}.labelreport.json")


def cmd_rollout(args) -> None:
    env = tracking.EnvConfig(horizon=args.horizon)
    if args.policy == "expert":
        policy = lambda obs: tracking.scripted_expert(env, obs)  # noqa: E731
        status = "ground_truth"
    elif args.policy == "random":
        rng = np.random.default_rng(args.seed)
        policy = lambda obs: rng.uniform(-1.0, 1.0, 3)  # noqa: E731
        status = "ground_truth"
    else:
        model, _ = iql.load_checkpoint(args.policy)
        policy = lambda obs: iql.act(model, tracking.state_vector(obs))  # noqa: E731
        status = "ground_truth"
    trajs = []
    for i in range(args.episodes):
        states, actions, rewards = tracking.rollout(env, policy, args.seed + i)
        trajs.append(datasets.Trajectory(states, actions, rewards,
                                         episode_id=f"rollout-{i:04d}",
                                         env_tag=tracking.ENV_TAG))
    manifest = datasets.DatasetManifest(
        env_tag=tracking.ENV_TAG, state_dim=tracking.STATE_DIM,
        action_dim=tracking.ACTION_DIM, episode_count=len(trajs),
        horizon=env.horizon, reward_status=status,
        seeds={"rollout": args.seed}, extra={"policy": args.policy})
    stem = datasets.save_dataset(datasets.TrajectoryDataset(manifest, trajs),
                                 args.out)
    mean_return = float(np.mean([t.rewards.sum() for t in trajs]))
    print(f"wrote {stem}.traj ({args.episodes} episodes, "
          f"mean return {mean_return:.2f})")
    if args.svg:
        svg, _ = pipeline.render_paths([stem], args.svg)
        print(f"wrote {svg}")


def cmd_train(args) -> None:
    spec = _spec_from_args(args)
    pipeline.run_experiment(replace(spec, stages=("train",)))


def cmd_eval(args) -> None:
    if args.checkpoint:
        env = tracking.EnvConfig(horizon=args.horizon)
        record = pipeline.evaluate_checkpoint(args.checkpoint, env,
                                              args.episodes, args.seed)
        print(json.dumps(record.__dict__, indent=2, sort_keys=True))
        return
    spec = _spec_from_args(args)
    pipeline.run_experiment(replace(spec, stages=("eval",)))


def cmd_paths(args) -> None:
    svg, stats = pipeline.render_paths(args.trajectories, args.out)
    for row in stats:
        print(f"{row['episode_id']}: mean camera-cube distance "
              f"{row['mean_camera_cube_distance']:.4f}")
    print(f"wrote {svg}")


def cmd_report(args) -> None:
    if args.aggregates:
        print(pipeline.report(args.aggregates), end="")
        return
    spec = _spec_from_args(args)
    pipeline.run_experiment(replace(spec, stages=("report",)))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otrlab",
        description="Transport-based reward labeling and offline RL on a "
                    "planar tracking task")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full pipeline from a spec")
    _add_spec_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen", help="generate expert + unlabeled corpora")
    p.add_argument("--out", required=True)
    p.add_argument("--experts", type=int, default=10)
    p.add_argument("--unlabeled", type=int, default=100)
    p.add_argument("--horizon", type=int, default=500)
    p.add_argument("--seed", type=int, default=2024)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("strip", help="remove reward annotations from a dataset")
    p.add_argument("dataset")
    p.add_argument("--out", help="output stem (default: overwrite in place)")
    p.set_defaults(func=cmd_strip)

    p = sub.add_parser("inspect", help="print a dataset manifest + histogram")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("label", help="assign transport rewards to a corpus")
    p.add_argument("--experts", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metric", default="squared_euclidean")
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=5.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-experts", type=int,
                   help="use only the first N expert episodes")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("rollout", help="roll out a policy into a dataset")
    p.add_argument("--policy", required=True,
                   help="'expert', 'random', or a checkpoint directory")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--horizon", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", help="also render the paths to this SVG file")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("train", help="train IQL on the labeled dataset")
    _add_spec_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints")
    _add_spec_args(p)
    p.add_argument("--checkpoint", help="evaluate one checkpoint directory")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--horizon", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("paths", help="render camera/cube path overlays as SVG")
    p.add_argument("trajectories", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_paths)

    p = sub.add_parser("report", help="print the final summary table")
    _add_spec_args(p)
    p.add_argument("--aggregates", nargs="*",
                   help="aggregate CSV files (default: from the spec)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except OtrlabError as exc:
        log.error("%s", exc)
        return exit_code_for(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
