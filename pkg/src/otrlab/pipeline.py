"""End-to-end experiment orchestration: gen, label, train, eval, report.

A single spec drives the whole run. Stages execute in order, each leaving a
fingerprint next to its outputs; reruns skip stages whose fingerprint still
matches the spec, so iterating on a late stage does not repeat earlier ones.
Seeds are independent: training and evaluation for different seeds can run
in parallel worker processes with disjoint output directories, and results
are always reduced in seed order, keeping aggregate files byte-stable.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import datasets, iql, tracking
from .datasets import TransitionStore, load_dataset, save_dataset
from .errors import ConfigError, DataError, OtrlabError
from .iql import IqlConfig
from .labeling import OtrConfig, label_dataset
from .tracking import EnvConfig, state_vector

log = logging.getLogger(__name__)

STAGES = ("gen", "label", "train", "eval", "report")

# published ActiveTrack comparison scores; quoted for context, not reproduced
PAPER_QUOTED_SCORES = (("OTR", 0.81, 0.08), ("SAC", 0.79, 0.08),
                       ("DDPG", 0.67, 0.08))

AGGREGATE_STATISTICS = ("return_mean", "return_std", "normalized_return_mean",
                        "normalized_return_std", "episode_steps_mean")


@dataclass
class CorpusConfig:
    expert_episodes: int = 10
    unlabeled_episodes: int = 100
    seed: int = 20_24

    def to_dict(self) -> dict:
        return {"expert_episodes": self.expert_episodes,
                "unlabeled_episodes": self.unlabeled_episodes,
                "seed": self.seed}


@dataclass
class ExperimentSpec:
    out_dir: Path
    stages: tuple[str, ...] = STAGES
    seeds: tuple[int, ...] = tuple(range(10))
    eval_interval: int = 10_000
    eval_episodes: int = 10
    workers: int = 1
    profile: str = "paper"
    env: EnvConfig = field(default_factory=EnvConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    otr: OtrConfig = field(default_factory=OtrConfig)
    iql: IqlConfig = field(default_factory=IqlConfig)

    def __post_init__(self) -> None:
        self.out_dir = Path(self.out_dir)
        self.stages = tuple(self.stages)
        self.seeds = tuple(int(s) for s in self.seeds)
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be positive")
        unknown = set(self.stages) - set(STAGES)
        if unknown:
            raise ConfigError(f"unknown stages {sorted(unknown)}; "
                              f"expected a subset of {STAGES}")

    def to_dict(self) -> dict:
        from dataclasses import asdict
        return {
            "out_dir": str(self.out_dir),
            "stages": list(self.stages),
            "seeds": list(self.seeds),
            "eval_interval": self.eval_interval,
            "eval_episodes": self.eval_episodes,
            "workers": self.workers,
            "profile": self.profile,
            "env": asdict(self.env),
            "corpus": self.corpus.to_dict(),
            "otr": self.otr.to_dict(),
            "iql": self.iql.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "ExperimentSpec":
        d = dict(d)
        env = EnvConfig(**d.pop("env", {}))
        corpus = CorpusConfig(**d.pop("corpus", {}))
        otr = OtrConfig(**d.pop("otr", {}))
        iql_d = d.pop("iql", {})
        if "hidden" in iql_d:
            iql_d["hidden"] = tuple(iql_d["hidden"])
        return ExperimentSpec(env=env, corpus=corpus, otr=otr,
                              iql=IqlConfig(**iql_d), **d)

    # derived paths
    @property
    def data_dir(self) -> Path:
        return self.out_dir / "data"

    @property
    def expert_stem(self) -> Path:
        return self.data_dir / "expert"

    @property
    def unlabeled_stem(self) -> Path:
        return self.data_dir / "unlabeled"

    @property
    def labeled_stem(self) -> Path:
        return self.data_dir / "labeled"

    def seed_dir(self, seed: int) -> Path:
        return self.out_dir / f"seed_{seed:03d}"

    @property
    def aggregate_csv(self) -> Path:
        return self.out_dir / "aggregate.csv"


@dataclass
class EvalRecord:
    """Evaluation of one checkpoint: deterministic rollouts, mean stats."""

    seed: int
    step: int
    return_mean: float
    return_std: float
    episode_steps_mean: float
    normalized_return: float  # mean return / horizon, clamped to [0, 1]


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _spec_hash(spec: ExperimentSpec) -> str:
    payload = spec.to_dict()
    # stage selection and parallelism do not affect artifacts
    for key in ("stages", "workers", "out_dir"):
        payload.pop(key, None)
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _fingerprint_path(spec: ExperimentSpec, stage: str) -> Path:
    return spec.out_dir / f"stage_{stage}.json"


def _stage_done(spec: ExperimentSpec, stage: str, outputs: list[Path]) -> bool:
    fp = _fingerprint_path(spec, stage)
    if not fp.exists():
        return False
    try:
        recorded = json.loads(fp.read_text())
    except json.JSONDecodeError:
        return False
    return recorded.get("spec_hash") == _spec_hash(spec) and \
        all(Path(p).exists() for p in recorded.get("outputs", []))


def _mark_stage(spec: ExperimentSpec, stage: str, outputs: list[Path]) -> None:
    fp = _fingerprint_path(spec, stage)
    fp.parent.mkdir(parents=True, exist_ok=True)
    fp.write_text(json.dumps({"spec_hash": _spec_hash(spec),
                              "outputs": [str(p) for p in outputs]},
                             indent=2, sort_keys=True) + "\n")


def stage_gen(spec: ExperimentSpec) -> list[Path]:
    expert, unlabeled = datasets.generate_corpus(
        spec.env, spec.corpus.expert_episodes, spec.corpus.unlabeled_episodes,
        seed=spec.corpus.seed, out_dir=spec.data_dir)
    return [expert.with_suffix(".traj"), unlabeled.with_suffix(".traj")]


def stage_label(spec: ExperimentSpec) -> list[Path]:
    experts = load_dataset(spec.expert_stem)
    unlabeled = load_dataset(spec.unlabeled_stem)
    labeled, report = label_dataset(experts, unlabeled, spec.otr)
    stem = save_dataset(labeled, spec.labeled_stem)
    report_path = stem.with_suffix(".labelreport.json")
    report_path.write_text(report.to_json())
    log.info("%s", report.summary().splitlines()[0])
    return [stem.with_suffix(".traj"), report_path]


def _train_one_seed(spec_dict: dict, seed: int) -> str:
    spec = ExperimentSpec.from_dict(spec_dict)
    labeled = load_dataset(spec.labeled_stem)
    store = TransitionStore(labeled)
    cfg = replace(spec.iql, seed=seed, eval_interval=spec.eval_interval)
    seed_dir = spec.seed_dir(seed)
    result = iql.train(cfg, store, out_dir=seed_dir / "checkpoints")
    losses_path = seed_dir / "losses.csv"
    with open(losses_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "value_loss", "critic_loss", "policy_loss"])
        for row in result.loss_rows:
            writer.writerow([row["step"], _fmt(row["value_loss"]),
                             _fmt(row["critic_loss"]), _fmt(row["policy_loss"])])
    return str(losses_path)


def stage_train(spec: ExperimentSpec) -> list[Path]:
    outputs = _map_seeds(_train_one_seed, spec)
    return [Path(p) for p in outputs]


def evaluate_policy(model: iql.IqlNets, env: EnvConfig, episodes: int,
                    seed: int, step: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic rollouts; returns (episodic returns, episode steps)."""
    returns, steps = [], []
    for i in range(episodes):
        episode_seed = int(np.random.SeedSequence([seed, step, i]
                                                  ).generate_state(1)[0])
        _, _, rewards = tracking.rollout(
            env, lambda obs: iql.act(model, state_vector(obs)), episode_seed)
        returns.append(rewards.sum())
        steps.append(len(rewards))
    return np.array(returns), np.array(steps)


def evaluate_checkpoint(checkpoint, env: EnvConfig, episodes: int,
                        seed: int) -> EvalRecord:
    """Load one checkpoint directory and run its policy."""
    model, snapshot = iql.load_checkpoint(checkpoint)
    if model.state_dim != tracking.STATE_DIM or \
            model.action_dim != tracking.ACTION_DIM:
        raise DataError(
            f"checkpoint dims ({model.state_dim}, {model.action_dim}) do not "
            f"match env ({tracking.STATE_DIM}, {tracking.ACTION_DIM})")
    step = int(snapshot["step"])
    returns, steps = evaluate_policy(model, env, episodes, seed, step)
    mean = float(returns.mean())
    return EvalRecord(seed=seed, step=step, return_mean=mean,
                      return_std=float(returns.std()),
                      episode_steps_mean=float(steps.mean()),
                      normalized_return=float(np.clip(mean / env.horizon,
                                                      0.0, 1.0)))


def _eval_one_seed(spec_dict: dict, seed: int) -> str:
    spec = ExperimentSpec.from_dict(spec_dict)
    seed_dir = spec.seed_dir(seed)
    ckpt_root = seed_dir / "checkpoints"
    if not ckpt_root.exists():
        raise DataError(f"no checkpoints for seed {seed} under {ckpt_root}")
    losses = {}
    losses_path = seed_dir / "losses.csv"
    if losses_path.exists():
        with open(losses_path, newline="") as fh:
            for row in csv.DictReader(fh):
                losses[int(row["step"])] = row
    metrics_path = seed_dir / "metrics.csv"
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "value_loss", "critic_loss", "policy_loss",
                         "return_mean", "return_std", "episode_steps_mean",
                         "normalized_return"])
        for ckpt in sorted(ckpt_root.iterdir()):
            record = evaluate_checkpoint(ckpt, spec.env, spec.eval_episodes,
                                         seed)
            loss_row = losses.get(record.step, {})
            writer.writerow([
                record.step,
                loss_row.get("value_loss", "nan"),
                loss_row.get("critic_loss", "nan"),
                loss_row.get("policy_loss", "nan"),
                _fmt(record.return_mean), _fmt(record.return_std),
                _fmt(record.episode_steps_mean),
                _fmt(record.normalized_return),
            ])
    return str(metrics_path)


def stage_eval(spec: ExperimentSpec) -> list[Path]:
    outputs = [Path(p) for p in _map_seeds(_eval_one_seed, spec)]
    outputs.append(write_aggregate(spec))
    return outputs


def _map_seeds(fn, spec: ExperimentSpec) -> list[str]:
    spec_dict = spec.to_dict()
    if spec.workers > 1 and len(spec.seeds) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            futures = [pool.submit(fn, spec_dict, seed) for seed in spec.seeds]
            return [f.result() for f in futures]  # reduce in seed order
    return [fn(spec_dict, seed) for seed in spec.seeds]


def _read_metrics(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_aggregate(spec: ExperimentSpec) -> Path:
    """Across-seed mean/std per evaluation step, in long (step, statistic) form."""
    per_seed = {}
    for seed in spec.seeds:
        path = spec.seed_dir(seed) / "metrics.csv"
        if not path.exists():
            raise DataError(f"missing per-seed metrics: {path}")
        per_seed[seed] = {int(r["step"]): r for r in _read_metrics(path)}
    steps = sorted(set.intersection(*(set(rows) for rows in per_seed.values())))
    if not steps:
        raise DataError("no common evaluation steps across seeds")
    with open(spec.aggregate_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "statistic", "value"])
        for step in steps:
            returns = np.array([float(per_seed[s][step]["return_mean"])
                                for s in spec.seeds])
            normalized = np.array([float(per_seed[s][step]["normalized_return"])
                                   for s in spec.seeds])
            ep_steps = np.array([float(per_seed[s][step]["episode_steps_mean"])
                                 for s in spec.seeds])
            values = {
                "return_mean": returns.mean(),
                "return_std": returns.std(),
                "normalized_return_mean": normalized.mean(),
                "normalized_return_std": normalized.std(),
                "episode_steps_mean": ep_steps.mean(),
            }
            for stat in AGGREGATE_STATISTICS:
                writer.writerow([step, stat, _fmt(float(values[stat]))])
    return spec.aggregate_csv


def read_aggregate(path) -> dict[int, dict[str, float]]:
    table: dict[int, dict[str, float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            table.setdefault(int(row["step"]), {})[row["statistic"]] = \
                float(row["value"])
    return table


def report(aggregate_paths, out_path=None) -> str:
    """Final-step summary next to the paper-quoted comparison constants."""
    if not aggregate_paths:
        raise DataError("no aggregate files given; nothing to report")
    lines = []
    for path in aggregate_paths:
        table = read_aggregate(path)
        if not table:
            raise DataError(f"empty aggregate file: {path}")
        final = max(table)
        stats = table[final]
        lines.append(
            f"{Path(path).parent.name or Path(path).name}: step {final}: "
            f"normalized return "
            f"{stats['normalized_return_mean']:.3f} "
            f"± {stats['normalized_return_std']:.3f}, "
            f"episode steps {stats['episode_steps_mean']:.1f}")
    lines.append("paper-quoted ActiveTrack scores (not reproduced here):")
    for name, mean, std in PAPER_QUOTED_SCORES:
        lines.append(f"  {name:5s} {mean:.2f} ± {std:.2f}")
    text = "\n".join(lines) + "\n"
    if out_path is not None:
        Path(out_path).write_text(text)
    return text


def stage_report(spec: ExperimentSpec) -> list[Path]:
    out = spec.out_dir / "report.txt"
    text = report([spec.aggregate_csv], out_path=out)
    print(text, end="")
    return [out]


_STAGE_FUNCS = {"gen": stage_gen, "label": stage_label, "train": stage_train,
                "eval": stage_eval, "report": stage_report}


@dataclass
class ReportBundle:
    spec: ExperimentSpec
    stage_outputs: dict[str, list[Path]]


def run_experiment(spec: ExperimentSpec) -> ReportBundle:
    """Execute the spec's stages in pipeline order, skipping finished ones."""
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    outputs: dict[str, list[Path]] = {}
    for stage in STAGES:
        if stage not in spec.stages:
            continue
        if stage != "report" and _stage_done(spec, stage, []):
            log.info("stage %s already complete, skipping", stage)
            continue
        try:
            stage_outputs = _STAGE_FUNCS[stage](spec)
        except OtrlabError as exc:
            raise type(exc)(f"stage {stage!r} failed: {exc}") from exc
        outputs[stage] = stage_outputs
        if stage != "report":
            _mark_stage(spec, stage, stage_outputs)
    return ReportBundle(spec=spec, stage_outputs=outputs)


def render_paths(trajectory_files, output) -> tuple[Path, list[dict]]:
    """Panel-per-episode overlay of camera trace and cube path, saved as SVG.

    Returns the output path and per-episode stats including the mean
    camera-to-cube distance (a quantitative proxy for visual overlap).
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    files = list(trajectory_files)
    if not files:
        raise DataError("no trajectory files given; nothing to render")
    episodes = []
    tags = set()
    for path in files:
        ds = load_dataset(path)
        tags.add(ds.manifest.env_tag)
        episodes.extend(ds.trajectories)
    if len(tags) > 1:
        raise DataError(f"trajectory files mix env tags: {sorted(tags)}")
    if tags != {tracking.ENV_TAG}:
        raise DataError(
            f"cannot render env {sorted(tags)}; expected {tracking.ENV_TAG!r}")

    n = len(episodes)
    cols = min(4, n)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3 * cols, 3 * rows),
                             squeeze=False)
    stats = []
    for idx, tr in enumerate(episodes):
        ax = axes[idx // cols][idx % cols]
        camera = tr.states[:, 0:2]
        cube = tr.states[:, 4:6]
        ax.plot(cube[:, 0], cube[:, 1], "s", color="tab:blue", markersize=2,
                label="cube path")
        ax.plot(camera[:, 0], camera[:, 1], "o", color="tab:red", markersize=2,
                label="camera center")
        ax.set_title(tr.episode_id, fontsize=8)
        ax.set_aspect("equal")
        ax.set_xlim(-1.05, 1.05)
        ax.set_ylim(-1.05, 1.05)
        mean_dist = float(np.linalg.norm(camera - cube, axis=1).mean())
        stats.append({"episode_id": tr.episode_id,
                      "mean_camera_cube_distance": mean_dist})
    for idx in range(n, rows * cols):
        axes[idx // cols][idx % cols].axis("off")
    axes[0][0].legend(fontsize=6, loc="upper right")
    fig.tight_layout()
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(output, format="svg")
    plt.close(fig)
    return output, stats
