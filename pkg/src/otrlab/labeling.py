"""Reward labeling of trajectory corpora by alignment with expert episodes.

Each unlabeled trajectory is aligned to every expert demonstration with an
optimal-transport solve over their state distributions; the per-state reward
is the negated cost mass moved out of that state, so raw rewards are always
nonpositive and a perfect self-alignment scores zero. The expert whose
alignment yields the highest raw episodic return wins, and rewards are then
squashed through ``alpha * exp(beta * r)`` into (0, alpha].

Labeling runs fully offline: it is a deterministic function of the two
corpora and the configuration, and never touches an environment. Distinct
trajectories can be labeled concurrently; the expert list is read-only.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from . import ot
from .datasets import DatasetManifest, Trajectory, TrajectoryDataset
from .errors import ConfigError, DimensionError, LabelingError, NumericalError

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 5.0
DEFAULT_BETA = 1.0


@dataclass
class OtrConfig:
    metric: str = "squared_euclidean"
    epsilon: float = 0.01
    max_iters: int = 1000
    tol: float = 1e-6
    anneal: bool = True
    solver: str = "sinkhorn"        # "exact" is the verification path
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    standardize: bool = True        # per-dimension, fitted on expert states
    max_failure_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.solver not in ("sinkhorn", "exact"):
            raise ConfigError(f"unknown solver {self.solver!r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "metric", "epsilon", "max_iters", "tol", "anneal", "solver",
            "alpha", "beta", "standardize", "max_failure_fraction")}


@dataclass
class Standardizer:
    """Per-dimension affine map fitted on the expert state pool."""

    mean: np.ndarray
    std: np.ndarray

    @staticmethod
    def fit(states: np.ndarray) -> "Standardizer":
        states = np.asarray(states, dtype=np.float64)
        std = states.std(axis=0)
        return Standardizer(mean=states.mean(axis=0),
                            std=np.maximum(std, 1e-8))

    def transform(self, states: np.ndarray) -> np.ndarray:
        return (np.asarray(states, dtype=np.float64) - self.mean) / self.std


@dataclass
class RewardAssignment:
    """Per-state rewards from aligning one trajectory with one expert."""

    per_state_rewards: np.ndarray           # raw, nonpositive, length T
    source_expert: str
    episodic_return: float                  # sum of raw rewards
    converged: bool
    squashed_rewards: np.ndarray | None = None
    squashed_return: float | None = None


def standardizer_from_experts(experts: list[Trajectory]) -> Standardizer:
    return Standardizer.fit(np.concatenate([e.states for e in experts]))


def label_against_expert(unlabeled: Trajectory, expert: Trajectory,
                         config: OtrConfig,
                         standardizer: Standardizer | None = None) -> RewardAssignment:
    """Raw (pre-squash) rewards for `unlabeled` aligned to one expert."""
    if unlabeled.states.shape[1] != expert.states.shape[1]:
        raise DimensionError(
            f"state dimensions differ: {unlabeled.states.shape[1]} vs "
            f"{expert.states.shape[1]}")
    xs, ys = unlabeled.states, expert.states
    if standardizer is not None:
        xs, ys = standardizer.transform(xs), standardizer.transform(ys)
    try:
        cost = ot.build_cost_matrix(xs, ys, metric=config.metric)
        if config.solver == "exact":
            coupling = ot.exact_ot(cost)
        else:
            coupling = ot.sinkhorn(cost, config.epsilon,
                                   max_iters=config.max_iters, tol=config.tol,
                                   anneal=config.anneal)
    except NumericalError as exc:
        raise LabelingError(
            f"transport solve failed for episode {unlabeled.episode_id!r} "
            f"against {expert.episode_id!r}: {exc}") from exc
    rewards = -(cost * coupling.plan).sum(axis=1)
    return RewardAssignment(per_state_rewards=rewards,
                            source_expert=expert.episode_id,
                            episodic_return=float(rewards.sum()),
                            converged=coupling.converged)


def select_best_expert(unlabeled: Trajectory, experts: list[Trajectory],
                       config: OtrConfig,
                       standardizer: Standardizer | None = None) -> RewardAssignment:
    """Align independently with every expert, keep the highest raw return.

    Ties break toward the lowest expert index. Raw returns are compared;
    squashing is monotone, so this matches post-squash comparison.
    """
    if not experts:
        raise LabelingError("no expert demonstrations given")
    best: RewardAssignment | None = None
    failures: list[str] = []
    for expert in experts:
        try:
            assignment = label_against_expert(unlabeled, expert, config,
                                              standardizer)
        except LabelingError as exc:
            failures.append(str(exc))
            continue
        if best is None or assignment.episodic_return > best.episodic_return:
            best = assignment
    if best is None:
        raise LabelingError(
            f"all {len(experts)} expert alignments failed for "
            f"{unlabeled.episode_id!r}: {failures[-1]}")
    return best


def squash_rewards(assignment: RewardAssignment, alpha: float = DEFAULT_ALPHA,
                   beta: float = DEFAULT_BETA) -> RewardAssignment:
    """Exponential squashing s(r) = alpha * exp(beta * r), into (0, alpha]."""
    if alpha <= 0:
        raise ConfigError("alpha must be positive")
    squashed = alpha * np.exp(beta * assignment.per_state_rewards)
    return replace(assignment, squashed_rewards=squashed,
                   squashed_return=float(squashed.sum()))


@dataclass
class LabelingReport:
    """Per-trajectory outcome of a labeling run."""

    rows: list[dict]
    config: dict

    @property
    def failed_ids(self) -> list[str]:
        return [r["episode_id"] for r in self.rows if r.get("error")]

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "episodes": self.rows},
                          indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        ok = [r for r in self.rows if not r.get("error")]
        lines = [f"labeled {len(ok)}/{len(self.rows)} trajectories"]
        for r in self.rows:
            if r.get("error"):
                lines.append(f"  {r['episode_id']}: FAILED ({r['error']})")
            else:
                lines.append(
                    f"  {r['episode_id']}: expert={r['source_expert']} "
                    f"raw_return={r['raw_return']:.4f} "
                    f"squashed_return={r['squashed_return']:.4f} "
                    f"converged={r['converged']}")
        return "\n".join(lines)


def label_dataset(experts: TrajectoryDataset, unlabeled: TrajectoryDataset,
                  config: OtrConfig) -> tuple[TrajectoryDataset, LabelingReport]:
    """Attach squashed transport rewards to every unlabeled trajectory.

    The reward of transition (s_t, a_t, s_{t+1}) is the squashed reward of
    s_t; the final state's reward has no transition to carry it and is
    dropped. Failed trajectories are skipped with a warning; the run aborts
    once more than `max_failure_fraction` of them fail.
    """
    expert_trajs = experts.trajectories
    if not expert_trajs or not unlabeled.trajectories:
        raise LabelingError("need at least one expert and one unlabeled trajectory")
    standardizer = standardizer_from_experts(expert_trajs) if config.standardize \
        else None

    labeled: list[Trajectory] = []
    rows: list[dict] = []
    failures = 0
    for traj in unlabeled.trajectories:
        try:
            assignment = squash_rewards(
                select_best_expert(traj, expert_trajs, config, standardizer),
                alpha=config.alpha, beta=config.beta)
        except (LabelingError, DimensionError) as exc:
            failures += 1
            log.warning("skipping %s: %s", traj.episode_id, exc)
            rows.append({"episode_id": traj.episode_id, "error": str(exc)})
            if failures > config.max_failure_fraction * len(unlabeled.trajectories):
                raise LabelingError(
                    f"{failures} of {len(unlabeled.trajectories)} trajectories "
                    f"failed, exceeding the {config.max_failure_fraction:.0%} "
                    "limit") from exc
            continue
        rewards = assignment.squashed_rewards[:len(traj.actions)]
        labeled.append(replace(traj, rewards=rewards))
        rows.append({
            "episode_id": traj.episode_id,
            "source_expert": assignment.source_expert,
            "raw_return": assignment.episodic_return,
            "squashed_return": assignment.squashed_return,
            "converged": assignment.converged,
        })

    manifest = replace(
        unlabeled.manifest, reward_status="labeled", episode_count=len(labeled),
        extra={**unlabeled.manifest.extra, "labeling": config.to_dict()})
    report = LabelingReport(rows=rows, config=config.to_dict())
    return TrajectoryDataset(manifest=manifest, trajectories=labeled), report
