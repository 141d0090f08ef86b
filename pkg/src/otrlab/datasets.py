"""Trajectory dataset model and persistence.

A dataset is a pair of files sharing one stem: ``<stem>.traj`` holds
length-prefixed binary episode records (raw little-endian float64, so
write/read round-trips are bit-exact) and ``<stem>.manifest`` is a JSON
summary. Ground-truth episodic returns of reward-stripped corpora live in a
``<stem>.returns.json`` sidecar that the training path never reads; the
manifest's ``reward_status`` field quarantines them by schema.

Datasets are immutable after write; all sampling takes an explicit RNG so
concurrent consumers never share hidden state.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tracking
from .errors import DataError
from .tracking import EnvConfig, scripted_expert

log = logging.getLogger(__name__)

MAGIC = b"OTRJ"
SCHEMA_VERSION = 1
REWARD_STATUSES = ("labeled", "stripped", "ground_truth")

DEFAULT_BATCH_SIZE = 256

# behaviour mixture used for the unlabeled corpus: expert corrupted by
# Gaussian action noise plus windows of uniformly random actions, tuned so
# episode quality spreads from near-random to near-expert
NOISE_SIGMAS = (0.1, 0.3)
SEGMENT_COUNT_PROBS = ((0, 0.25), (2, 0.4), (4, 0.35))
SEGMENT_LENGTH_RANGE = (50, 120)


@dataclass
class Trajectory:
    """One episode: T states, T-1 actions and optionally T-1 rewards."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray | None
    episode_id: str
    env_tag: str

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise DataError(f"{self.episode_id}: states/actions must be 2-D")
        if len(self.actions) != len(self.states) - 1:
            raise DataError(
                f"{self.episode_id}: expected {len(self.states) - 1} actions, "
                f"got {len(self.actions)}")
        if self.rewards is not None:
            self.rewards = np.asarray(self.rewards, dtype=np.float64)
            if self.rewards.shape != (len(self.actions),):
                raise DataError(
                    f"{self.episode_id}: rewards must have one entry per "
                    f"transition ({len(self.actions)}), got {self.rewards.shape}")
        for name, arr in (("states", self.states), ("actions", self.actions),
                          ("rewards", self.rewards)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise DataError(f"{self.episode_id}: non-finite value in {name}")

    @property
    def length(self) -> int:
        return len(self.states)


@dataclass
class DatasetManifest:
    env_tag: str
    state_dim: int
    action_dim: int
    episode_count: int
    horizon: int
    reward_status: str
    seeds: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        if self.reward_status not in REWARD_STATUSES:
            raise DataError(f"unknown reward_status {self.reward_status!r}")

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "env_tag": self.env_tag,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "episode_count": self.episode_count,
            "horizon": self.horizon,
            "reward_status": self.reward_status,
            "seeds": self.seeds,
            "extra": self.extra,
        }

    @staticmethod
    def from_dict(d: dict) -> "DatasetManifest":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError(
                f"unsupported manifest schema_version {d.get('schema_version')}")
        return DatasetManifest(
            env_tag=d["env_tag"], state_dim=d["state_dim"],
            action_dim=d["action_dim"], episode_count=d["episode_count"],
            horizon=d["horizon"], reward_status=d["reward_status"],
            seeds=d.get("seeds", {}), extra=d.get("extra", {}))


@dataclass
class TrajectoryDataset:
    manifest: DatasetManifest
    trajectories: list[Trajectory]

    def validate(self) -> None:
        m = self.manifest
        if len(self.trajectories) != m.episode_count:
            raise DataError(
                f"manifest says {m.episode_count} episodes, file holds "
                f"{len(self.trajectories)}")
        for tr in self.trajectories:
            if tr.states.shape[1] != m.state_dim or tr.actions.shape[1] != m.action_dim:
                raise DataError(f"{tr.episode_id}: dimension mismatch with manifest")
            has_rewards = tr.rewards is not None
            if m.reward_status == "stripped" and has_rewards:
                raise DataError(f"{tr.episode_id}: stripped dataset carries rewards")
            if m.reward_status in ("labeled", "ground_truth") and not has_rewards:
                raise DataError(f"{tr.episode_id}: missing rewards")


def dataset_stem(path) -> Path:
    p = Path(path)
    if p.suffix in (".traj", ".manifest"):
        p = p.with_suffix("")
    return p


def save_dataset(dataset: TrajectoryDataset, path) -> Path:
    """Write ``<stem>.traj`` + ``<stem>.manifest``; returns the stem path."""
    dataset.validate()
    stem = dataset_stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    with open(stem.with_suffix(".traj"), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", SCHEMA_VERSION, len(dataset.trajectories)))
        for tr in dataset.trajectories:
            fh.write(_pack_record(tr))
    manifest_text = json.dumps(dataset.manifest.to_dict(), indent=2,
                               sort_keys=True) + "\n"
    stem.with_suffix(".manifest").write_text(manifest_text)
    return stem


def _pack_record(tr: Trajectory) -> bytes:
    eid = tr.episode_id.encode()
    tag = tr.env_tag.encode()
    has_rewards = tr.rewards is not None
    header = struct.pack("<H", len(eid)) + eid + struct.pack("<H", len(tag)) + tag
    header += struct.pack("<IIIB", tr.states.shape[0], tr.states.shape[1],
                          tr.actions.shape[1], int(has_rewards))
    payload = header + tr.states.astype("<f8").tobytes() \
        + tr.actions.astype("<f8").tobytes()
    if has_rewards:
        payload += tr.rewards.astype("<f8").tobytes()
    return struct.pack("<Q", len(payload)) + payload


def _unpack_record(buf: bytes, eid_hint: str) -> Trajectory:
    off = 0

    def take(n):
        nonlocal off
        chunk = buf[off:off + n]
        if len(chunk) != n:
            raise DataError(f"truncated record near {eid_hint}")
        off += n
        return chunk

    (eid_len,) = struct.unpack("<H", take(2))
    episode_id = take(eid_len).decode()
    (tag_len,) = struct.unpack("<H", take(2))
    env_tag = take(tag_len).decode()
    t, sdim, adim, has_rewards = struct.unpack("<IIIB", take(13))
    states = np.frombuffer(take(8 * t * sdim), dtype="<f8").reshape(t, sdim)
    actions = np.frombuffer(take(8 * (t - 1) * adim), dtype="<f8").reshape(t - 1, adim)
    rewards = None
    if has_rewards:
        rewards = np.frombuffer(take(8 * (t - 1)), dtype="<f8").copy()
    return Trajectory(states=states.copy(), actions=actions.copy(),
                      rewards=rewards, episode_id=episode_id, env_tag=env_tag)


def load_dataset(path) -> TrajectoryDataset:
    stem = dataset_stem(path)
    traj_path = stem.with_suffix(".traj")
    manifest_path = stem.with_suffix(".manifest")
    for p in (traj_path, manifest_path):
        if not p.exists():
            raise DataError(f"dataset file not found: {p}")
    manifest = DatasetManifest.from_dict(json.loads(manifest_path.read_text()))
    data = traj_path.read_bytes()
    if data[:4] != MAGIC:
        raise DataError(f"{traj_path}: not a trajectory file")
    version, count = struct.unpack("<IQ", data[4:16])
    if version != SCHEMA_VERSION:
        raise DataError(f"{traj_path}: unsupported version {version}")
    trajectories = []
    off = 16
    for i in range(count):
        (length,) = struct.unpack("<Q", data[off:off + 8])
        off += 8
        trajectories.append(_unpack_record(data[off:off + length], f"episode {i}"))
        off += length
    dataset = TrajectoryDataset(manifest=manifest, trajectories=trajectories)
    dataset.validate()
    return dataset


def strip_rewards(dataset: TrajectoryDataset) -> TrajectoryDataset:
    """Remove reward annotations; every other field is preserved unchanged."""
    if dataset.manifest.reward_status == "stripped":
        log.warning("dataset is already stripped; returning it unchanged")
        return dataset
    trajectories = [replace(tr, rewards=None) for tr in dataset.trajectories]
    manifest = replace(dataset.manifest, reward_status="stripped")
    return TrajectoryDataset(manifest=manifest, trajectories=trajectories)


@dataclass
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray


class TransitionStore:
    """Flat (s, a, s', r, done) view of a labeled dataset for batch sampling."""

    def __init__(self, dataset: TrajectoryDataset):
        if dataset.manifest.reward_status != "labeled":
            raise DataError(
                "trainer requires a labeled dataset "
                f"(reward_status={dataset.manifest.reward_status!r}); "
                "run `otrlab label` first")
        dataset.validate()
        states, actions, next_states, rewards, dones = [], [], [], [], []
        for tr in dataset.trajectories:
            states.append(tr.states[:-1])
            next_states.append(tr.states[1:])
            actions.append(tr.actions)
            rewards.append(tr.rewards)
            done = np.zeros(len(tr.actions), dtype=bool)
            done[-1] = True
            dones.append(done)
        self.states = np.concatenate(states)
        self.actions = np.concatenate(actions)
        self.next_states = np.concatenate(next_states)
        self.rewards = np.concatenate(rewards)
        self.dones = np.concatenate(dones)

    def __len__(self) -> int:
        return len(self.states)

    def sample(self, rng: np.random.Generator, size: int = DEFAULT_BATCH_SIZE) -> TransitionBatch:
        """Uniform sampling with replacement, deterministic under `rng`."""
        if size > len(self):
            raise DataError(
                f"batch size {size} exceeds transition count {len(self)}")
        idx = rng.integers(0, len(self), size=size)
        return TransitionBatch(states=self.states[idx], actions=self.actions[idx],
                               next_states=self.next_states[idx],
                               rewards=self.rewards[idx], dones=self.dones[idx])


def sample_batch(dataset: TrajectoryDataset, rng: np.random.Generator,
                 size: int = DEFAULT_BATCH_SIZE) -> TransitionBatch:
    return TransitionStore(dataset).sample(rng, size)


def _mixture_policy(env: EnvConfig, sigma: float, windows: list[tuple[int, int]],
                    rng: np.random.Generator):
    """Expert plus action noise, with uniformly random actions inside windows."""
    t = 0

    def policy(obs):
        nonlocal t
        if any(a <= t < b for a, b in windows):
            action = rng.uniform(-1.0, 1.0, 3)
        else:
            action = scripted_expert(env, obs).to_array()
            action = action + rng.normal(0.0, sigma, 3)
        t += 1
        return np.clip(action, -1.0, 1.0)

    return policy


def generate_corpus(env: EnvConfig, expert_episodes: int, unlabeled_episodes: int,
                    seed: int, out_dir, expert_name: str = "expert",
                    unlabeled_name: str = "unlabeled") -> tuple[Path, Path]:
    """Roll out the expert corpus and a reward-stripped mixture corpus.

    The expert file keeps its true rewards (reward_status=ground_truth); the
    unlabeled file is stripped, with true episodic returns retained in its
    sidecar for evaluation only. Byte-identical for a fixed seed.
    """
    if expert_episodes < 1 or unlabeled_episodes < 1:
        raise DataError("episode counts must be >= 1")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)

    expert_trajs = []
    for i in range(expert_episodes):
        env_seed = int(rng.integers(1 << 31))
        states, actions, rewards = tracking.rollout(
            env, lambda obs: scripted_expert(env, obs), env_seed)
        expert_trajs.append(Trajectory(states, actions, rewards,
                                       episode_id=f"expert-{i:04d}",
                                       env_tag=tracking.ENV_TAG))
    expert_manifest = DatasetManifest(
        env_tag=tracking.ENV_TAG, state_dim=tracking.STATE_DIM,
        action_dim=tracking.ACTION_DIM, episode_count=expert_episodes,
        horizon=env.horizon, reward_status="ground_truth",
        seeds={"corpus": seed}, extra={"policy": "scripted_expert"})
    expert_stem = save_dataset(
        TrajectoryDataset(expert_manifest, expert_trajs), out_dir / expert_name)

    unlabeled_trajs = []
    true_returns = {}
    profiles = []
    seg_counts = [k for k, _ in SEGMENT_COUNT_PROBS]
    seg_probs = [p for _, p in SEGMENT_COUNT_PROBS]
    for i in range(unlabeled_episodes):
        env_seed = int(rng.integers(1 << 31))
        behavior_rng = np.random.default_rng(int(rng.integers(1 << 31)))
        sigma = float(behavior_rng.choice(NOISE_SIGMAS))
        n_seg = int(behavior_rng.choice(seg_counts, p=seg_probs))
        windows = []
        for _ in range(n_seg):
            length = int(behavior_rng.integers(*SEGMENT_LENGTH_RANGE))
            start = int(behavior_rng.integers(0, max(env.horizon - length, 1)))
            windows.append((start, start + length))
        policy = _mixture_policy(env, sigma, windows, behavior_rng)
        states, actions, rewards = tracking.rollout(env, policy, env_seed)
        episode_id = f"unlabeled-{i:04d}"
        unlabeled_trajs.append(Trajectory(states, actions, rewards=None,
                                          episode_id=episode_id,
                                          env_tag=tracking.ENV_TAG))
        true_returns[episode_id] = float(rewards.sum())
        profiles.append({"sigma": sigma, "random_windows": windows})
    unlabeled_manifest = DatasetManifest(
        env_tag=tracking.ENV_TAG, state_dim=tracking.STATE_DIM,
        action_dim=tracking.ACTION_DIM, episode_count=unlabeled_episodes,
        horizon=env.horizon, reward_status="stripped",
        seeds={"corpus": seed},
        extra={"policy": "expert+noise mixture", "profiles": profiles})
    unlabeled_stem = save_dataset(
        TrajectoryDataset(unlabeled_manifest, unlabeled_trajs),
        out_dir / unlabeled_name)
    sidecar = unlabeled_stem.with_suffix(".returns.json")
    sidecar.write_text(json.dumps(true_returns, indent=2, sort_keys=True) + "\n")
    return expert_stem, unlabeled_stem


def load_sidecar_returns(path) -> dict[str, float]:
    sidecar = dataset_stem(path).with_suffix(".returns.json")
    if not sidecar.exists():
        raise DataError(f"ground-truth sidecar not found: {sidecar}")
    return {k: float(v) for k, v in json.loads(sidecar.read_text()).items()}
