import json

import numpy as np
import pytest

from otrlab.datasets import (
    DatasetManifest,
    Trajectory,
    TrajectoryDataset,
    TransitionStore,
    dataset_stem,
    generate_corpus,
    load_dataset,
    load_sidecar_returns,
    sample_batch,
    save_dataset,
    strip_rewards,
)
from otrlab.errors import DataError
from otrlab.tracking import ACTION_DIM, ENV_TAG, STATE_DIM, EnvConfig

CFG = EnvConfig(horizon=40)


def toy_trajectory(eid="ep-0", t=5, with_rewards=True, seed=0):
    rng = np.random.default_rng(seed)
    return Trajectory(states=rng.standard_normal((t, 3)),
                      actions=rng.standard_normal((t - 1, 2)),
                      rewards=rng.standard_normal(t - 1) if with_rewards else None,
                      episode_id=eid, env_tag="toy")


def toy_dataset(n=3, status="labeled", seed=0):
    trajs = [toy_trajectory(f"ep-{i}", t=5, with_rewards=status != "stripped",
                            seed=seed + i) for i in range(n)]
    manifest = DatasetManifest(env_tag="toy", state_dim=3, action_dim=2,
                               episode_count=n, horizon=4, reward_status=status)
    return TrajectoryDataset(manifest, trajs)


class TestTrajectory:
    def test_action_count_enforced(self):
        with pytest.raises(DataError):
            Trajectory(states=np.zeros((4, 2)), actions=np.zeros((4, 1)),
                       rewards=None, episode_id="x", env_tag="toy")

    def test_reward_length_enforced(self):
        with pytest.raises(DataError):
            Trajectory(states=np.zeros((4, 2)), actions=np.zeros((3, 1)),
                       rewards=np.zeros(4), episode_id="x", env_tag="toy")

    def test_nonfinite_rejected(self):
        states = np.zeros((3, 2))
        states[1, 0] = np.inf
        with pytest.raises(DataError):
            Trajectory(states=states, actions=np.zeros((2, 1)), rewards=None,
                       episode_id="x", env_tag="toy")


class TestRoundTrip:
    def test_write_read_bit_exact(self, tmp_path):
        ds = toy_dataset()
        stem = save_dataset(ds, tmp_path / "toy")
        back = load_dataset(stem)
        assert back.manifest.to_dict() == ds.manifest.to_dict()
        for a, b in zip(ds.trajectories, back.trajectories):
            assert a.episode_id == b.episode_id
            assert a.env_tag == b.env_tag
            assert np.array_equal(a.states, b.states)
            assert np.array_equal(a.actions, b.actions)
            assert np.array_equal(a.rewards, b.rewards)

    def test_stem_handling(self, tmp_path):
        ds = toy_dataset()
        save_dataset(ds, tmp_path / "toy")
        assert dataset_stem(tmp_path / "toy.traj") == tmp_path / "toy"
        assert load_dataset(tmp_path / "toy.traj").manifest.episode_count == 3

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_dataset(tmp_path / "nope")

    def test_manifest_mismatch_detected(self, tmp_path):
        ds = toy_dataset()
        stem = save_dataset(ds, tmp_path / "toy")
        manifest = json.loads(stem.with_suffix(".manifest").read_text())
        manifest["episode_count"] = 7
        stem.with_suffix(".manifest").write_text(json.dumps(manifest))
        with pytest.raises(DataError):
            load_dataset(stem)


class TestStrip:
    def test_strip_removes_rewards_only(self):
        ds = toy_dataset(status="ground_truth")
        stripped = strip_rewards(ds)
        assert stripped.manifest.reward_status == "stripped"
        for a, b in zip(ds.trajectories, stripped.trajectories):
            assert b.rewards is None
            assert np.array_equal(a.states, b.states)
            assert np.array_equal(a.actions, b.actions)

    def test_idempotent_with_warning(self, caplog):
        ds = strip_rewards(toy_dataset(status="ground_truth"))
        with caplog.at_level("WARNING"):
            again = strip_rewards(ds)
        assert "already stripped" in caplog.text
        assert again is ds

    def test_stripped_file_has_no_reward_bytes(self, tmp_path):
        ds = strip_rewards(toy_dataset(status="ground_truth"))
        stem = save_dataset(ds, tmp_path / "s")
        back = load_dataset(stem)
        assert all(tr.rewards is None for tr in back.trajectories)
        assert back.manifest.reward_status == "stripped"


class TestTransitions:
    def test_next_states_follow_states(self):
        store = TransitionStore(toy_dataset())
        ds = toy_dataset()
        offset = 0
        for tr in ds.trajectories:
            n = len(tr.actions)
            assert np.array_equal(store.states[offset:offset + n], tr.states[:-1])
            assert np.array_equal(store.next_states[offset:offset + n], tr.states[1:])
            offset += n

    def test_dones_mark_episode_ends(self):
        store = TransitionStore(toy_dataset(n=4))
        per_episode = 4
        expected = np.zeros(16, dtype=bool)
        expected[per_episode - 1::per_episode] = True
        assert np.array_equal(store.dones, expected)

    def test_unlabeled_dataset_rejected(self):
        ds = toy_dataset(status="stripped")
        with pytest.raises(DataError, match="label"):
            TransitionStore(ds)

    def test_single_transition_dataset(self):
        tr = toy_trajectory("only", t=2)
        manifest = DatasetManifest(env_tag="toy", state_dim=3, action_dim=2,
                                   episode_count=1, horizon=1,
                                   reward_status="labeled")
        ds = TrajectoryDataset(manifest, [tr])
        batch = sample_batch(ds, np.random.default_rng(0), size=1)
        assert np.array_equal(batch.states[0], tr.states[0])
        assert np.array_equal(batch.actions[0], tr.actions[0])

    def test_fixed_rng_identical_batches(self):
        ds = toy_dataset()
        b1 = sample_batch(ds, np.random.default_rng(3), size=8)
        b2 = sample_batch(ds, np.random.default_rng(3), size=8)
        assert np.array_equal(b1.states, b2.states)
        assert np.array_equal(b1.rewards, b2.rewards)

    def test_batch_larger_than_dataset_rejected(self):
        with pytest.raises(DataError, match="batch size"):
            sample_batch(toy_dataset(), np.random.default_rng(0), size=10_000)

    def test_sampling_uniform_within_3_sigma(self):
        store = TransitionStore(toy_dataset(n=5))  # 20 transitions
        n_draws = 100_000
        rng = np.random.default_rng(2024)
        counts = np.zeros(len(store))
        for _ in range(100):
            idx = rng.integers(0, len(store), size=n_draws // 100)
            counts += np.bincount(idx, minlength=len(store))
        prob = 1.0 / len(store)
        expected = n_draws * prob
        sigma = np.sqrt(n_draws * prob * (1 - prob))
        assert np.all(np.abs(counts - expected) < 3 * sigma)


class TestCorpus:
    def test_counts_match_manifests(self, tmp_path):
        expert, unlabeled = generate_corpus(CFG, 3, 5, seed=1, out_dir=tmp_path)
        e = load_dataset(expert)
        u = load_dataset(unlabeled)
        assert e.manifest.episode_count == 3
        assert u.manifest.episode_count == 5
        assert e.manifest.env_tag == u.manifest.env_tag == ENV_TAG
        assert e.manifest.state_dim == STATE_DIM
        assert e.manifest.action_dim == ACTION_DIM

    def test_unlabeled_is_stripped_with_sidecar(self, tmp_path):
        _, unlabeled = generate_corpus(CFG, 2, 4, seed=2, out_dir=tmp_path)
        u = load_dataset(unlabeled)
        assert u.manifest.reward_status == "stripped"
        assert all(tr.rewards is None for tr in u.trajectories)
        returns = load_sidecar_returns(unlabeled)
        assert set(returns) == {tr.episode_id for tr in u.trajectories}

    def test_expert_keeps_ground_truth(self, tmp_path):
        expert, _ = generate_corpus(CFG, 2, 2, seed=3, out_dir=tmp_path)
        e = load_dataset(expert)
        assert e.manifest.reward_status == "ground_truth"
        for tr in e.trajectories:
            assert tr.rewards is not None
            # scripted expert tracks well even at short horizon
            assert tr.rewards.mean() > 0.8

    def test_regeneration_byte_identical(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        ea, ua = generate_corpus(CFG, 2, 3, seed=9, out_dir=a_dir)
        eb, ub = generate_corpus(CFG, 2, 3, seed=9, out_dir=b_dir)
        for pa, pb in ((ea, eb), (ua, ub)):
            for ext in (".traj", ".manifest"):
                assert pa.with_suffix(ext).read_bytes() == pb.with_suffix(ext).read_bytes()
        assert ua.with_suffix(".returns.json").read_bytes() == \
            ub.with_suffix(".returns.json").read_bytes()

    def test_bad_counts_rejected(self, tmp_path):
        with pytest.raises(DataError):
            generate_corpus(CFG, 0, 5, seed=0, out_dir=tmp_path)

    def test_episode_order_preserved(self, tmp_path):
        _, unlabeled = generate_corpus(CFG, 1, 4, seed=5, out_dir=tmp_path)
        u = load_dataset(unlabeled)
        assert [tr.episode_id for tr in u.trajectories] == \
            [f"unlabeled-{i:04d}" for i in range(4)]
