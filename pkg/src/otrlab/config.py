"""Experiment profiles and config-file handling.

Two built-in profiles: "paper" mirrors the published protocol (horizon 500,
10 seeds, 250k gradient steps, 256x256 networks, evaluation every 10k
steps); "desk" is a scaled-down surrogate that finishes in minutes on a CPU
(horizon 200, 3 seeds, 50k steps, 64x64 networks, evaluation every 2k
steps). Everything is overridable through a JSON config file or CLI flags.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError
from .iql import IqlConfig
from .labeling import OtrConfig
from .pipeline import CorpusConfig, ExperimentSpec
from .tracking import EnvConfig

PROFILES = ("paper", "desk")


def default_spec(profile: str, out_dir) -> ExperimentSpec:
    if profile == "paper":
        return ExperimentSpec(
            out_dir=out_dir, profile="paper",
            seeds=tuple(range(10)),
            eval_interval=10_000, eval_episodes=10,
            env=EnvConfig(horizon=500),
            corpus=CorpusConfig(expert_episodes=10, unlabeled_episodes=100),
            otr=OtrConfig(),
            iql=IqlConfig(gradient_steps=250_000, hidden=(256, 256)))
    if profile == "desk":
        return ExperimentSpec(
            out_dir=out_dir, profile="desk",
            seeds=(0, 1, 2),
            eval_interval=2_000, eval_episodes=10,
            env=EnvConfig(horizon=200),
            corpus=CorpusConfig(expert_episodes=10, unlabeled_episodes=100),
            otr=OtrConfig(),
            iql=IqlConfig(gradient_steps=50_000, hidden=(64, 64)))
    raise ConfigError(f"unknown profile {profile!r}; expected one of {PROFILES}")


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    try:
        return ExperimentSpec.from_dict(payload)
    except TypeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from exc


def save_spec(spec: ExperimentSpec, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
