"""Implicit Q-learning on a labeled transition dataset.

Per gradient step, on one sampled batch: the state-value net is regressed
toward an expectile of the twin target critics, the critics chase the TD
target ``r + gamma * (1 - done) * V(s')``, the Gaussian policy is fit by
advantage-weighted log-likelihood, and the target critics are soft-updated.
Training never constructs an environment; its only inputs are the dataset
and the configuration, and a fixed seed reproduces the run exactly.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nets
from .datasets import TransitionBatch, TransitionStore, TrajectoryDataset
from .errors import ConfigError, DataError, NumericalError
from .nets import AdamState, MlpGrads, MlpParams

log = logging.getLogger(__name__)

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
AWR_WEIGHT_CLIP = 100.0
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class IqlConfig:
    gamma: float = 0.99
    soft_update_tau: float = 0.005
    batch_size: int = 256
    learning_rate: float = 3e-4
    expectile: float = 0.7
    awr_temperature: float = 3.0
    gradient_steps: int = 250_000
    eval_interval: int = 10_000      # checkpoint cadence
    hidden: tuple[int, ...] = (256, 256)
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if not 0.0 < self.soft_update_tau <= 1.0:
            raise ConfigError("soft_update_tau must lie in (0, 1]")
        if not 0.5 < self.expectile < 1.0:
            raise ConfigError("expectile must lie in (0.5, 1)")
        if self.awr_temperature <= 0:
            raise ConfigError("awr_temperature must be positive")
        if self.gradient_steps < 0 or self.eval_interval < 1:
            raise ConfigError("gradient_steps must be >= 0, eval_interval >= 1")
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma, "soft_update_tau": self.soft_update_tau,
            "batch_size": self.batch_size, "learning_rate": self.learning_rate,
            "expectile": self.expectile, "awr_temperature": self.awr_temperature,
            "gradient_steps": self.gradient_steps,
            "eval_interval": self.eval_interval, "hidden": list(self.hidden),
            "seed": self.seed,
        }


@dataclass
class IqlNets:
    """Twin critics with target copies, a value net and a Gaussian policy."""

    value: MlpParams
    q1: MlpParams
    q2: MlpParams
    q1_target: MlpParams
    q2_target: MlpParams
    policy: MlpParams                 # outputs [action mean, raw log-std]
    value_opt: AdamState
    q1_opt: AdamState
    q2_opt: AdamState
    policy_opt: AdamState
    state_dim: int
    action_dim: int


def init_nets(config: IqlConfig, state_dim: int, action_dim: int) -> IqlNets:
    seeds = np.random.default_rng(config.seed).integers(1 << 31, size=4)
    value = nets.init_mlp(int(seeds[0]), state_dim, 1, config.hidden)
    q1 = nets.init_mlp(int(seeds[1]), state_dim + action_dim, 1, config.hidden)
    q2 = nets.init_mlp(int(seeds[2]), state_dim + action_dim, 1, config.hidden)
    policy = nets.init_mlp(int(seeds[3]), state_dim, 2 * action_dim, config.hidden)
    lr = config.learning_rate
    return IqlNets(value=value, q1=q1, q2=q2,
                   q1_target=q1.copy(), q2_target=q2.copy(), policy=policy,
                   value_opt=nets.init_adam(value, lr),
                   q1_opt=nets.init_adam(q1, lr), q2_opt=nets.init_adam(q2, lr),
                   policy_opt=nets.init_adam(policy, lr),
                   state_dim=state_dim, action_dim=action_dim)


def _check_finite(loss: float, name: str) -> None:
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite {name}")


def _min_target_q(model: IqlNets, batch: TransitionBatch) -> np.ndarray:
    sa = np.concatenate([batch.states, batch.actions], axis=1)
    q1 = nets.forward(model.q1_target, sa).ravel()
    q2 = nets.forward(model.q2_target, sa).ravel()
    return np.minimum(q1, q2)


def value_loss(model: IqlNets, batch: TransitionBatch, expectile: float,
               target_q: np.ndarray | None = None) -> tuple[float, MlpGrads]:
    """Asymmetric squared regression of V(s) toward the min target critic."""
    if target_q is None:
        target_q = _min_target_q(model, batch)
    v, cache = nets.forward_cached(model.value, batch.states)
    u = target_q - v.ravel()
    weight = np.where(u < 0.0, 1.0 - expectile, expectile)
    with np.errstate(over="ignore"):
        loss = float(np.mean(weight * u * u))
    _check_finite(loss, "value loss")
    gy = (-2.0 * weight * u / len(u))[:, None]
    grads, _ = nets.backward(model.value, batch.states, gy, cache=cache)
    return loss, grads


def critic_loss(model: IqlNets, batch: TransitionBatch,
                gamma: float) -> tuple[float, MlpGrads, MlpGrads]:
    """Squared TD error of both critics against r + gamma (1-done) V(s')."""
    v_next = nets.forward(model.value, batch.next_states).ravel()
    target = batch.rewards + gamma * (1.0 - batch.dones.astype(np.float64)) * v_next
    sa = np.concatenate([batch.states, batch.actions], axis=1)
    n = len(target)
    total = 0.0
    grads = []
    for critic in (model.q1, model.q2):
        q, cache = nets.forward_cached(critic, sa)
        err = q.ravel() - target
        with np.errstate(over="ignore"):
            total += float(np.mean(err * err))
        g, _ = nets.backward(critic, sa, (2.0 * err / n)[:, None], cache=cache)
        grads.append(g)
    _check_finite(total, "critic loss")
    return total, grads[0], grads[1]


def gaussian_log_prob(policy_out: np.ndarray,
                      actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal-Gaussian log-likelihood and its gradient w.r.t. the net output.

    The policy head emits [mean, raw log-std]; the log-std is clamped to
    [LOG_STD_MIN, LOG_STD_MAX] with zero gradient outside (clip convention).
    Returns (log_prob (B,), d log_prob / d policy_out (B, 2A)).
    """
    dim = actions.shape[1]
    mean, raw = policy_out[:, :dim], policy_out[:, dim:]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    inv_std = np.exp(-log_std)
    z = (actions - mean) * inv_std
    log_prob = np.sum(-0.5 * z * z - log_std - 0.5 * _LOG_2PI, axis=1)
    d_mean = z * inv_std
    d_raw = (z * z - 1.0) * ((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX))
    return log_prob, np.concatenate([d_mean, d_raw], axis=1)


def policy_loss(model: IqlNets, batch: TransitionBatch, awr_temperature: float,
                target_q: np.ndarray | None = None) -> tuple[float, MlpGrads]:
    """Advantage-weighted log-likelihood of the dataset actions.

    Weights exp(A / temperature) are clamped at AWR_WEIGHT_CLIP and not
    differentiated through.
    """
    if target_q is None:
        target_q = _min_target_q(model, batch)
    v = nets.forward(model.value, batch.states).ravel()
    advantage = target_q - v
    with np.errstate(over="ignore"):
        weight = np.minimum(np.exp(advantage / awr_temperature), AWR_WEIGHT_CLIP)
    out, cache = nets.forward_cached(model.policy, batch.states)
    log_prob, d_out = gaussian_log_prob(out, batch.actions)
    loss = float(-np.mean(weight * log_prob))
    _check_finite(loss, "policy loss")
    gy = -(weight[:, None] * d_out) / len(weight)
    grads, _ = nets.backward(model.policy, batch.states, gy, cache=cache)
    return loss, grads


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """Polyak average: target <- (1 - tau) target + tau online."""
    return MlpParams(
        [(1.0 - tau) * tw + tau * ow for tw, ow in zip(target.weights, online.weights)],
        [(1.0 - tau) * tb + tau * ob for tb, ob in zip(target.biases, online.biases)])


def act(model: IqlNets, state: np.ndarray, deterministic: bool = True,
        rng: np.random.Generator | None = None) -> np.ndarray:
    """Tanh-squashed policy action in [-1, 1] per component."""
    out = nets.forward(model.policy, np.asarray(state, dtype=np.float64))
    mean, raw = out[:model.action_dim], out[model.action_dim:]
    if deterministic:
        return np.tanh(mean)
    if rng is None:
        raise ConfigError("stochastic action sampling needs an rng")
    std = np.exp(np.clip(raw, LOG_STD_MIN, LOG_STD_MAX))
    return np.tanh(mean + std * rng.standard_normal(model.action_dim))


CHECKPOINT_NET_NAMES = ("value", "q1", "q2", "q1_target", "q2_target", "policy")


def save_checkpoint(directory, model: IqlNets, config: IqlConfig,
                    step: int) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in CHECKPOINT_NET_NAMES:
        nets.save_params(directory / f"{name}.npz", getattr(model, name),
                         meta={"net": name, "step": step, "seed": config.seed})
    snapshot = {"config": config.to_dict(), "step": step,
                "state_dim": model.state_dim, "action_dim": model.action_dim}
    (directory / "config.json").write_text(
        json.dumps(snapshot, indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory) -> tuple[IqlNets, dict]:
    directory = Path(directory)
    snap_path = directory / "config.json"
    if not snap_path.exists():
        raise DataError(f"checkpoint snapshot not found: {snap_path}")
    snapshot = json.loads(snap_path.read_text())
    loaded = {}
    for name in CHECKPOINT_NET_NAMES:
        loaded[name], _ = nets.load_params(directory / f"{name}.npz")
    lr = snapshot["config"]["learning_rate"]
    model = IqlNets(value=loaded["value"], q1=loaded["q1"], q2=loaded["q2"],
                    q1_target=loaded["q1_target"], q2_target=loaded["q2_target"],
                    policy=loaded["policy"],
                    value_opt=nets.init_adam(loaded["value"], lr),
                    q1_opt=nets.init_adam(loaded["q1"], lr),
                    q2_opt=nets.init_adam(loaded["q2"], lr),
                    policy_opt=nets.init_adam(loaded["policy"], lr),
                    state_dim=snapshot["state_dim"],
                    action_dim=snapshot["action_dim"])
    return model, snapshot


@dataclass
class TrainResult:
    model: IqlNets
    checkpoints: list[tuple[int, Path]]
    loss_rows: list[dict] = field(default_factory=list)


def train(config: IqlConfig, dataset: TrajectoryDataset | TransitionStore,
          out_dir=None, on_checkpoint=None) -> TrainResult:
    """Run the full gradient loop; checkpoints land every eval_interval steps.

    `on_checkpoint(step, model)` is invoked at each checkpoint; its return
    value is ignored, so it cannot influence training. A numerical failure
    aborts with the step index, keeping the last good checkpoint on disk.
    """
    store = dataset if isinstance(dataset, TransitionStore) else \
        TransitionStore(dataset)
    model = init_nets(config, store.states.shape[1], store.actions.shape[1])
    sampler = np.random.default_rng(np.random.default_rng(config.seed
                                                          ).integers(1 << 31, size=5)[4])
    out_dir = Path(out_dir) if out_dir is not None else None

    checkpoints: list[tuple[int, Path]] = []
    loss_rows: list[dict] = []
    interval_losses = np.zeros(3)
    interval_count = 0

    def checkpoint(step: int) -> None:
        if out_dir is not None:
            path = save_checkpoint(out_dir / f"step_{step:08d}", model, config, step)
            checkpoints.append((step, path))
        if interval_count:
            mean = interval_losses / interval_count
            loss_rows.append({"step": step, "value_loss": mean[0],
                              "critic_loss": mean[1], "policy_loss": mean[2]})
        else:
            loss_rows.append({"step": step, "value_loss": math.nan,
                              "critic_loss": math.nan, "policy_loss": math.nan})
        if on_checkpoint is not None:
            on_checkpoint(step, model)

    if config.gradient_steps == 0:
        checkpoint(0)
        return TrainResult(model=model, checkpoints=checkpoints,
                           loss_rows=loss_rows)

    for step in range(1, config.gradient_steps + 1):
        batch = store.sample(sampler, config.batch_size)
        try:
            target_q = _min_target_q(model, batch)
            v_loss, v_grads = value_loss(model, batch, config.expectile, target_q)
            model.value, model.value_opt = nets.adam_step(
                model.value, v_grads, model.value_opt)
            q_loss, g1, g2 = critic_loss(model, batch, config.gamma)
            model.q1, model.q1_opt = nets.adam_step(model.q1, g1, model.q1_opt)
            model.q2, model.q2_opt = nets.adam_step(model.q2, g2, model.q2_opt)
            pi_loss, pi_grads = policy_loss(model, batch, config.awr_temperature,
                                            target_q)
            model.policy, model.policy_opt = nets.adam_step(
                model.policy, pi_grads, model.policy_opt)
        except NumericalError as exc:
            last = checkpoints[-1][0] if checkpoints else None
            raise NumericalError(
                f"training failed at step {step}: {exc} "
                f"(last good checkpoint: {last})") from exc
        model.q1_target = soft_update(model.q1_target, model.q1,
                                      config.soft_update_tau)
        model.q2_target = soft_update(model.q2_target, model.q2,
                                      config.soft_update_tau)
        interval_losses += (v_loss, q_loss, pi_loss)
        interval_count += 1
        if step % config.eval_interval == 0 or step == config.gradient_steps:
            checkpoint(step)
            interval_losses[:] = 0.0
            interval_count = 0
    return TrainResult(model=model, checkpoints=checkpoints, loss_rows=loss_rows)
