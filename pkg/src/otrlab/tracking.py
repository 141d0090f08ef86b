"""Planar camera-tracking environment with a scripted proportional expert.

A camera (position + yaw) chases a cube that moves at constant speed along
an axis-aligned square path placed at a random location in the workspace.
Actions are normalized to [-1, 1] per component and scaled to physical units
inside the step function; clamping happens before integration. The per-step
reward penalizes the cube's offset from the image center and the camera's
misorientation; it is deliberately unclamped, so losing the cube drives the
reward negative without terminating the episode.

All dynamics are pure functions of (config, state, action); instances never
share mutable state, so independent episodes can run in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, StateError

ENV_TAG = "planar-tracker-v1"
STATE_DIM = 9
ACTION_DIM = 3

_COINCIDENT = 1e-12  # below this camera-cube distance the bearing is undefined


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 500
    lap_period: int = 400           # steps for one full lap of the square
    square_side: float = 0.5
    workspace_half: float = 1.0
    placement_margin: float = 0.05
    frame_half_extent: float = 0.5  # plane units mapped to image coordinate 1
    velocity_scale: float = 0.05    # plane units per step at action +-1
    yaw_rate_scale: float = 0.3     # radians per step at action +-1
    reward_offset: float = 1.0      # additive constant in the reward
    misorientation_weight: float = 0.1
    reset_position_noise: float = 0.02
    reset_yaw_noise: float = 0.05
    n_distractors: int = 3
    distractor_clearance: float = 0.2
    expert_position_gain: float = 0.8
    expert_yaw_gain: float = 0.8

    def __post_init__(self) -> None:
        if self.horizon < 1 or self.lap_period < 4:
            raise ConfigError("horizon must be >= 1 and lap_period >= 4")
        span = self.square_side / 2 + self.placement_margin
        if span >= self.workspace_half:
            raise ConfigError("square path cannot fit inside the workspace")

    @property
    def cube_speed(self) -> float:
        return 4.0 * self.square_side / self.lap_period


@dataclass
class EnvState:
    camera_pos: np.ndarray          # (2,)
    camera_yaw: float               # radians
    cube_pos: np.ndarray            # (2,)
    cube_waypoint_index: int        # square segment 0..3 the cube is on
    step_index: int
    distractor_positions: np.ndarray  # (k, 2), static scenery
    path_anchor: np.ndarray         # corner 0 of the square path


@dataclass
class Action:
    """Normalized control: camera-frame velocity plus yaw rate, each in [-1, 1]."""

    velocity: np.ndarray            # (2,)
    yaw_rate: float

    def to_array(self) -> np.ndarray:
        return np.array([self.velocity[0], self.velocity[1], self.yaw_rate])

    @staticmethod
    def from_array(a) -> "Action":
        a = np.asarray(a, dtype=np.float64)
        return Action(velocity=a[:2].copy(), yaw_rate=float(a[2]))


@dataclass
class Observation:
    image_point: np.ndarray         # cube position in image coords, center (0,0)
    in_frame: bool                  # max-norm of image_point <= 1
    misorientation: float           # yaw minus bearing to cube, wrapped
    camera_pos: np.ndarray
    camera_yaw: float
    cube_pos: np.ndarray


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def _rotation(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


def cube_position(config: EnvConfig, anchor: np.ndarray,
                  step: int) -> tuple[np.ndarray, int]:
    """Cube position and segment index after `step` steps along the square.

    Parametrized by integer phase so the path closes exactly every lap.
    """
    side = config.square_side
    phase = step % config.lap_period
    u = phase * (4.0 * side / config.lap_period)
    seg = min(int(u // side), 3)
    frac = u - seg * side
    corners = np.array([[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]])
    directions = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    return anchor + corners[seg] + directions[seg] * frac, seg


def _segment_distance(point: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    t = np.clip(np.dot(point - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(point - (a + t * ab)))


def _path_distance(config: EnvConfig, anchor: np.ndarray, point: np.ndarray) -> float:
    side = config.square_side
    corners = anchor + np.array([[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]])
    return min(_segment_distance(point, corners[i], corners[(i + 1) % 4])
               for i in range(4))


def observe(config: EnvConfig, state: EnvState) -> Observation:
    delta = state.cube_pos - state.camera_pos
    dist = float(np.linalg.norm(delta))
    image_point = _rotation(-state.camera_yaw) @ delta / config.frame_half_extent
    if dist < _COINCIDENT:
        miso = 0.0
    else:
        bearing = math.atan2(delta[1], delta[0])
        miso = wrap_angle(state.camera_yaw - bearing)
    return Observation(image_point=image_point,
                       in_frame=bool(np.abs(image_point).max() <= 1.0),
                       misorientation=miso,
                       camera_pos=state.camera_pos.copy(),
                       camera_yaw=state.camera_yaw,
                       cube_pos=state.cube_pos.copy())


def tracking_reward(config: EnvConfig, obs: Observation) -> float:
    """Offset-plus-misorientation penalty subtracted from a constant."""
    return config.reward_offset - (float(np.linalg.norm(obs.image_point))
                                   + config.misorientation_weight
                                   * abs(obs.misorientation))


def reset(config: EnvConfig, seed: int) -> tuple[EnvState, Observation]:
    """Place the square path, distractors and camera; deterministic per seed."""
    rng = np.random.default_rng(seed)
    limit = config.workspace_half - config.square_side / 2 - config.placement_margin
    center = rng.uniform(-limit, limit, size=2)
    anchor = center - config.square_side / 2
    cube0, seg = cube_position(config, anchor, 0)

    distractors = []
    while len(distractors) < config.n_distractors:
        cand = rng.uniform(-config.workspace_half, config.workspace_half, size=2)
        if _path_distance(config, anchor, cand) >= config.distractor_clearance:
            distractors.append(cand)
    distractor_positions = np.array(distractors) if distractors else np.zeros((0, 2))

    camera = cube0 + config.reset_position_noise * rng.standard_normal(2)
    camera = np.clip(camera, -config.workspace_half, config.workspace_half)
    delta = cube0 - camera
    if np.linalg.norm(delta) < _COINCIDENT:
        base_yaw = 0.0  # cube sets off along +x; look along its motion
    else:
        base_yaw = math.atan2(delta[1], delta[0])
    yaw = wrap_angle(base_yaw + config.reset_yaw_noise * rng.standard_normal())

    state = EnvState(camera_pos=camera, camera_yaw=yaw, cube_pos=cube0,
                     cube_waypoint_index=seg, step_index=0,
                     distractor_positions=distractor_positions,
                     path_anchor=anchor)
    return state, observe(config, state)


def step(config: EnvConfig, state: EnvState,
         action) -> tuple[EnvState, Observation, float, bool]:
    """Advance one step; returns (state, observation, reward, done)."""
    if state.step_index >= config.horizon:
        raise StateError(
            f"episode finished at step {state.step_index}; reset before stepping")
    if isinstance(action, Action):
        action = action.to_array()
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    if a.shape != (ACTION_DIM,):
        raise StateError(f"action must have shape ({ACTION_DIM},), got {a.shape}")

    velocity_world = _rotation(state.camera_yaw) @ (a[:2] * config.velocity_scale)
    camera = np.clip(state.camera_pos + velocity_world,
                     -config.workspace_half, config.workspace_half)
    yaw = wrap_angle(state.camera_yaw + a[2] * config.yaw_rate_scale)
    next_step = state.step_index + 1
    cube, seg = cube_position(config, state.path_anchor, next_step)

    new_state = EnvState(camera_pos=camera, camera_yaw=yaw, cube_pos=cube,
                         cube_waypoint_index=seg, step_index=next_step,
                         distractor_positions=state.distractor_positions,
                         path_anchor=state.path_anchor)
    obs = observe(config, new_state)
    reward = tracking_reward(config, obs)
    done = next_step == config.horizon
    return new_state, obs, reward, done


def scripted_expert(config: EnvConfig, obs: Observation) -> Action:
    """Proportional controller chasing the cube and its bearing."""
    offset_cam = obs.image_point * config.frame_half_extent
    velocity = np.clip(config.expert_position_gain * offset_cam
                       / config.velocity_scale, -1.0, 1.0)
    yaw_rate = float(np.clip(-config.expert_yaw_gain * obs.misorientation
                             / config.yaw_rate_scale, -1.0, 1.0))
    return Action(velocity=velocity, yaw_rate=yaw_rate)


def state_vector(obs: Observation) -> np.ndarray:
    """Fixed-order 9-dim vector consumed by transport costs and networks."""
    return np.array([
        obs.camera_pos[0], obs.camera_pos[1],
        math.cos(obs.camera_yaw), math.sin(obs.camera_yaw),
        obs.cube_pos[0], obs.cube_pos[1],
        obs.image_point[0], obs.image_point[1],
        obs.misorientation,
    ])


def rollout(config: EnvConfig, policy, seed: int):
    """Run one episode; `policy` maps an Observation to an action.

    Returns (states, actions, rewards) with shapes (H+1, 9), (H, 3), (H,);
    states[t] is the vector before actions[t] is applied.
    """
    state, obs = reset(config, seed)
    states = [state_vector(obs)]
    actions, rewards = [], []
    done = False
    while not done:
        action = policy(obs)
        if isinstance(action, Action):
            action = action.to_array()
        action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        state, obs, reward, done = step(config, state, action)
        states.append(state_vector(obs))
        actions.append(action)
        rewards.append(reward)
    return np.array(states), np.array(actions), np.array(rewards)
