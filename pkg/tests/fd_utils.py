"""Finite-difference probing helpers shared by the IQL and acceptance tests."""

from __future__ import annotations

import numpy as np

from otrlab.datasets import TransitionBatch
from otrlab.iql import LOG_STD_MAX, LOG_STD_MIN, IqlConfig, init_nets
from otrlab.nets import forward

from oracles import kink_distance

STATE_DIM, ACTION_DIM = 4, 2

KINK_MARGIN = 1e-3  # keep FD probes (step 1e-5) well away from ReLU kinks


def make_batch(rng, n=12):
    return TransitionBatch(
        states=rng.standard_normal((n, STATE_DIM)),
        actions=np.clip(rng.standard_normal((n, ACTION_DIM)), -1, 1),
        next_states=rng.standard_normal((n, STATE_DIM)),
        rewards=rng.standard_normal(n),
        dones=rng.random(n) < 0.2,
    )


def flatten(params):
    return np.concatenate([w.ravel() for w in params.weights]
                          + [b.ravel() for b in params.biases])


def unflatten_into(params, theta):
    off = 0
    for w in params.weights:
        w[:] = theta[off:off + w.size].reshape(w.shape)
        off += w.size
    for b in params.biases:
        b[:] = theta[off:off + b.size]
        off += b.size


def grads_flat(grads):
    return np.concatenate([g.ravel() for g in grads.weights]
                          + [g.ravel() for g in grads.biases])


def admissible_fd_case(model, batch):
    """True when no hidden unit or loss indicator sits near a kink."""
    sa = np.concatenate([batch.states, batch.actions], axis=1)
    for net, x in ((model.value, batch.states), (model.q1, sa), (model.q2, sa),
                   (model.q1_target, sa), (model.q2_target, sa),
                   (model.policy, batch.states),
                   (model.value, batch.next_states)):
        if kink_distance(net.weights, net.biases, x) < KINK_MARGIN:
            return False
    qt = np.minimum(forward(model.q1_target, sa).ravel(),
                    forward(model.q2_target, sa).ravel())
    u = qt - forward(model.value, batch.states).ravel()
    if np.abs(u).min() < KINK_MARGIN:  # expectile indicator flips at u = 0
        return False
    out = forward(model.policy, batch.states)
    raw = out[:, ACTION_DIM:]
    if min(np.abs(raw - LOG_STD_MIN).min(), np.abs(raw - LOG_STD_MAX).min()) \
            < KINK_MARGIN:  # log-std clip boundary
        return False
    q1 = forward(model.q1_target, sa).ravel()
    q2 = forward(model.q2_target, sa).ravel()
    return bool(np.abs(q1 - q2).min() >= KINK_MARGIN)  # min() switch point


def fd_cases(n_cases, seed_base, n_batch=12):
    """Yield n_cases (seed, model, batch) tuples admissible for FD probing."""
    rng = np.random.default_rng(seed_base)
    admitted = 0
    candidate = 0
    while admitted < n_cases:
        candidate += 1
        seed = seed_base + candidate
        model = init_nets(IqlConfig(hidden=(8, 8), seed=seed), STATE_DIM,
                          ACTION_DIM)
        batch = make_batch(rng, n=n_batch)
        if not admissible_fd_case(model, batch):
            continue
        admitted += 1
        yield seed, model, batch
