"""Dense MLP numerics: seeded orthogonal init, forward, analytic backward, Adam.

All arithmetic is float64 and value-semantic: every function returns fresh
arrays and never mutates its inputs, so distinct parameter sets can be used
from multiple threads without coordination.

Hidden layers use ReLU; the output layer is linear. The ReLU derivative at
exactly zero is taken as zero (subgradient convention), which matters when
comparing analytic gradients against finite differences near the kink.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError, NumericalError

CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    """Weights and biases of a fully connected ReLU network.

    ``weights[i]`` has shape (fan_in, fan_out) so one layer step is
    ``x @ W + b``; ``biases[i]`` has shape (fan_out,).
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])


@dataclass
class MlpGrads:
    """Gradients with the same layout as :class:`MlpParams`."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class AdamState:
    """First/second moment estimates plus step counter for Adam."""

    first_moment: MlpGrads
    second_moment: MlpGrads
    step_count: int
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def _orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Semi-orthogonal (rows, cols) matrix: the smaller side is orthonormal."""
    flat = rng.standard_normal((rows, cols)) if rows >= cols else \
        rng.standard_normal((cols, rows))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))  # make the factorization unique
    return q if rows >= cols else q.T


def init_mlp(seed: int, in_dim: int, out_dim: int,
             hidden: tuple[int, ...] = (256, 256)) -> MlpParams:
    """Deterministically initialize an MLP with orthogonal weights, zero biases."""
    dims = (in_dim, *hidden, out_dim)
    if any(int(d) < 1 for d in dims):
        raise DimensionError(f"all layer dimensions must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    weights = [_orthogonal(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
    biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
    return MlpParams(weights, biases)


@dataclass
class MlpCache:
    """Intermediate activations saved by :func:`forward_cached`."""

    inputs: list[np.ndarray]    # activation entering each layer
    preacts: list[np.ndarray]   # pre-activation of each layer
    squeezed: bool


def _as_batch(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise DimensionError(
            f"input has shape {x.shape}, expected (*, {params.in_dim})")
    return x, squeezed


def forward_cached(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    """Forward pass keeping the per-layer tensors needed by :func:`backward`."""
    h, squeezed = _as_batch(params, x)
    inputs, preacts = [], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        preacts.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    out = h[0] if squeezed else h
    return out, MlpCache(inputs, preacts, squeezed)


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on one vector (in_dim,) or a batch (B, in_dim)."""
    out, _ = forward_cached(params, x)
    return out


def backward(params: MlpParams, x: np.ndarray, output_grad: np.ndarray,
             cache: MlpCache | None = None) -> tuple[MlpGrads, np.ndarray]:
    """Exact gradients of ``sum(output * output_grad)`` w.r.t. params and input.

    ``output_grad`` must match the forward output shape. Batched inputs
    produce parameter gradients summed over the batch; the caller folds any
    1/B factor into ``output_grad``.
    """
    if cache is None:
        _, cache = forward_cached(params, x)
    g = np.asarray(output_grad, dtype=np.float64)
    if cache.squeezed:
        g = g[None, :]
    if g.shape != (cache.inputs[0].shape[0], params.out_dim):
        raise DimensionError(
            f"output_grad has shape {np.shape(output_grad)}, expected "
            f"batch x {params.out_dim}")
    n_layers = len(params.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for i in range(n_layers - 1, -1, -1):
        gw[i] = cache.inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
        if i > 0:
            g = g * (cache.preacts[i - 1] > 0.0)
    gx = g[0] if cache.squeezed else g
    return MlpGrads(gw, gb), gx


def zeros_like_params(params: MlpParams) -> MlpGrads:
    return MlpGrads([np.zeros_like(w) for w in params.weights],
                    [np.zeros_like(b) for b in params.biases])


def init_adam(params: MlpParams, learning_rate: float = 3e-4,
              beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> AdamState:
    return AdamState(zeros_like_params(params), zeros_like_params(params),
                     step_count=0, learning_rate=learning_rate,
                     beta1=beta1, beta2=beta2, epsilon=epsilon)


def adam_step(params: MlpParams, grads: MlpGrads,
              state: AdamState) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    t = state.step_count + 1
    b1, b2, eps, lr = state.beta1, state.beta2, state.epsilon, state.learning_rate
    new_w, new_b = [], []
    new_mw, new_mb, new_vw, new_vb = [], [], [], []
    for kind, tensors, grads_k, m_k, v_k, out_p, out_m, out_v in (
        ("weights", params.weights, grads.weights,
         state.first_moment.weights, state.second_moment.weights,
         new_w, new_mw, new_vw),
        ("biases", params.biases, grads.biases,
         state.first_moment.biases, state.second_moment.biases,
         new_b, new_mb, new_vb),
    ):
        for i, (p, g, m, v) in enumerate(zip(tensors, grads_k, m_k, v_k)):
            if p.shape != g.shape:
                raise DimensionError(
                    f"{kind}[{i}] gradient shape {g.shape} != param {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in {kind}[{i}]")
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            out_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
            out_m.append(m)
            out_v.append(v)
    new_params = MlpParams(new_w, new_b)
    new_state = AdamState(MlpGrads(new_mw, new_mb), MlpGrads(new_vw, new_vb),
                          step_count=t, learning_rate=lr,
                          beta1=b1, beta2=b2, epsilon=eps)
    return new_params, new_state


def save_params(path, params: MlpParams, meta: dict | None = None) -> None:
    """Write a versioned checkpoint; save/load round-trips are bit-exact."""
    arrays = {f"w{i}": w for i, w in enumerate(params.weights)}
    arrays.update({f"b{i}": b for i, b in enumerate(params.biases)})
    arrays["n_layers"] = np.array(len(params.weights), dtype=np.int64)
    arrays["version"] = np.array(CHECKPOINT_VERSION, dtype=np.int64)
    meta = {"hidden_sizes": list(params.hidden_sizes), **(meta or {})}
    arrays["meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_params(path) -> tuple[MlpParams, dict]:
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {version} in {path}")
        n = int(data["n_layers"])
        weights = [np.asarray(data[f"w{i}"], dtype=np.float64) for i in range(n)]
        biases = [np.asarray(data[f"b{i}"], dtype=np.float64) for i in range(n)]
        meta = json.loads(bytes(data["meta"]).decode()) if data["meta"].size else {}
    return MlpParams(weights, biases), meta
