"""Discrete optimal transport between empirical state distributions.

Two solvers share one result type: a Sinkhorn solver for the
entropy-regularized problem (the production path) and an exact linear-program
solver for desk-scale verification. Both operate on uniform marginals, which
is how trajectories of unequal length are compared: a length-T trajectory is
a uniform Dirac mixture with mass 1/T per state.

The Sinkhorn implementation keeps dual potentials in the log domain and runs
the inner loop as matrix scaling with absorption, so small regularization
values neither overflow nor underflow. An epsilon-annealing warm start
(geometric decay onto the requested epsilon) keeps iteration counts low; the
fixed point at the final epsilon does not depend on the warm start.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import ConfigError, DimensionError, NumericalError, SizeError

METRICS = ("squared_euclidean", "euclidean", "cosine")

EXACT_SIZE_LIMIT = 10_000

# scaling factors this far from 1 get absorbed into the potentials
_ABSORB_THRESHOLD = 1e100


@dataclass
class EmpiricalDistribution:
    """Uniform Dirac mixture over a finite set of state vectors."""

    support: np.ndarray  # (T, dim)

    def __post_init__(self) -> None:
        self.support = np.atleast_2d(np.asarray(self.support, dtype=np.float64))
        if self.support.size == 0:
            raise DimensionError("empirical distribution needs a nonempty support")
        if not np.all(np.isfinite(self.support)):
            raise NumericalError("non-finite value in distribution support")

    @property
    def masses(self) -> np.ndarray:
        n = self.support.shape[0]
        return np.full(n, 1.0 / n)


@dataclass
class CouplingResult:
    """Cost matrix, transport plan and summary for one trajectory pair."""

    cost: np.ndarray            # (T, T')
    plan: np.ndarray            # (T, T'), nonnegative, marginals p and q
    row_marginal: np.ndarray    # p, uniform 1/T
    col_marginal: np.ndarray    # q, uniform 1/T'
    transport_cost: float       # sum(cost * plan)
    converged: bool
    iterations: int
    marginal_violation: float   # max |row/col sum - marginal|


def _support_of(dist) -> np.ndarray:
    if isinstance(dist, EmpiricalDistribution):
        return dist.support
    return EmpiricalDistribution(np.asarray(dist)).support


def build_cost_matrix(unlabeled, expert, metric: str = "squared_euclidean") -> np.ndarray:
    """Pairwise cost matrix C[t, t'] = c(unlabeled_t, expert_t')."""
    xs, ys = _support_of(unlabeled), _support_of(expert)
    if xs.shape[1] != ys.shape[1]:
        raise DimensionError(
            f"state dimensions differ: {xs.shape[1]} vs {ys.shape[1]}")
    if metric == "squared_euclidean":
        cost = cdist(xs, ys, "sqeuclidean")
    elif metric == "euclidean":
        cost = cdist(xs, ys, "euclidean")
    elif metric == "cosine":
        norms_x = np.maximum(np.linalg.norm(xs, axis=1), 1e-12)
        norms_y = np.maximum(np.linalg.norm(ys, axis=1), 1e-12)
        cost = 1.0 - (xs @ ys.T) / np.outer(norms_x, norms_y)
    else:
        raise ConfigError(f"unknown metric {metric!r}, expected one of {METRICS}")
    return np.maximum(cost, 0.0)


def _validate_cost(cost) -> np.ndarray:
    c = np.atleast_2d(np.asarray(cost, dtype=np.float64))
    if c.ndim != 2 or c.size == 0:
        raise DimensionError(f"cost matrix must be 2-D and nonempty, got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise NumericalError("non-finite entry in cost matrix")
    if np.any(c < 0):
        raise NumericalError("negative entry in cost matrix")
    return c


def marginal_violation(plan: np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    """Max absolute deviation of the plan's marginals from (p, q)."""
    row_err = np.abs(plan.sum(axis=1) - p).max()
    col_err = np.abs(plan.sum(axis=0) - q).max()
    return float(max(row_err, col_err))


def _log_pass(cost: np.ndarray, eps: float, logp: np.ndarray, logq: np.ndarray,
              f: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One full dual update in the log domain (always finite)."""
    f = eps * (logp - logsumexp((g[None, :] - cost) / eps, axis=1))
    g = eps * (logq - logsumexp((f[:, None] - cost) / eps, axis=0))
    return f, g


def _scaling_stage(cost, eps, p, q, logp, logq, f, g, max_iters, tol):
    """Run Sinkhorn at one epsilon; returns updated potentials and status.

    Starts with a log-domain pass to center the potentials, then iterates on
    scaling vectors u, v, absorbing them into (f, g) whenever they drift far
    from 1. The row-marginal error of the current plan is tracked every
    iteration; column marginals are exact after each v-update.
    """
    f, g = _log_pass(cost, eps, logp, logq, f, g)
    used = 1
    kernel = np.exp((f[:, None] + g[None, :] - cost) / eps)
    u = np.ones_like(p)
    v = np.ones_like(q)
    kv = kernel @ v
    err = np.abs(u * kv - p).max()
    while used < max_iters and err >= tol:
        u = p / kv
        v = q / (kernel.T @ u)
        kv = kernel @ v
        used += 1
        with np.errstate(over="ignore"):
            drift = max(u.max(), v.max(), 1.0 / u.min(), 1.0 / v.min())
        if not np.isfinite(drift):
            raise NumericalError("Sinkhorn iterate became non-finite")
        if drift > _ABSORB_THRESHOLD:
            f = f + eps * np.log(u)
            g = g + eps * np.log(v)
            kernel = np.exp((f[:, None] + g[None, :] - cost) / eps)
            u = np.ones_like(p)
            v = np.ones_like(q)
            kv = kernel @ v
        err = np.abs(u * kv - p).max()
    f = f + eps * np.log(u)
    g = g + eps * np.log(v)
    return f, g, float(err), used


def _anneal_schedule(cost: np.ndarray, epsilon: float) -> list[float]:
    top = float(cost.max()) * 0.25
    schedule: list[float] = []
    eps = top
    while eps > epsilon * 2.0:
        schedule.append(eps)
        eps *= 0.5
    schedule.append(epsilon)
    return schedule


def _round_to_feasible(plan: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Project a near-feasible plan onto the transport polytope.

    Scales rows then columns down to their marginals and spreads the leftover
    mass as a rank-one correction; moves the plan by O(marginal violation).
    """
    row = plan.sum(axis=1)
    plan = plan * np.minimum(1.0, p / np.maximum(row, 1e-300))[:, None]
    col = plan.sum(axis=0)
    plan = plan * np.minimum(1.0, q / np.maximum(col, 1e-300))[None, :]
    err_p = np.maximum(p - plan.sum(axis=1), 0.0)
    err_q = np.maximum(q - plan.sum(axis=0), 0.0)
    total = err_p.sum()
    if total > 0:
        plan = plan + np.outer(err_p, err_q) / total
    return plan


def sinkhorn(cost, epsilon: float, max_iters: int = 1000, tol: float = 1e-6,
             anneal: bool = True) -> CouplingResult:
    """Entropy-regularized transport plan between uniform marginals.

    Non-convergence within ``max_iters`` is not fatal: the result is returned
    with ``converged=False`` and the final marginal violation so the caller
    can decide. A NaN in the iterates raises :class:`NumericalError`.
    """
    c = _validate_cost(cost)
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    m, n = c.shape
    p = np.full(m, 1.0 / m)
    q = np.full(n, 1.0 / n)
    logp, logq = np.log(p), np.log(q)
    f = np.zeros(m)
    g = np.zeros(n)

    stages = _anneal_schedule(c, epsilon) if anneal and c.max() > 0 else [epsilon]
    used_total = 0
    err = np.inf
    for i, eps in enumerate(stages):
        last = i == len(stages) - 1
        if last:
            budget = max(max_iters - used_total, 1)
            stage_tol = tol
        else:
            # warm-up stages only need rough marginals; keep at least half
            # the budget for the requested epsilon
            budget = min(50, max(1, (max_iters // 2 - used_total)))
            stage_tol = max(tol, 0.02 / max(m, n))
        f, g, err, used = _scaling_stage(c, eps, p, q, logp, logq, f, g,
                                         budget, stage_tol)
        used_total += used

    plan = np.exp((f[:, None] + g[None, :] - c) / epsilon)
    raw_violation = marginal_violation(plan, p, q)
    # the returned plan is always exactly feasible; the converged flag and
    # reported violation describe the fixed-point iteration itself
    plan = _round_to_feasible(plan, p, q)
    transport_cost = float((c * plan).sum())
    if not np.isfinite(transport_cost):
        raise NumericalError("Sinkhorn produced a non-finite transport cost")
    return CouplingResult(cost=c, plan=plan, row_marginal=p, col_marginal=q,
                          transport_cost=transport_cost,
                          converged=bool(raw_violation < tol),
                          iterations=used_total,
                          marginal_violation=raw_violation)


def exact_ot(cost) -> CouplingResult:
    """Exact solution of the unregularized transport LP (desk-scale oracle)."""
    c = _validate_cost(cost)
    m, n = c.shape
    if m * n > EXACT_SIZE_LIMIT:
        raise SizeError(
            f"exact solver limited to {EXACT_SIZE_LIMIT} variables, got {m * n}")
    p = np.full(m, 1.0 / m)
    q = np.full(n, 1.0 / n)
    # mass conservation: row sums = p, column sums = q
    row_cons = sparse.kron(sparse.eye(m), np.ones((1, n)))
    col_cons = sparse.kron(np.ones((1, m)), sparse.eye(n))
    a_eq = sparse.vstack([row_cons, col_cons])
    res = linprog(c.ravel(), A_eq=a_eq, b_eq=np.concatenate([p, q]),
                  bounds=(0, None), method="highs")
    if not res.success:
        raise NumericalError(f"exact transport LP failed: {res.message}")
    plan = np.maximum(res.x.reshape(m, n), 0.0)
    return CouplingResult(cost=c, plan=plan, row_marginal=p, col_marginal=q,
                          transport_cost=float((c * plan).sum()),
                          converged=True,
                          iterations=int(res.nit),
                          marginal_violation=marginal_violation(plan, p, q))


def wasserstein_sq(unlabeled, expert, solver: str = "exact",
                   metric: str = "squared_euclidean", epsilon: float = 0.01,
                   max_iters: int = 1000, tol: float = 1e-6) -> float:
    """Squared-Wasserstein-style divergence between two state distributions.

    The exact solver returns the true minimum transport cost; the sinkhorn
    solver returns its entropic upper approximation.
    """
    cost = build_cost_matrix(unlabeled, expert, metric=metric)
    if solver == "exact":
        return exact_ot(cost).transport_cost
    if solver == "sinkhorn":
        return sinkhorn(cost, epsilon, max_iters=max_iters, tol=tol).transport_cost
    raise ConfigError(f"unknown solver {solver!r}, expected 'exact' or 'sinkhorn'")


def dump_coupling(result: CouplingResult) -> str:
    """Human-readable dump of one alignment, for debugging."""
    lines = [
        f"# coupling {result.cost.shape[0]}x{result.cost.shape[1]} "
        f"cost={result.transport_cost:.6e} converged={result.converged} "
        f"iterations={result.iterations} "
        f"marginal_violation={result.marginal_violation:.3e}",
        "# cost matrix",
    ]
    for row in result.cost:
        lines.append(" ".join(f"{x: .6e}" for x in row))
    lines.append("# transport plan")
    for row in result.plan:
        lines.append(" ".join(f"{x: .6e}" for x in row))
    return "\n".join(lines) + "\n"
