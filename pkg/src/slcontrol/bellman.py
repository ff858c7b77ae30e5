"""Per-node semi-Lagrangian update: action minimization and mode switches.

One update at node x in mode q compares
  * a continuous branch per action a:
      l(x,q,a)*dt + exp(-discount*dt) * E[interp(field, foot points)],
    where the foot points trace the dynamics over one step dt, and
  * a switch branch (when there are modes to switch to):
      min over q' != q of field(x, q') + K(q, q'),
and keeps the minimum. Ties are broken deterministically: a continuous
branch beats a switch, lower action index beats higher, lower target
mode beats higher.

The foot-point stencil is the weakly consistent two-point-per-axis
construction: 2d points ``x + dt*f +- sqrt(d*dt)*sigma_k`` with equal
weights ``1/(2d)``, matching the mean ``dt*f`` and covariance
``dt*sigma*sigma^T`` of the true increment. When every diffusion column
vanishes at the evaluation point the stencil collapses to the single
deterministic foot point with weight one.

:func:`build_update_table` precomputes, for a fixed (model, grid, dt),
the linear functional each (mode, action, node) branch applies to the
value array: corner indices and coefficients folded from stencil and
interpolation weights, plus the cost term. Sweeps and policy extraction
then run on these tables without re-evaluating the model maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid, ValueField, interpolate, interpolation_weights, project_to_box
from .model import Model, eval_cost, eval_diffusion, eval_drift

__all__ = [
    "Stencil",
    "Decision",
    "CONTINUOUS",
    "SWITCH",
    "stencil_points",
    "continuous_branch",
    "switch_branch",
    "sl_update",
    "UpdateTable",
    "build_update_table",
    "NonpositiveDt",
]

CONTINUOUS = "continuous"
SWITCH = "switch"


class NonpositiveDt(ValueError):
    pass


@dataclass(frozen=True)
class Decision:
    """Either ``continuous`` with an action index or ``switch`` with a mode."""

    kind: str
    index: int

    @classmethod
    def continuous(cls, action_index: int) -> "Decision":
        return cls(CONTINUOUS, action_index)

    @classmethod
    def switch(cls, target_mode: int) -> "Decision":
        return cls(SWITCH, target_mode)


@dataclass(frozen=True)
class Stencil:
    """Foot points (P, d) with positive weights (P,) summing to one."""

    points: np.ndarray
    weights: np.ndarray


def stencil_points(m: Model, x: np.ndarray, q: int, a, dt: float) -> Stencil:
    """Foot points of one semi-Lagrangian step from x under action value ``a``."""
    if not dt > 0:
        raise NonpositiveDt(f"dt must be > 0, got {dt}")
    x = np.asarray(x, dtype=float).reshape(m.dim)
    f = eval_drift(m, x, q, a)
    sig = eval_diffusion(m, x, q, a)
    base = x + dt * f
    if not sig.any():
        return Stencil(base[None, :], np.array([1.0]))
    d = m.dim
    scale = math.sqrt(d * dt)
    pts = np.empty((2 * d, d))
    for k in range(d):
        pts[2 * k] = base + scale * sig[:, k]
        pts[2 * k + 1] = base - scale * sig[:, k]
    return Stencil(pts, np.full(2 * d, 1.0 / (2 * d)))


def continuous_branch(
    field: ValueField, m: Model, node: int, q: int, action_index: int, dt: float
) -> float:
    """Value of holding action ``actions[action_index]`` for one step at ``node``."""
    x = field.grid.node_point(node)
    a = m.actions[action_index]
    st = stencil_points(m, x, q, a, dt)
    cost = float(eval_cost(m, x, q, a))
    acc = 0.0
    for p, w in zip(st.points, st.weights):
        acc += w * float(interpolate(field, q, p))
    return cost * dt + math.exp(-m.discount * dt) * acc


def switch_branch(field: ValueField, m: Model, node: int, q: int):
    """Best instantaneous switch at ``node``: ``(value, target)`` or ``None``.

    Ties between targets go to the lowest mode index.
    """
    if m.num_modes == 1:
        return None
    best_v, best_q = math.inf, -1
    for qp in range(m.num_modes):
        if qp == q:
            continue
        v = float(field.values[qp, node]) + float(m.switch_cost[q, qp])
        if v < best_v:
            best_v, best_q = v, qp
    return best_v, best_q


def sl_update(
    field: ValueField, m: Model, node: int, q: int, dt: float
) -> tuple[float, Decision]:
    """One-step minimum over all continuous branches and the switch branch."""
    best_v, best_a = math.inf, 0
    for ai in range(len(m.actions)):
        v = continuous_branch(field, m, node, q, ai, dt)
        if v < best_v:
            best_v, best_a = v, ai
    decision = Decision.continuous(best_a)
    sw = switch_branch(field, m, node, q)
    if sw is not None and sw[0] < best_v:
        best_v = sw[0]
        decision = Decision.switch(sw[1])
    return best_v, decision


@dataclass(frozen=True)
class UpdateTable:
    """Precompiled update operator for one (model, grid, dt) triple.

    For mode q, action a, node i the continuous branch is
    ``cost_dt[q,a,i] + gamma * sum_k coef[q,a,i,k] * values[q, idx[q,a,i,k]]``.
    Rows for degenerate (zero diffusion) stencils are padded with
    zero-coefficient entries so every row has the same length.
    """

    idx: np.ndarray        # (Q, A, n, K) int64 corner node indices
    coef: np.ndarray       # (Q, A, n, K) float64 folded weights
    cost_dt: np.ndarray    # (Q, A, n) float64 running cost * dt
    gamma: float           # one-step discount factor exp(-discount*dt)
    switch_cost: np.ndarray  # (Q, Q), +inf diagonal
    dt: float

    @property
    def num_modes(self) -> int:
        return self.idx.shape[0]

    @property
    def num_actions(self) -> int:
        return self.idx.shape[1]

    @property
    def num_nodes(self) -> int:
        return self.idx.shape[2]


def build_update_table(m: Model, grid: Grid, dt: float) -> UpdateTable:
    if not dt > 0:
        raise NonpositiveDt(f"dt must be > 0, got {dt}")
    d, n = grid.dim, grid.num_nodes
    Q, A = m.num_modes, len(m.actions)
    ncorner = 1 << d
    K = 2 * d * ncorner
    idx = np.zeros((Q, A, n, K), dtype=np.int64)
    coef = np.zeros((Q, A, n, K), dtype=float)
    cost_dt = np.empty((Q, A, n), dtype=float)
    X = grid.nodes
    scale = math.sqrt(d * dt)
    for q in range(Q):
        for ai, a in enumerate(m.actions):
            f = eval_drift(m, X, q, a)
            sig = eval_diffusion(m, X, q, a)
            cost_dt[q, ai] = eval_cost(m, X, q, a) * dt
            base = X + dt * f
            degenerate = ~sig.reshape(n, -1).any(axis=1)
            for k in range(d):
                for s, sign in enumerate((1.0, -1.0)):
                    pts = base + sign * scale * sig[:, :, k]
                    ci, w = interpolation_weights(grid, project_to_box(grid, pts))
                    sl = slice((2 * k + s) * ncorner, (2 * k + s + 1) * ncorner)
                    idx[q, ai, :, sl] = ci
                    coef[q, ai, :, sl] = w / (2 * d)
            if degenerate.any():
                ci, w = interpolation_weights(grid, base[degenerate])
                idx[q, ai, degenerate] = 0
                coef[q, ai, degenerate] = 0.0
                idx[q, ai, degenerate, :ncorner] = ci
                coef[q, ai, degenerate, :ncorner] = w
    return UpdateTable(
        idx=idx,
        coef=coef,
        cost_dt=cost_dt,
        gamma=math.exp(-m.discount * dt),
        switch_cost=np.asarray(m.switch_cost, dtype=float),
        dt=dt,
    )
