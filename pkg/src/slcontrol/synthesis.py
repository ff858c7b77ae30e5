"""Feedback-controller synthesis and closed-loop validation.

A converged value field induces a feedback law in two flavors:

* ``Online()`` (recommended): at the current continuous state, re-run the
  one-step minimization against interpolated field values. Discrete
  actions cannot be interpolated, and re-minimizing at the true state
  markedly reduces chattering near decision boundaries.
* ``Tabular(policy)``: look up the stored argmin decision at the nearest
  grid node (ties toward the lower flat index).

The closed loop is integrated with Euler-Maruyama using true Gaussian
increments (not the solver's weak two-point stencil): per step the
controller is consulted, switches are applied instantly (paying the
discounted switch cost, re-deciding, at most num_modes-1 chained
switches before a continuous decision is forced), the running cost is
accumulated with the left-endpoint discount weight, and the state is
advanced and projected back into the box, mirroring the solver's
boundary treatment.

Monte Carlo evaluation runs trajectories k = 0..N-1 from seeds
``base_seed + k``. Every run is integrated by the same vectorized
engine, and all arithmetic is elementwise per run, so per-run costs are
bit-reproducible regardless of batch composition. Infinite-horizon
costs are truncated at the horizon; the report carries the explicit
tail bound ``exp(-discount*T) * max |field|`` instead of dropping it
silently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._util import atomic_write_text
from .bellman import (
    CONTINUOUS,
    SWITCH,
    Decision,
    UpdateTable,
    continuous_branch,
    stencil_points,
)
from .grid import Grid, ValueField, interpolate, project_to_box
from .model import Model, eval_cost, eval_diffusion, eval_drift
from .solver import SolverConfig

__all__ = [
    "Policy",
    "Online",
    "Tabular",
    "Trajectory",
    "SimReport",
    "extract_policy",
    "feedback_action",
    "simulate",
    "monte_carlo",
    "nearest_node",
    "save_policy",
    "load_policy",
    "write_trajectory_csv",
    "save_report",
    "NonpositiveStep",
]


class NonpositiveStep(ValueError):
    pass


@dataclass(frozen=True)
class Online:
    """Re-minimize at the continuous state using the interpolated field."""


@dataclass(frozen=True)
class Tabular:
    """Use the stored decision of the nearest grid node."""

    policy: "Policy"


@dataclass
class Policy:
    """Tabular argmin decisions per (mode, node): kind 0=continuous, 1=switch."""

    grid: Grid
    num_modes: int
    kinds: np.ndarray   # (Q, n) int8
    indices: np.ndarray  # (Q, n) int64

    def decision(self, q: int, node: int) -> Decision:
        kind = int(self.kinds[q, node])
        index = int(self.indices[q, node])
        return Decision(CONTINUOUS if kind == 0 else SWITCH, index)


@dataclass
class Trajectory:
    """One closed-loop run sampled at multiples of ``dt_sim``.

    ``states[i]`` and ``modes[i]`` are the state and mode seen by the
    controller at time ``times[i]``; ``decisions[i]`` is the decision
    chain taken there (possible switches followed by the executed
    continuous action); ``costs[i+1]`` is the discounted cost accumulated
    through step i, with ``costs[0] = 0``.
    """

    times: np.ndarray        # (n_steps + 1,)
    states: np.ndarray       # (n_steps + 1, d)
    modes: np.ndarray        # (n_steps + 1,)
    decisions: list          # n_steps entries, each a tuple of Decision
    costs: np.ndarray        # (n_steps + 1,) cumulative discounted cost
    seed: int

    @property
    def total_cost(self) -> float:
        return float(self.costs[-1])


@dataclass
class SimReport:
    n_runs: int
    costs: np.ndarray
    mean: float
    std_err: float
    horizon: float
    tail_bound: float
    base_seed: int


def extract_policy(
    field: ValueField,
    m: Model,
    grid: Grid,
    cfg: SolverConfig = SolverConfig(),
    table: UpdateTable | None = None,
) -> Policy:
    """Store the argmin decision of the one-step update at every (node, mode)."""
    from .bellman import build_update_table

    if table is None:
        table = build_update_table(m, grid, cfg.step_size(grid))
    out = np.empty_like(field.values)
    kinds = np.empty(field.values.shape, dtype=np.int8)
    indices = np.empty(field.values.shape, dtype=np.int64)
    no_pin = np.zeros(grid.num_nodes, dtype=bool)
    _kernels.apply_table(
        field.values, out, kinds, indices, table.idx, table.coef, table.cost_dt,
        table.gamma, table.switch_cost, no_pin,
    )
    return Policy(grid, m.num_modes, kinds, indices)


def nearest_node(grid: Grid, x: np.ndarray) -> int:
    """Flat index of the nearest node; exact midpoints round to the lower index."""
    x = project_to_box(grid, np.asarray(x, dtype=float).reshape(grid.dim))
    t = (x - grid.lows) / grid.spacings
    i0 = np.clip(np.floor(t).astype(np.int64), 0, grid.counts - 1)
    frac = t - i0
    i = np.where(frac > 0.5, np.minimum(i0 + 1, grid.counts - 1), i0)
    return int(np.ravel_multi_index(tuple(i), tuple(grid.counts)))


def _best_switch_at(field: ValueField, m: Model, x: np.ndarray, q: int):
    """Best switch candidate at a continuous point, or None for one mode."""
    if m.num_modes == 1:
        return None
    best_v, best_q = math.inf, -1
    for qp in range(m.num_modes):
        if qp == q:
            continue
        v = float(interpolate(field, qp, x)) + float(m.switch_cost[q, qp])
        if v < best_v:
            best_v, best_q = v, qp
    return best_v, best_q


def _online_decision(
    field: ValueField, m: Model, x: np.ndarray, q: int, dt: float,
    allow_switch: bool = True,
) -> tuple[float, Decision]:
    """One-step minimization at an arbitrary in-box point."""
    best_v, best_a = math.inf, 0
    for ai, a in enumerate(m.actions):
        st = stencil_points(m, x, q, a, dt)
        acc = 0.0
        for p, w in zip(st.points, st.weights):
            acc += w * float(interpolate(field, q, p))
        v = float(eval_cost(m, x, q, a)) * dt + math.exp(-m.discount * dt) * acc
        if v < best_v:
            best_v, best_a = v, ai
    decision = Decision.continuous(best_a)
    if allow_switch:
        sw = _best_switch_at(field, m, x, q)
        if sw is not None and sw[0] < best_v:
            best_v = sw[0]
            decision = Decision.switch(sw[1])
    return best_v, decision


def feedback_action(
    field: ValueField, m: Model, x: np.ndarray, q: int, lookup, dt: float
) -> Decision:
    """Controller decision at state (x, q) under the chosen lookup mode."""
    x = project_to_box(field.grid, np.asarray(x, dtype=float).reshape(m.dim))
    if isinstance(lookup, Tabular):
        return lookup.policy.decision(q, nearest_node(field.grid, x))
    _, decision = _online_decision(field, m, x, q, dt)
    return decision


# ---------------------------------------------------------------------------
# closed-loop engine

_STEP_BLOCK = 1024


def _grid_strides(grid: Grid) -> np.ndarray:
    d = grid.dim
    strides = np.ones(d, dtype=np.int64)
    for k in range(d - 2, -1, -1):
        strides[k] = strides[k + 1] * grid.counts[k + 1]
    return strides


def _decide_batch(
    field: ValueField, m: Model, table_dt: float, gamma: float,
    x: np.ndarray, q: np.ndarray, lookup, strides: np.ndarray,
    allow_switch: bool,
):
    """Decisions for a batch of states; also returns the executed-action
    dynamics gathered from the per-action model evaluations.

    Returns (kind, index, drift_exec, sigma_exec, cost_exec); the *_exec
    arrays are only meaningful where kind == 0.
    """
    g = field.grid
    M, d = x.shape
    kind = np.empty(M, dtype=np.int8)
    index = np.empty(M, dtype=np.int64)
    drift_exec = np.empty((M, d))
    sigma_exec = np.empty((M, d, d))
    cost_exec = np.empty(M)
    modes_present = (int(q[0]),) if m.num_modes == 1 else np.unique(q)

    if isinstance(lookup, Tabular):
        pol = lookup.policy
        nodes = _nearest_nodes_batch(g, x)
        for qv in modes_present:
            sel = np.nonzero(q == qv)[0]
            nd = nodes[sel]
            kd = pol.kinds[qv, nd]
            ix = pol.indices[qv, nd]
            if not allow_switch:
                forced = kd != 0
                if forced.any():
                    # fall back to the online continuous argmin for states
                    # that exhausted their switch budget
                    fsel = sel[forced]
                    _continuous_argmin_batch(
                        field, m, table_dt, gamma, x[fsel], int(qv), strides,
                        kind, index, drift_exec, sigma_exec, cost_exec, fsel,
                    )
                    sel, nd, kd, ix = sel[~forced], nd[~forced], kd[~forced], ix[~forced]
            kind[sel] = kd
            index[sel] = ix
            cont = sel[kd == 0]
            if cont.size:
                for ai in np.unique(pol.indices[qv, nodes[cont]]):
                    ssel = cont[pol.indices[qv, nodes[cont]] == ai]
                    a = m.actions[ai]
                    drift_exec[ssel] = eval_drift(m, x[ssel], int(qv), a)
                    sigma_exec[ssel] = eval_diffusion(m, x[ssel], int(qv), a)
                    cost_exec[ssel] = eval_cost(m, x[ssel], int(qv), a)
        return kind, index, drift_exec, sigma_exec, cost_exec

    for qv in modes_present:
        sel = np.nonzero(q == qv)[0]
        _continuous_argmin_batch(
            field, m, table_dt, gamma, x[sel], int(qv), strides,
            kind, index, drift_exec, sigma_exec, cost_exec, sel,
            allow_switch=allow_switch,
        )
    return kind, index, drift_exec, sigma_exec, cost_exec


def _continuous_argmin_batch(
    field, m, dt, gamma, xs, qv, strides,
    kind, index, drift_exec, sigma_exec, cost_exec, sel,
    allow_switch=False,
):
    """Online minimization for states ``xs`` all in mode ``qv``; writes the
    winning decision and its dynamics into the output slots ``sel``."""
    g = field.grid
    Ms, d = xs.shape
    A = len(m.actions)
    F = np.empty((A, Ms, d))
    S = np.empty((A, Ms, d, d))
    L = np.empty((A, Ms))
    for ai, a in enumerate(m.actions):
        F[ai] = eval_drift(m, xs, qv, a)
        S[ai] = eval_diffusion(m, xs, qv, a)
        L[ai] = eval_cost(m, xs, qv, a)
    if allow_switch and m.num_modes > 1:
        sw = np.stack(
            [
                interpolate(field, qp, xs) + m.switch_cost[qv, qp]
                for qp in range(m.num_modes)
            ]
        )
        sw_target = np.argmin(sw, axis=0)
        sw_val = sw[sw_target, np.arange(Ms)]
    else:
        sw_val = np.full(Ms, np.inf)
        sw_target = np.zeros(Ms, dtype=np.int64)
    out_val = np.empty(Ms)
    out_kind = np.empty(Ms, dtype=np.int8)
    out_index = np.empty(Ms, dtype=np.int64)
    _kernels.online_decide(
        xs, F, S, L, sw_val, sw_target, bool(allow_switch and m.num_modes > 1),
        dt, gamma, g.lows, g.highs, g.spacings, g.counts, strides,
        field.values[qv], out_val, out_kind, out_index,
    )
    kind[sel] = out_kind
    index[sel] = out_index
    cont = out_kind == 0
    rows = np.nonzero(cont)[0]
    drift_exec[sel[rows]] = F[out_index[rows], rows]
    sigma_exec[sel[rows]] = S[out_index[rows], rows]
    cost_exec[sel[rows]] = L[out_index[rows], rows]


def _nearest_nodes_batch(grid: Grid, x: np.ndarray) -> np.ndarray:
    t = (project_to_box(grid, x) - grid.lows) / grid.spacings
    i0 = np.clip(np.floor(t).astype(np.int64), 0, grid.counts - 1)
    frac = t - i0
    i = np.where(frac > 0.5, np.minimum(i0 + 1, grid.counts - 1), i0)
    strides = _grid_strides(grid)
    return (i * strides).sum(axis=-1)


def _run_batch(
    m: Model,
    field: ValueField,
    x0,
    q0: int,
    n_runs: int,
    horizon: float,
    dt_sim: float,
    base_seed: int,
    lookup,
    dt: float,
    record: int = 0,
):
    """Integrate ``n_runs`` independent closed-loop runs; returns
    (costs, trajectories-for-the-first-``record``-runs)."""
    if not dt_sim > 0:
        raise NonpositiveStep(f"dt_sim must be > 0, got {dt_sim}")
    if horizon < dt_sim:
        raise NonpositiveStep(f"horizon {horizon} must be >= dt_sim {dt_sim}")
    g = field.grid
    d, Q = m.dim, m.num_modes
    n_steps = int(round(horizon / dt_sim))
    strides = _grid_strides(g)
    gamma = math.exp(-m.discount * dt)

    x = np.tile(np.asarray(x0, dtype=float).reshape(d), (n_runs, 1))
    x = project_to_box(g, x)
    q = np.full(n_runs, q0, dtype=np.int64)
    cost = np.zeros(n_runs)
    disc = np.exp(-m.discount * dt_sim * np.arange(n_steps))
    sqdt = math.sqrt(dt_sim)

    rngs = [np.random.default_rng(base_seed + k) for k in range(n_runs)]

    rec = min(record, n_runs)
    if rec:
        r_states = np.empty((n_steps + 1, rec, d))
        r_modes = np.empty((n_steps + 1, rec), dtype=np.int64)
        r_costs = np.zeros((n_steps + 1, rec))
        r_decisions = [[] for _ in range(rec)]
        r_states[0] = x[:rec]
        r_modes[0] = q[:rec]

    step = 0
    while step < n_steps:
        block = min(_STEP_BLOCK, n_steps - step)
        noise = np.stack([r.standard_normal((block, d)) for r in rngs], axis=1)
        for b in range(block):
            i = step + b
            if rec:
                chain_dec = [[] for _ in range(rec)]
            kind = np.empty(n_runs, dtype=np.int8)
            index = np.empty(n_runs, dtype=np.int64)
            drift_x = np.empty((n_runs, d))
            sigma_x = np.empty((n_runs, d, d))
            cost_x = np.empty(n_runs)
            remaining = np.arange(n_runs)
            for chain in range(max(Q, 1)):
                allow = Q > 1 and chain < Q - 1
                kd, ix, fx, sx, lx = _decide_batch(
                    field, m, dt, gamma, x[remaining], q[remaining], lookup,
                    strides, allow_switch=allow,
                )
                if rec:
                    for r in range(rec):
                        pos = np.nonzero(remaining == r)[0]
                        if pos.size:
                            p = pos[0]
                            dk = CONTINUOUS if kd[p] == 0 else SWITCH
                            chain_dec[r].append(Decision(dk, int(ix[p])))
                switching = kd == 1
                settled = remaining[~switching]
                kind[settled] = 0
                index[settled] = ix[~switching]
                drift_x[settled] = fx[~switching]
                sigma_x[settled] = sx[~switching]
                cost_x[settled] = lx[~switching]
                if not switching.any():
                    break
                movers = remaining[switching]
                targets = ix[switching]
                cost[movers] += disc[i] * m.switch_cost[q[movers], targets]
                q[movers] = targets
                remaining = movers
            else:
                raise AssertionError("switch chain exceeded num_modes - 1")

            cost += disc[i] * cost_x * dt_sim
            x = x + drift_x * dt_sim + sqdt * np.einsum("mjk,mk->mj", sigma_x, noise[b])
            x = project_to_box(g, x)

            if rec:
                r_states[i + 1] = x[:rec]
                r_modes[i + 1] = q[:rec]
                r_costs[i + 1] = cost[:rec]
                for r in range(rec):
                    r_decisions[r].append(tuple(chain_dec[r]))
        step += block

    trajectories = []
    if rec:
        times = dt_sim * np.arange(n_steps + 1)
        for r in range(rec):
            trajectories.append(
                Trajectory(
                    times=times.copy(),
                    states=r_states[:, r].copy(),
                    modes=r_modes[:, r].copy(),
                    decisions=r_decisions[r],
                    costs=r_costs[:, r].copy(),
                    seed=base_seed + r,
                )
            )
    return cost, trajectories


def simulate(
    m: Model,
    field: ValueField,
    x0,
    q0: int,
    horizon: float,
    dt_sim: float,
    seed: int,
    lookup=Online(),
    dt: float | None = None,
) -> Trajectory:
    """One closed-loop Euler-Maruyama run; fully determined by ``seed``.

    ``dt`` is the controller's one-step horizon (the solver step); it
    defaults to the grid's minimum spacing, matching ``c_dt = 1``.
    """
    if dt is None:
        dt = float(field.grid.spacings.min())
    _, trajs = _run_batch(
        m, field, x0, q0, 1, horizon, dt_sim, seed, lookup, dt, record=1
    )
    return trajs[0]


def monte_carlo(
    m: Model,
    field: ValueField,
    x0,
    q0: int,
    n_runs: int,
    horizon: float,
    dt_sim: float,
    base_seed: int,
    lookup=Online(),
    dt: float | None = None,
) -> SimReport:
    """N independent runs from seeds base..base+N-1, aggregated.

    The mean discounted cost estimates the value at (x0, q0) up to the
    reported standard error, the horizon-truncation tail bound, and the
    discretization bias of the field itself.
    """
    if n_runs < 1:
        raise ValueError(f"n_runs must be >= 1, got {n_runs}")
    if dt is None:
        dt = float(field.grid.spacings.min())
    costs, _ = _run_batch(
        m, field, x0, q0, n_runs, horizon, dt_sim, base_seed, lookup, dt
    )
    mean = float(costs.mean())
    std_err = float(costs.std(ddof=1) / math.sqrt(n_runs)) if n_runs > 1 else 0.0
    tail = float(math.exp(-m.discount * horizon) * np.abs(field.values).max())
    return SimReport(
        n_runs=n_runs,
        costs=costs,
        mean=mean,
        std_err=std_err,
        horizon=horizon,
        tail_bound=tail,
        base_seed=base_seed,
    )


# ---------------------------------------------------------------------------
# persistence

def save_policy(policy: Policy, path: str, meta: dict | None = None) -> None:
    g = policy.grid
    doc = {
        "grid": {
            "lows": list(map(float, g.lows)),
            "highs": list(map(float, g.highs)),
            "counts": [int(c) for c in g.counts],
        },
        "num_modes": policy.num_modes,
        "decisions": [
            {"kind": CONTINUOUS if k == 0 else SWITCH, "index": int(ix)}
            for k, ix in zip(policy.kinds.reshape(-1), policy.indices.reshape(-1))
        ],
    }
    if meta is not None:
        doc["meta"] = meta
    atomic_write_text(path, json.dumps(doc) + "\n")


def load_policy(path: str) -> Policy:
    from .grid import build_grid

    with open(path) as fh:
        doc = json.load(fh)
    grid = build_grid(doc["grid"]["lows"], doc["grid"]["highs"], doc["grid"]["counts"])
    Q, n = int(doc["num_modes"]), grid.num_nodes
    kinds = np.array(
        [0 if d["kind"] == CONTINUOUS else 1 for d in doc["decisions"]], dtype=np.int8
    ).reshape(Q, n)
    indices = np.array([d["index"] for d in doc["decisions"]], dtype=np.int64).reshape(Q, n)
    return Policy(grid, Q, kinds, indices)


def write_trajectory_csv(traj: Trajectory, path: str) -> None:
    """One row per step: the state and mode the controller saw, its first
    decision there, and the cost accumulated through that step."""
    d = traj.states.shape[1]
    header = "t," + ",".join(f"x_{k + 1}" for k in range(d))
    header += ",q,decision_kind,decision_index,cost_so_far"
    lines = [header]
    n_steps = len(traj.decisions)
    for i in range(n_steps):
        first = traj.decisions[i][0]
        row = [repr(float(traj.times[i]))]
        row += [repr(float(v)) for v in traj.states[i]]
        row += [str(int(traj.modes[i])), first.kind, str(first.index)]
        row += [repr(float(traj.costs[i + 1]))]
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def save_report(report: SimReport, path: str, meta: dict | None = None) -> None:
    doc = {
        "n_runs": report.n_runs,
        "mean": report.mean,
        "std_err": report.std_err,
        "horizon": report.horizon,
        "tail_bound": report.tail_bound,
        "seeds": [report.base_seed, report.base_seed + report.n_runs - 1],
    }
    if meta is not None:
        doc["meta"] = meta
    atomic_write_text(path, json.dumps(doc) + "\n")
