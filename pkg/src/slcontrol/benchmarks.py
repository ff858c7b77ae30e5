"""Canonical problems with independent oracles, plus a refinement harness.

Three registered benchmarks:

* ``constant_cost`` — zero dynamics, constant running cost c. The scheme
  is exact at any resolution: every node converges to
  ``c*dt / (1 - exp(-discount*dt))``, the geometric series of one-step
  costs.
* ``lq1d`` — scalar linear-quadratic regulator: dx = a dt + sigma dW,
  cost x^2 + r_ctl a^2, discounted at ``lam``. The value function is
  ``V(x) = P x^2 + sigma^2 P / lam`` with P the positive root of
  ``P^2 / r_ctl + lam P - 1 = 0``, and the optimal feedback is
  ``a*(x) = -P x / r_ctl``; both follow from substituting the quadratic
  ansatz into the stationary dynamic-programming equation.
* ``two_mode_switch`` — two modes with zero dynamics and constant costs
  c_high > c_low, symmetric switch cost k_sw. The discrete fixed point
  is known in closed form per mode, which exercises the switch branch
  end to end.

``convergence_study`` solves a benchmark on successively halved meshes
(dt tied to h) and reports sup errors against the oracle on the inner
half of the box, where boundary projection does not pollute the
comparison.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from ._util import atomic_write_text
from .grid import Grid, build_grid
from .model import Model
from .solver import SolverConfig, solve

__all__ = [
    "LQParams",
    "lq1d",
    "lq_gain",
    "lq_default_grid",
    "TwoModeParams",
    "two_mode_switch",
    "two_mode_fixed_point",
    "ConstantCostParams",
    "constant_cost",
    "ConvergenceRow",
    "convergence_study",
    "write_study_csv",
    "inner_half_box_mask",
    "refine_counts",
    "REGISTRY",
    "make_benchmark",
    "Benchmark",
]


# ---------------------------------------------------------------------------
# linear-quadratic benchmark


@dataclass(frozen=True)
class LQParams:
    sigma: float = 0.5
    r_ctl: float = 1.0
    lam: float = 1.0
    box_radius: float = 2.0
    action_count: int = 33
    grid_count: int = 129

    def __post_init__(self):
        if not (self.r_ctl > 0 and self.lam > 0):
            raise ValueError("r_ctl and lam must be positive")
        if self.sigma < 0 or self.box_radius <= 0:
            raise ValueError("sigma must be >= 0 and box_radius > 0")
        if self.action_count < 2 or self.grid_count < 2:
            raise ValueError("action_count and grid_count must be >= 2")


def lq_gain(p: LQParams) -> float:
    """Positive root P of P^2/r_ctl + lam*P - 1 = 0."""
    return 0.5 * p.r_ctl * (-p.lam + math.sqrt(p.lam * p.lam + 4.0 / p.r_ctl))


def lq1d(p: LQParams):
    """Scalar LQ model plus its analytic value map.

    The action grid spans [-a_max, a_max] with a_max = ceil(radius * P /
    r_ctl), which covers the optimal feedback -P x / r_ctl over the box.
    The oracle callable evaluates the analytic value at points of shape
    (..., 1) and ignores mode and dt.
    """
    P = lq_gain(p)
    c_off = p.sigma**2 * P / p.lam
    a_max = math.ceil(p.box_radius * P / p.r_ctl)
    actions = tuple(np.linspace(-a_max, a_max, p.action_count))
    sigma = p.sigma

    def drift(x, q, a):
        return np.full_like(x, a)

    def diffusion(x, q, a):
        return np.broadcast_to(sigma, x.shape + (1,))

    def running_cost(x, q, a):
        return x[..., 0] ** 2 + p.r_ctl * a * a

    model = Model(
        dim=1,
        num_modes=1,
        drift=drift,
        diffusion=diffusion,
        running_cost=running_cost,
        discount=p.lam,
        actions=actions,
        name="lq1d",
    )

    def oracle(points, q=0, dt=None):
        points = np.asarray(points, dtype=float)
        return P * points[..., 0] ** 2 + c_off

    return model, oracle


def lq_default_grid(p: LQParams) -> Grid:
    return build_grid([-p.box_radius], [p.box_radius], [p.grid_count])


# ---------------------------------------------------------------------------
# two-mode switching benchmark


@dataclass(frozen=True)
class TwoModeParams:
    c_high: float = 10.0
    c_low: float = 0.0
    k_sw: float = 0.01
    lam: float = 1.0

    def __post_init__(self):
        if self.c_low > self.c_high:
            raise ValueError("c_high must be >= c_low")
        if self.k_sw <= 0 or self.lam <= 0:
            raise ValueError("k_sw and lam must be positive")


def two_mode_switch(p: TwoModeParams = TwoModeParams()) -> Model:
    """Two modes, zero dynamics, constant per-mode costs, symmetric switch cost."""
    costs = (p.c_high, p.c_low)

    def drift(x, q, a):
        return np.zeros_like(x)

    def diffusion(x, q, a):
        return np.zeros(x.shape + (1,))

    def running_cost(x, q, a):
        return np.full(x.shape[:-1], costs[q])

    return Model(
        dim=1,
        num_modes=2,
        drift=drift,
        diffusion=diffusion,
        running_cost=running_cost,
        discount=p.lam,
        actions=(0.0,),
        switch_cost=np.array([[np.inf, p.k_sw], [p.k_sw, np.inf]]),
        name="two_mode_switch",
    )


def two_mode_fixed_point(p: TwoModeParams, dt: float) -> tuple[float, float]:
    """Exact discrete fixed point (V_mode0, V_mode1) of the scheme.

    The cheap mode holds forever; the expensive mode either holds forever
    or pays k_sw once to land on the cheap value.
    """
    g = math.exp(-p.lam * dt)
    v_low = p.c_low * dt / (1.0 - g)
    v_high = min(p.c_high * dt / (1.0 - g), v_low + p.k_sw)
    return v_high, v_low


# ---------------------------------------------------------------------------
# constant-cost benchmark


@dataclass(frozen=True)
class ConstantCostParams:
    c: float = 2.0
    lam: float = 1.0


def constant_cost(p: ConstantCostParams = ConstantCostParams()):
    """Zero dynamics, constant running cost; exact at any resolution."""

    def drift(x, q, a):
        return np.zeros_like(x)

    def diffusion(x, q, a):
        return np.zeros(x.shape + (1,))

    def running_cost(x, q, a):
        return np.full(x.shape[:-1], p.c)

    model = Model(
        dim=1,
        num_modes=1,
        drift=drift,
        diffusion=diffusion,
        running_cost=running_cost,
        discount=p.lam,
        actions=(0.0,),
        name="constant_cost",
    )

    def oracle(points, q=0, dt=None):
        if dt is None:
            raise ValueError("constant-cost oracle needs the solver dt")
        g = math.exp(-p.lam * dt)
        points = np.asarray(points, dtype=float)
        return np.full(points.shape[:-1], p.c * dt / (1.0 - g))

    return model, oracle


# ---------------------------------------------------------------------------
# refinement study


@dataclass
class ConvergenceRow:
    level: int
    counts: tuple
    h: float
    dt: float
    sup_error: float
    order: float  # log2(err_prev / err); nan on the first level
    sweeps: int
    wall_ms: float


def inner_half_box_mask(grid: Grid) -> np.ndarray:
    """Nodes within half the box half-width of the center, per axis."""
    center = 0.5 * (grid.lows + grid.highs)
    half = 0.25 * (grid.highs - grid.lows)
    return np.all(np.abs(grid.nodes - center) <= half + 1e-12, axis=1)


def refine_counts(counts) -> np.ndarray:
    """Halve the mesh width: n -> 2(n-1)+1, so 65 -> 129 -> 257."""
    counts = np.asarray(counts, dtype=np.int64)
    return 2 * (counts - 1) + 1


def convergence_study(
    make_level,
    oracle,
    levels: int,
    cfg: SolverConfig = SolverConfig(),
) -> list[ConvergenceRow]:
    """Solve at ``levels`` successive refinements and compare to the oracle.

    ``make_level(level)`` returns the (model, grid) pair for that level;
    implementations double the resolution (and, where it matters, the
    action count) per level. ``oracle(points, q, dt)`` evaluates the
    reference value. Errors are sup norms over the inner half box across
    all modes.
    """
    if levels < 2:
        raise ValueError("a study needs at least 2 levels")
    rows: list[ConvergenceRow] = []
    prev_err = None
    for level in range(levels):
        model, grid = make_level(level)
        dt = cfg.step_size(grid)
        t0 = time.perf_counter()
        result = solve(model, grid, cfg)
        wall_ms = 1e3 * (time.perf_counter() - t0)
        mask = inner_half_box_mask(grid)
        pts = grid.nodes[mask]
        err = 0.0
        for q in range(model.num_modes):
            ref = oracle(pts, q, dt)
            err = max(err, float(np.abs(result.field.values[q][mask] - ref).max()))
        order = math.nan if prev_err is None else math.log2(prev_err / err)
        rows.append(
            ConvergenceRow(
                level=level,
                counts=tuple(int(c) for c in grid.counts),
                h=float(grid.spacings.min()),
                dt=dt,
                sup_error=err,
                order=order,
                sweeps=result.stats.sweeps,
                wall_ms=wall_ms,
            )
        )
        prev_err = err
    return rows


def write_study_csv(rows: list[ConvergenceRow], path: str) -> None:
    lines = ["level,counts,h,dt,sup_error,order,sweeps,wall_ms"]
    for r in rows:
        counts = "x".join(str(c) for c in r.counts)
        order = "" if math.isnan(r.order) else repr(r.order)
        lines.append(
            f"{r.level},{counts},{r.h!r},{r.dt!r},{r.sup_error!r},"
            f"{order},{r.sweeps},{r.wall_ms!r}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# registry used by the command-line front end


@dataclass
class Benchmark:
    model: Model
    default_grid: Grid
    oracle: object  # callable (points, q, dt) -> values, or None
    make_level: object  # callable (level) -> (model, grid), or None


def _make_lq(params: dict) -> Benchmark:
    p = LQParams(**params)
    model, oracle = lq1d(p)

    def make_level(level):
        q = replace(
            p,
            grid_count=int((p.grid_count - 1) * 2**level + 1),
            action_count=int((p.action_count - 1) * 2**level + 1),
        )
        mdl, _ = lq1d(q)
        return mdl, lq_default_grid(q)

    return Benchmark(model, lq_default_grid(p), oracle, make_level)


def _make_constant(params: dict) -> Benchmark:
    p = ConstantCostParams(**params)
    model, oracle = constant_cost(p)
    grid = build_grid([0.0], [1.0], [9])

    def make_level(level):
        counts = np.asarray([9], dtype=np.int64)
        for _ in range(level):
            counts = refine_counts(counts)
        return model, build_grid([0.0], [1.0], counts)

    return Benchmark(model, grid, oracle, make_level)


def _make_two_mode(params: dict) -> Benchmark:
    p = TwoModeParams(**params)
    model = two_mode_switch(p)
    grid = build_grid([0.0], [1.0], [5])

    def oracle(points, q, dt):
        v_high, v_low = two_mode_fixed_point(p, dt)
        points = np.asarray(points, dtype=float)
        return np.full(points.shape[:-1], v_high if q == 0 else v_low)

    def make_level(level):
        counts = np.asarray([5], dtype=np.int64)
        for _ in range(level):
            counts = refine_counts(counts)
        return model, build_grid([0.0], [1.0], counts)

    return Benchmark(model, grid, oracle, make_level)


REGISTRY = {
    "lq1d": _make_lq,
    "constant_cost": _make_constant,
    "two_mode_switch": _make_two_mode,
}


def make_benchmark(name: str, params: dict | None = None) -> Benchmark:
    if name not in REGISTRY:
        raise KeyError(
            f"unknown benchmark {name!r}; registered: {sorted(REGISTRY)}"
        )
    return REGISTRY[name](dict(params or {}))
