"""Control problem description: dynamics, running cost, discount, modes.

A :class:`Model` bundles the continuous dynamics of each discrete mode
(drift and diffusion columns), the running cost, the discount rate, the
finite action set, and the mode-switching cost matrix. It is a passive
record of pure functions plus metadata; the solver and simulator consume
it without mutating it.

Conventions
-----------
* States are points in R^d, passed to the user maps as float arrays of
  shape ``(..., d)``. Maps should broadcast over leading axes when
  ``Model.vectorized`` is true (the default); otherwise the library calls
  them one point at a time.
* ``drift(x, q, a)`` returns an array broadcastable to ``(..., d)``.
* ``diffusion(x, q, a)`` returns an array broadcastable to
  ``(..., d, d)`` whose ``[..., :, k]`` slice is the k-th noise column.
* ``running_cost(x, q, a)`` returns a nonnegative array broadcastable to
  ``(...)``.
* Modes are integers ``0 .. num_modes-1``; actions are referenced by
  index into ``actions`` everywhere in the library, and only the user
  maps ever see the action values themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Model",
    "validate_model",
    "ModelValidationError",
    "EmptyActionSet",
    "NonpositiveDiscount",
    "NonpositiveSwitchCost",
    "EvaluationFailure",
]


class ModelValidationError(ValueError):
    """A model violates one of its structural invariants."""


class EmptyActionSet(ModelValidationError):
    pass


class NonpositiveDiscount(ModelValidationError):
    pass


class NonpositiveSwitchCost(ModelValidationError):
    def __init__(self, q_from: int, q_to: int, value: float):
        self.q_from, self.q_to, self.value = q_from, q_to, value
        super().__init__(
            f"switch cost K({q_from},{q_to}) = {value!r} must be >= kappa_min > 0"
        )


class EvaluationFailure(ModelValidationError):
    def __init__(self, which: str, probe, cause):
        self.which, self.probe, self.cause = which, probe, cause
        super().__init__(f"{which} failed at probe point {probe}: {cause}")


@dataclass(frozen=True)
class Model:
    """A discounted stochastic control problem on R^d with optional modes.

    ``switch_cost`` is a ``(num_modes, num_modes)`` matrix; the diagonal is
    forced to ``+inf`` (staying in a mode is never expressed as a
    self-switch). With ``num_modes == 1`` the switching machinery is inert.
    """

    dim: int
    num_modes: int
    drift: Callable
    diffusion: Callable
    running_cost: Callable
    discount: float
    actions: Sequence
    switch_cost: np.ndarray | None = None
    kappa_min: float = 1e-9
    vectorized: bool = True
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        if self.switch_cost is None:
            sc = np.full((self.num_modes, self.num_modes), np.inf)
        else:
            sc = np.array(self.switch_cost, dtype=float)
        if sc.shape == (self.num_modes, self.num_modes):
            np.fill_diagonal(sc, np.inf)
        sc.setflags(write=False)
        object.__setattr__(self, "switch_cost", sc)

    @property
    def num_actions(self) -> int:
        return len(self.actions)


def _eval_map(m: Model, which: str, x: np.ndarray, q: int, a) -> np.ndarray:
    """Evaluate one of the model maps at states ``x`` of shape (..., d)."""
    fn = getattr(m, which)
    if m.vectorized or x.ndim <= 1:
        return np.asarray(fn(x, q, a), dtype=float)
    flat = x.reshape(-1, m.dim)
    out = [np.asarray(fn(p, q, a), dtype=float) for p in flat]
    res = np.stack([np.broadcast_to(o, out[0].shape) for o in out])
    return res.reshape(x.shape[:-1] + out[0].shape)


def eval_drift(m: Model, x: np.ndarray, q: int, a) -> np.ndarray:
    """Drift f(x,q,a) materialized to shape ``x.shape``."""
    out = _eval_map(m, "drift", x, q, a)
    return np.broadcast_to(out, x.shape)


def eval_diffusion(m: Model, x: np.ndarray, q: int, a) -> np.ndarray:
    """Diffusion columns sigma(x,q,a) materialized to ``x.shape + (d,)``."""
    out = _eval_map(m, "diffusion", x, q, a)
    return np.broadcast_to(out, x.shape + (m.dim,))


def eval_cost(m: Model, x: np.ndarray, q: int, a) -> np.ndarray:
    """Running cost l(x,q,a) materialized to shape ``x.shape[:-1]``."""
    out = _eval_map(m, "running_cost", x, q, a)
    return np.broadcast_to(out, x.shape[:-1])


def validate_model(m: Model, probe: np.ndarray | None = None) -> None:
    """Check the Model invariants, raising on the first violation.

    ``probe`` is the state at which the three maps are test-evaluated for
    every (mode, action) pair; the solver passes the state-box center,
    standalone callers default to the origin. Validation is idempotent
    and has no side effects.
    """
    if m.dim < 1:
        raise ModelValidationError(f"dim must be >= 1, got {m.dim}")
    if m.num_modes < 1:
        raise ModelValidationError(f"num_modes must be >= 1, got {m.num_modes}")
    if not m.actions:
        raise EmptyActionSet("the action set is empty")
    if not (m.discount > 0):
        raise NonpositiveDiscount(f"discount must be > 0, got {m.discount!r}")
    if m.switch_cost.shape != (m.num_modes, m.num_modes):
        raise ModelValidationError(
            f"switch_cost shape {m.switch_cost.shape} != "
            f"({m.num_modes}, {m.num_modes})"
        )
    for q in range(m.num_modes):
        for qp in range(m.num_modes):
            if q != qp and not (m.switch_cost[q, qp] >= m.kappa_min):
                raise NonpositiveSwitchCost(q, qp, float(m.switch_cost[q, qp]))

    if probe is None:
        probe = np.zeros(m.dim)
    probe = np.asarray(probe, dtype=float).reshape(m.dim)
    for q in range(m.num_modes):
        for a in m.actions:
            for which, expect_shape in (
                ("drift", (m.dim,)),
                ("diffusion", (m.dim, m.dim)),
                ("running_cost", ()),
            ):
                try:
                    out = np.asarray(getattr(m, which)(probe, q, a), dtype=float)
                    out = np.broadcast_to(out, expect_shape)
                except Exception as exc:
                    raise EvaluationFailure(which, probe, exc) from exc
                if not np.all(np.isfinite(out)):
                    raise EvaluationFailure(which, probe, "non-finite output")
                if which == "running_cost" and out < 0:
                    raise EvaluationFailure(which, probe, f"negative cost {out}")
