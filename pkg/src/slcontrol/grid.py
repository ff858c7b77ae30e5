"""Rectangular tensor-product grids and node-valued fields.

The grid covers a box ``[lows, highs]`` with ``counts[k] >= 2`` nodes per
axis. Flat node indices are row-major over the multi-index (last axis
fastest), so ``np.ravel_multi_index`` / ``np.unravel_index`` with shape
``counts`` are the index maps. A :class:`ValueField` stores one scalar per
(mode, node), mode-major, which makes a single-mode sweep a contiguous
pass over memory.

Interpolation is multilinear over the cell containing the (clamped)
query point: order 1, weights nonnegative and summing to one, so the
interpolant is monotone and nonexpansive in the node values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._util import atomic_write_text, format_float17

__all__ = [
    "Grid",
    "ValueField",
    "build_grid",
    "flat_to_multi",
    "multi_to_flat",
    "project_to_box",
    "interpolation_weights",
    "interpolate",
    "save_value_field",
    "load_value_field",
    "DegenerateAxis",
    "OutOfRange",
]


class DegenerateAxis(ValueError):
    """Box axis with nonpositive extent or fewer than two nodes."""


class OutOfRange(IndexError):
    """Flat or multi index outside the grid."""


@dataclass(frozen=True)
class Grid:
    lows: np.ndarray
    highs: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        lows = np.asarray(self.lows, dtype=float).reshape(-1)
        highs = np.asarray(self.highs, dtype=float).reshape(-1)
        counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if not (lows.shape == highs.shape == counts.shape) or lows.size == 0:
            raise DegenerateAxis("lows, highs, counts must share a nonzero length")
        if np.any(counts < 2):
            raise DegenerateAxis(f"counts must be >= 2 per axis, got {counts}")
        if np.any(highs <= lows):
            raise DegenerateAxis("highs must exceed lows on every axis")
        for arr in (lows, highs, counts):
            arr.setflags(write=False)
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)
        object.__setattr__(self, "counts", counts)

    @property
    def dim(self) -> int:
        return self.lows.size

    @cached_property
    def spacings(self) -> np.ndarray:
        h = (self.highs - self.lows) / (self.counts - 1)
        h.setflags(write=False)
        return h

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.counts))

    @cached_property
    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (num_nodes, dim), flat-index order."""
        axes = [
            self.lows[k] + self.spacings[k] * np.arange(self.counts[k])
            for k in range(self.dim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=-1)
        pts.setflags(write=False)
        return pts

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        """Boolean mask over flat nodes, true on the box faces."""
        multi = np.stack(
            np.unravel_index(np.arange(self.num_nodes), tuple(self.counts)), axis=-1
        )
        mask = np.any((multi == 0) | (multi == self.counts - 1), axis=-1)
        mask.setflags(write=False)
        return mask

    def node_point(self, flat: int) -> np.ndarray:
        return self.lows + self.spacings * flat_to_multi(self, flat)


def build_grid(lows, highs, counts) -> Grid:
    return Grid(np.asarray(lows), np.asarray(highs), np.asarray(counts))


def flat_to_multi(grid: Grid, flat: int) -> np.ndarray:
    if not 0 <= flat < grid.num_nodes:
        raise OutOfRange(f"flat index {flat} not in [0, {grid.num_nodes})")
    return np.array(np.unravel_index(flat, tuple(grid.counts)), dtype=np.int64)

def multi_to_flat(grid: Grid, multi) -> int:
    multi = np.asarray(multi, dtype=np.int64)
    if multi.shape != (grid.dim,) or np.any(multi < 0) or np.any(multi >= grid.counts):
        raise OutOfRange(f"multi index {multi} not inside counts {grid.counts}")
    return int(np.ravel_multi_index(tuple(multi), tuple(grid.counts)))


def project_to_box(grid: Grid, x: np.ndarray) -> np.ndarray:
    """Componentwise clamp of ``x`` (shape (..., d)) into the box."""
    return np.clip(np.asarray(x, dtype=float), grid.lows, grid.highs)


def interpolation_weights(grid: Grid, x: np.ndarray):
    """Cell corners and barycentric weights for multilinear interpolation.

    ``x`` has shape (..., d); queries are clamped into the box first.
    Returns ``(corner_flat, weights)`` with shapes ``(..., 2**d)``. Weights
    are products of per-axis pairs ``(1-frac, frac)``: nonnegative,
    summing to one.
    """
    x = project_to_box(grid, x)
    t = (x - grid.lows) / grid.spacings
    i0 = np.floor(t).astype(np.int64)
    np.clip(i0, 0, grid.counts - 2, out=i0)
    frac = np.clip(t - i0, 0.0, 1.0)
    # rounding in (x - lows)/h can put an exact-node query a few ulps off
    # the node; snap so nodes reproduce stored values exactly
    frac[frac < 1e-12] = 0.0
    frac[frac > 1.0 - 1e-12] = 1.0

    d = grid.dim
    strides = np.ones(d, dtype=np.int64)
    for k in range(d - 2, -1, -1):
        strides[k] = strides[k + 1] * grid.counts[k + 1]
    base = (i0 * strides).sum(axis=-1)

    corner_flat = np.empty(x.shape[:-1] + (1 << d,), dtype=np.int64)
    weights = np.empty(x.shape[:-1] + (1 << d,), dtype=float)
    for c in range(1 << d):
        offset = 0
        w = np.ones(x.shape[:-1])
        for k in range(d):
            if (c >> (d - 1 - k)) & 1:
                offset += strides[k]
                w = w * frac[..., k]
            else:
                w = w * (1.0 - frac[..., k])
        corner_flat[..., c] = base + offset
        weights[..., c] = w
    return corner_flat, weights


@dataclass
class ValueField:
    """One scalar per (mode, node): ``values`` has shape (num_modes, num_nodes)."""

    grid: Grid
    num_modes: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        expect = (self.num_modes, self.grid.num_nodes)
        if v.shape != expect:
            raise ValueError(f"values shape {v.shape} != {expect}")
        if not np.all(np.isfinite(v)):
            raise ValueError("value field contains non-finite entries")
        self.values = np.ascontiguousarray(v)

    @classmethod
    def constant(cls, grid: Grid, num_modes: int, value: float = 0.0) -> "ValueField":
        return cls(grid, num_modes, np.full((num_modes, grid.num_nodes), float(value)))

    def copy(self) -> "ValueField":
        return ValueField(self.grid, self.num_modes, self.values.copy())


def interpolate(field: ValueField, q: int, x: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of mode ``q`` values at points ``x`` (..., d).

    Out-of-box queries are clamped, so every query is valid; at nodes the
    stored value is reproduced exactly.
    """
    corner_flat, weights = interpolation_weights(field.grid, x)
    vals = field.values[q][corner_flat]
    return np.einsum("...c,...c->...", weights, vals)


def _field_document(field: ValueField) -> str:
    g = field.grid
    head = json.dumps(
        {
            "grid": {
                "lows": list(map(float, g.lows)),
                "highs": list(map(float, g.highs)),
                "counts": [int(c) for c in g.counts],
            },
            "num_modes": int(field.num_modes),
        }
    )[:-1]
    body = ",".join(format_float17(v) for v in field.values.reshape(-1))
    return head + ', "values": [' + body + "]}"


def save_value_field(field: ValueField, path: str, meta: dict | None = None) -> None:
    """Persist as JSON with >= 17 significant digits per value.

    The decimal formatting round-trips float64 bit-exactly, so a load
    followed by a save reproduces the file byte for byte.
    """
    doc = _field_document(field)
    if meta is not None:
        doc = doc[:-1] + ', "meta": ' + json.dumps(meta, sort_keys=True) + "}"
    atomic_write_text(path, doc + "\n")


def load_value_field(path: str) -> ValueField:
    with open(path) as fh:
        doc = json.load(fh)
    grid = build_grid(doc["grid"]["lows"], doc["grid"]["highs"], doc["grid"]["counts"])
    num_modes = int(doc["num_modes"])
    values = np.array(doc["values"], dtype=float).reshape(num_modes, grid.num_nodes)
    return ValueField(grid, num_modes, values)
