"""Hot numerical loops: sweep kernels and online decision evaluation.

Every kernel exists twice: a plain numpy reference version (suffix
``_np``) and, when numba imports cleanly, a jitted version bound to the
public name. Set ``SLCONTROL_DISABLE_NUMBA=1`` to force the numpy path;
results agree to floating-point roundoff either way.

Sweep kernels operate on the raw arrays of an UpdateTable: for mode q,
action a, node i the continuous branch value is
``cost_dt[q,a,i] + gamma * sum_k coef[q,a,i,k] * values[q, idx[q,a,i,k]]``
and the switch branch is ``min_{q'!=q} values[q',i] + switch_cost[q,q']``.
Tie-breaking is by strict ``<``: first (lowest-index) action wins, and a
switch replaces the best continuous branch only when strictly smaller.
Decision encoding: kind 0 = continuous (index = action), kind 1 = switch
(index = target mode).

The ``branch_min_*`` kernels evaluate one action's continuous branch at
a batch of arbitrary (non-node) states and fold it into running
best-so-far buffers, capturing the winning action's drift, diffusion and
cost on the fly so the simulator never re-evaluates the model maps. The
``F``/``S``/``L`` inputs may be broadcast (stride-0) views.
"""

from __future__ import annotations

import math
import os

import numpy as np

HAVE_NUMBA = False
if not os.environ.get("SLCONTROL_DISABLE_NUMBA"):
    try:
        from numba import njit, set_num_threads as _set_num_threads

        HAVE_NUMBA = True
    except ImportError:
        pass


def set_num_threads(n: int) -> None:
    if HAVE_NUMBA and n >= 1:
        try:
            _set_num_threads(n)
        except ValueError:
            pass


# ---------------------------------------------------------------------------
# numpy reference implementations


def gs_sweep_np(values, order, idx, coef, cost_dt, gamma, switch_cost, pinned):
    """In-place Gauss-Seidel pass over ``order``; returns the sup change."""
    Q, n = values.shape
    max_change = 0.0
    for c in order:
        q, i = divmod(int(c), n)
        if pinned[i]:
            continue
        cont = cost_dt[q, :, i] + gamma * (
            coef[q, :, i, :] * values[q][idx[q, :, i, :]]
        ).sum(axis=1)
        best = float(cont.min())
        if Q > 1:
            best_sw = float((values[:, i] + switch_cost[q, :]).min())
            if best_sw < best:
                best = best_sw
        change = abs(best - values[q, i])
        if change > max_change:
            max_change = change
        values[q, i] = best
    return max_change


def apply_table_np(values, out, kind, index, idx, coef, cost_dt, gamma, switch_cost, pinned):
    """Full operator application against read-only ``values`` (Jacobi form).

    Writes updated values into ``out`` and the argmin decision into
    ``kind``/``index``. Pinned nodes are copied through with kind -1.
    """
    Q, n = values.shape
    for q in range(Q):
        cont = cost_dt[q] + gamma * np.einsum(
            "ank,ank->an", coef[q], values[q][idx[q]]
        )
        best_a = np.argmin(cont, axis=0)
        best = cont[best_a, np.arange(n)]
        kind[q] = 0
        index[q] = best_a
        if Q > 1:
            sw = values + switch_cost[q][:, None]
            sw_target = np.argmin(sw, axis=0)
            sw_best = sw[sw_target, np.arange(n)]
            take = sw_best < best
            best = np.where(take, sw_best, best)
            kind[q][take] = 1
            index[q][take] = sw_target[take]
        out[q] = best
    if pinned.any():
        out[:, pinned] = values[:, pinned]
        kind[:, pinned] = -1
        index[:, pinned] = 0


def _interp_flat_np(pts, lows, highs, spacings, counts, strides, field_q):
    """Multilinear interpolation of flat node values at ``pts`` (..., d)."""
    t = (np.clip(pts, lows, highs) - lows) / spacings
    i0 = np.floor(t).astype(np.int64)
    np.clip(i0, 0, counts - 2, out=i0)
    frac = np.clip(t - i0, 0.0, 1.0)
    frac[frac < 1e-12] = 0.0
    frac[frac > 1.0 - 1e-12] = 1.0
    d = lows.size
    out = np.zeros(pts.shape[:-1])
    base = (i0 * strides).sum(axis=-1)
    for c in range(1 << d):
        offset = 0
        w = np.ones(pts.shape[:-1])
        for k in range(d):
            if (c >> (d - 1 - k)) & 1:
                offset += strides[k]
                w = w * frac[..., k]
            else:
                w = w * (1.0 - frac[..., k])
        out += w * field_q[base + offset]
    return out


def branch_min_1d_np(
    x, F, S, L, a_index, dt, gamma, low, high, inv_h, n_nodes, field_q,
    best_val, best_idx, drift_exec, sigma_exec, cost_exec,
):
    """One action's continuous branch at 1-d states ``x`` (M,), folded into
    the running minimum; winning rows capture (F, S, L)."""

    def interp(p):
        t = (np.clip(p, low, high) - low) * inv_h
        i0 = np.floor(t).astype(np.int64)
        np.clip(i0, 0, n_nodes - 2, out=i0)
        frac = np.clip(t - i0, 0.0, 1.0)
        frac[frac < 1e-12] = 0.0
        frac[frac > 1.0 - 1e-12] = 1.0
        return (1.0 - frac) * field_q[i0] + frac * field_q[i0 + 1]

    base = x + dt * F
    scale = math.sqrt(dt)
    plus = interp(base + scale * S)
    minus = interp(base - scale * S)
    acc = np.where(S == 0.0, interp(base), 0.5 * (plus + minus))
    v = L * dt + gamma * acc
    upd = v < best_val
    best_val[upd] = v[upd]
    best_idx[upd] = a_index
    drift_exec[upd] = np.broadcast_to(F, x.shape)[upd]
    sigma_exec[upd] = np.broadcast_to(S, x.shape)[upd]
    cost_exec[upd] = np.broadcast_to(L, x.shape)[upd]


def branch_min_nd_np(
    x, F, S, L, a_index, dt, gamma, lows, highs, spacings, counts, strides, field_q,
    best_val, best_idx, drift_exec, sigma_exec, cost_exec,
):
    """Generic-dimension counterpart of :func:`branch_min_1d_np`;
    ``x`` (M, d), ``F`` (M, d), ``S`` (M, d, d), ``L`` (M,)."""
    M, d = x.shape
    base = x + dt * F
    scale = math.sqrt(d * dt)
    acc = np.zeros(M)
    for k in range(d):
        acc += _interp_flat_np(base + scale * S[:, :, k], lows, highs, spacings, counts, strides, field_q)
        acc += _interp_flat_np(base - scale * S[:, :, k], lows, highs, spacings, counts, strides, field_q)
    acc /= 2 * d
    degenerate = ~S.reshape(M, -1).any(axis=1)
    if degenerate.any():
        single = _interp_flat_np(base[degenerate], lows, highs, spacings, counts, strides, field_q)
        acc[degenerate] = single
    v = L * dt + gamma * acc
    upd = v < best_val
    best_val[upd] = v[upd]
    best_idx[upd] = a_index
    drift_exec[upd] = np.broadcast_to(F, (M, d))[upd]
    sigma_exec[upd] = np.broadcast_to(S, (M, d, d))[upd]
    cost_exec[upd] = np.broadcast_to(L, (M,))[upd]


# ---------------------------------------------------------------------------
# numba versions

if HAVE_NUMBA:

    @njit(cache=True)
    def _gs_sweep_nb(values, order, idx, coef, cost_dt, gamma, switch_cost, pinned):
        Q, n = values.shape
        A, K = idx.shape[1], idx.shape[3]
        max_change = 0.0
        for m in range(order.size):
            c = order[m]
            q = c // n
            i = c - q * n
            if pinned[i]:
                continue
            best = np.inf
            for a in range(A):
                acc = 0.0
                for k in range(K):
                    acc += coef[q, a, i, k] * values[q, idx[q, a, i, k]]
                v = cost_dt[q, a, i] + gamma * acc
                if v < best:
                    best = v
            if Q > 1:
                for qp in range(Q):
                    if qp != q:
                        sv = values[qp, i] + switch_cost[q, qp]
                        if sv < best:
                            best = sv
            change = abs(best - values[q, i])
            if change > max_change:
                max_change = change
            values[q, i] = best
        return max_change

    @njit(cache=True)
    def _apply_table_nb(values, out, kind, index, idx, coef, cost_dt, gamma, switch_cost, pinned):
        Q, n = values.shape
        A, K = idx.shape[1], idx.shape[3]
        for i in range(n):
            if pinned[i]:
                for q in range(Q):
                    out[q, i] = values[q, i]
                    kind[q, i] = -1
                    index[q, i] = 0
                continue
            for q in range(Q):
                best = np.inf
                best_a = 0
                for a in range(A):
                    acc = 0.0
                    for k in range(K):
                        acc += coef[q, a, i, k] * values[q, idx[q, a, i, k]]
                    v = cost_dt[q, a, i] + gamma * acc
                    if v < best:
                        best = v
                        best_a = a
                kd = 0
                ix = best_a
                if Q > 1:
                    for qp in range(Q):
                        if qp != q:
                            sv = values[qp, i] + switch_cost[q, qp]
                            if sv < best:
                                best = sv
                                kd = 1
                                ix = qp
                out[q, i] = best
                kind[q, i] = kd
                index[q, i] = ix

    @njit(cache=True)
    def _branch_min_1d_nb(
        x, F, S, L, a_index, dt, gamma, low, high, inv_h, n_nodes, field_q,
        best_val, best_idx, drift_exec, sigma_exec, cost_exec,
    ):
        M = x.shape[0]
        scale = np.sqrt(dt)
        nm2 = n_nodes - 2
        for i in range(M):
            f = F[i]
            s = S[i]
            base = x[i] + dt * f
            if s == 0.0:
                p = base
                if p < low:
                    p = low
                elif p > high:
                    p = high
                t = (p - low) * inv_h
                i0 = int(t)
                if i0 > nm2:
                    i0 = nm2
                fr = t - i0
                if fr < 1e-12:
                    fr = 0.0
                elif fr > 1.0 - 1e-12:
                    fr = 1.0
                acc = (1.0 - fr) * field_q[i0] + fr * field_q[i0 + 1]
            else:
                off = scale * s
                acc = 0.0
                for sgn in range(2):
                    p = base + off if sgn == 0 else base - off
                    if p < low:
                        p = low
                    elif p > high:
                        p = high
                    t = (p - low) * inv_h
                    i0 = int(t)
                    if i0 > nm2:
                        i0 = nm2
                    fr = t - i0
                    if fr < 1e-12:
                        fr = 0.0
                    elif fr > 1.0 - 1e-12:
                        fr = 1.0
                    acc += (1.0 - fr) * field_q[i0] + fr * field_q[i0 + 1]
                acc *= 0.5
            v = L[i] * dt + gamma * acc
            if v < best_val[i]:
                best_val[i] = v
                best_idx[i] = a_index
                drift_exec[i] = f
                sigma_exec[i] = s
                cost_exec[i] = L[i]

    def gs_sweep(values, order, idx, coef, cost_dt, gamma, switch_cost, pinned):
        return _gs_sweep_nb(values, order, idx, coef, cost_dt, gamma, switch_cost, pinned)

    def apply_table(values, out, kind, index, idx, coef, cost_dt, gamma, switch_cost, pinned):
        _apply_table_nb(values, out, kind, index, idx, coef, cost_dt, gamma, switch_cost, pinned)

    def branch_min_1d(
        x, F, S, L, a_index, dt, gamma, low, high, inv_h, n_nodes, field_q,
        best_val, best_idx, drift_exec, sigma_exec, cost_exec,
    ):
        _branch_min_1d_nb(
            x, F, S, L, a_index, dt, gamma, low, high, inv_h, n_nodes, field_q,
            best_val, best_idx, drift_exec, sigma_exec, cost_exec,
        )

else:
    gs_sweep = gs_sweep_np

    def apply_table(values, out, kind, index, idx, coef, cost_dt, gamma, switch_cost, pinned):
        apply_table_np(values, out, kind, index, idx, coef, cost_dt, gamma, switch_cost, pinned)

    branch_min_1d = branch_min_1d_np

branch_min_nd = branch_min_nd_np
