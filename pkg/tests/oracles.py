"""Independent reference implementations used only to check the package.

Each oracle deliberately takes a different route than the code it validates:
Dykstra alternating projections instead of the closed-form case split, central
finite differences instead of the analytic gradient, and a dense vectorized
saddle-point iteration instead of the per-DER update loop.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from vppcosim.dispatch import ControlParams, DerState, DualState
from vppcosim.feeder import (
    FeederGraph,
    SensitivityModel,
    compute_net_injections,
    evaluate_feeder_head,
    evaluate_voltages,
)


def dykstra_project(
    points: np.ndarray,
    p_avail: np.ndarray | float,
    s_rating: np.ndarray | float,
    max_iter: int = 20000,
    tol: float = 1e-13,
) -> np.ndarray:
    """Dykstra alternating projections onto box-intersect-disc, vectorized.

    points: (n, 2) array of (p, q). Returns the (n, 2) projections.
    """
    x = np.asarray(points, dtype=float).copy()
    p_avail = np.broadcast_to(np.asarray(p_avail, dtype=float), x.shape[0]).copy()
    s_rating = np.broadcast_to(np.asarray(s_rating, dtype=float), x.shape[0]).copy()
    p_ub = np.minimum(p_avail, s_rating)
    # drop the upper box face where the disc already implies it (p_ub = s);
    # the intersection is unchanged and the tangential slowdown disappears
    p_ub = np.where(p_ub >= s_rating * (1.0 - 1e-12), np.inf, p_ub)

    inc_box = np.zeros_like(x)
    inc_disc = np.zeros_like(x)
    for it in range(max_iter):
        y = x + inc_box
        box = y.copy()
        box[:, 0] = np.clip(box[:, 0], 0.0, p_ub)
        inc_box = y - box

        z = box + inc_disc
        norm = np.hypot(z[:, 0], z[:, 1])
        scale = np.where(norm > s_rating, s_rating / np.maximum(norm, 1e-300), 1.0)
        disc = z * scale[:, None]
        inc_disc = z - disc

        gap = np.max(np.abs(disc - box))
        x = disc
        if gap < tol and it > 5:
            return x
    raise AssertionError(f"Dykstra did not converge (residual gap {gap:.2e})")


def lagrangian_value(
    feeder: FeederGraph,
    model: SensitivityModel,
    ders: list[DerState],
    duals: DualState,
    params: ControlParams,
    p0_set: float,
) -> float:
    """Regularized Lagrangian assembled term by term from its definition."""
    setpoints = {d.bus: (d.p_set, d.q_set) for d in ders}
    inj = compute_net_injections(feeder, setpoints)
    v = evaluate_voltages(model, inj)
    p0, _ = evaluate_feeder_head(model, inj)
    v_mon = v[[b - 1 for b in params.monitored_buses]]

    val = 0.0
    for d in ders:
        val += d.cost_p * (d.p_avail - d.p_set) ** 2 + d.cost_q * d.q_set**2
        val += params.primal_reg / 2.0 * (d.p_set**2 + d.q_set**2)
    val += float(duals.v_lo @ (params.v_min - v_mon))
    val += float(duals.v_hi @ (v_mon - params.v_max))
    val += duals.track_hi * (p0 - p0_set - params.tracking_band)
    val += duals.track_lo * (p0_set - p0 - params.tracking_band)
    dual_sq = (
        float(duals.v_lo @ duals.v_lo)
        + float(duals.v_hi @ duals.v_hi)
        + duals.track_hi**2
        + duals.track_lo**2
    )
    val -= params.dual_reg / 2.0 * dual_sq
    return val


def fd_gradient(
    feeder: FeederGraph,
    model: SensitivityModel,
    ders: list[DerState],
    which: int,
    duals: DualState,
    params: ControlParams,
    p0_set: float,
    h: float = 1e-5,
) -> tuple[float, float]:
    """Central finite difference of the Lagrangian in DER `which`'s (P, Q)."""

    def value(dp: float, dq: float) -> float:
        bumped = list(ders)
        d = ders[which]
        bumped[which] = replace(d, p_set=d.p_set + dp, q_set=d.q_set + dq)
        return lagrangian_value(feeder, model, bumped, duals, params, p0_set)

    g_p = (value(h, 0.0) - value(-h, 0.0)) / (2.0 * h)
    g_q = (value(0.0, h) - value(0.0, -h)) / (2.0 * h)
    return g_p, g_q


def dense_saddle_oracle(
    feeder: FeederGraph,
    model: SensitivityModel,
    der_buses: list[int],
    p_avail: np.ndarray,
    s_rating: np.ndarray,
    params: ControlParams,
    p0_set: float,
    cost_p: float,
    cost_q: float,
    iters: int = 60000,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projected primal-dual iteration to the saddle point.

    Single dense code path over all DERs at once; used to confirm that the
    per-DER update loop settles at the same fixed point.
    """
    cols = np.array([b - 1 for b in der_buses])
    rows = np.array([b - 1 for b in params.monitored_buses])
    a = params.step_size
    load_p, load_q = feeder.load_vectors()

    p = np.zeros(len(cols))
    q = np.zeros(len(cols))
    v_lo = np.zeros(len(rows))
    v_hi = np.zeros(len(rows))
    t_hi = 0.0
    t_lo = 0.0
    for _ in range(iters):
        inj_p = -load_p.copy()
        inj_q = -load_q.copy()
        inj_p[cols] += p
        inj_q[cols] += q
        v = (model.dv_dp @ inj_p + model.dv_dq @ inj_q + model.v_base)[rows]
        p0 = float(model.dhead_dp[0] @ inj_p + model.dhead_dq[0] @ inj_q
                   + model.head_base[0])

        v_lo = np.maximum(0.0, v_lo + a * (params.v_min - v - params.dual_reg * v_lo))
        v_hi = np.maximum(0.0, v_hi + a * (v - params.v_max - params.dual_reg * v_hi))
        t_hi = max(0.0, t_hi + a * (p0 - p0_set - params.tracking_band
                                    - params.dual_reg * t_hi))
        t_lo = max(0.0, t_lo + a * (p0_set - p0 - params.tracking_band
                                    - params.dual_reg * t_lo))

        w = v_hi - v_lo
        g_p = (-2.0 * cost_p * (p_avail - p) + params.primal_reg * p
               + model.dv_dp[np.ix_(rows, cols)].T @ w
               + (t_hi - t_lo) * model.dhead_dp[0, cols])
        g_q = (2.0 * cost_q * q + params.primal_reg * q
               + model.dv_dq[np.ix_(rows, cols)].T @ w
               + (t_hi - t_lo) * model.dhead_dq[0, cols])
        p_new = p - a * g_p
        q_new = q - a * g_q
        # vectorized projection onto the capability sets
        p_ub = np.minimum(p_avail, s_rating)
        pc = np.clip(p_new, 0.0, p_ub)
        ok = pc**2 + q_new**2 <= s_rating**2
        norm = np.hypot(p_new, q_new)
        scale = s_rating / np.maximum(norm, 1e-300)
        pd, qd = p_new * scale, q_new * scale
        disc_ok = (~ok) & (pd >= 0.0) & (pd <= p_ub)
        p_corner = np.where(pd < 0.0, 0.0, p_ub)
        q_max = np.sqrt(np.maximum(s_rating**2 - p_corner**2, 0.0))
        q_corner = np.sign(q_new) * np.minimum(np.abs(q_new), q_max)
        p = np.where(ok, pc, np.where(disc_ok, pd, p_corner))
        q = np.where(ok, q_new, np.where(disc_ok, qd, q_corner))
    return p, q
