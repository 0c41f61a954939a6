"""Primal-dual VPP dispatch.

A feeder-level controller maintains one multiplier per monitored-bus voltage
bound plus a pair of scalar multipliers for the feeder-head tracking band.
Multipliers ascend the regularized Lagrangian by projected gradient steps;
each DER descends it in its own (P, Q) and projects onto the inverter
capability set (active-power box intersected with the apparent-power disc).
All updates share one stepsize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .feeder import SensitivityModel

__all__ = [
    "DualState",
    "DerState",
    "ControlParams",
    "update_duals",
    "der_gradient",
    "project_capability",
    "update_der",
]


@dataclass(frozen=True)
class DualState:
    """Multipliers broadcast to the DERs each control step.

    v_lo, v_hi : per-monitored-bus duals for the lower/upper voltage bounds
    track_hi   : dual for head power above its setpoint band
    track_lo   : dual for head power below its setpoint band
    step_index : control step at which this state was produced
    """

    v_lo: np.ndarray
    v_hi: np.ndarray
    track_hi: float
    track_lo: float
    step_index: int = 0

    def __post_init__(self) -> None:
        v_lo = np.asarray(self.v_lo, dtype=float)
        v_hi = np.asarray(self.v_hi, dtype=float)
        if v_lo.shape != v_hi.shape or v_lo.ndim != 1:
            raise ValueError("v_lo and v_hi must be 1-D and the same length")
        if np.any(v_lo < 0) or np.any(v_hi < 0) or self.track_hi < 0 or self.track_lo < 0:
            raise ValueError("dual variables must be nonnegative")
        object.__setattr__(self, "v_lo", v_lo)
        object.__setattr__(self, "v_hi", v_hi)
        v_lo.setflags(write=False)
        v_hi.setflags(write=False)

    @classmethod
    def zeros(cls, n_monitored: int) -> "DualState":
        return cls(np.zeros(n_monitored), np.zeros(n_monitored), 0.0, 0.0, 0)


@dataclass(frozen=True)
class DerState:
    """Setpoints and ratings of one inverter-interfaced DER."""

    bus: int
    p_set: float = 0.0
    q_set: float = 0.0
    p_avail: float = 0.0
    s_rating: float = 1.0
    cost_p: float = 3.0
    cost_q: float = 1.0

    def __post_init__(self) -> None:
        if self.bus < 1:
            raise ValueError(f"DER bus must be >= 1, got {self.bus}")
        if not all(
            math.isfinite(v)
            for v in (self.p_set, self.q_set, self.p_avail, self.s_rating)
        ):
            raise ValueError(f"DER at bus {self.bus}: non-finite state")
        if self.p_avail < 0:
            raise ValueError(f"DER at bus {self.bus}: p_avail must be >= 0")
        if self.s_rating <= 0:
            raise ValueError(f"DER at bus {self.bus}: s_rating must be > 0")

    def in_capability(self, tol: float = 1e-12) -> bool:
        p_ub = min(self.p_avail, self.s_rating)
        return (
            -tol <= self.p_set <= p_ub + tol
            and self.p_set**2 + self.q_set**2 <= self.s_rating**2 + tol
        )


@dataclass(frozen=True)
class ControlParams:
    """Controller gains, regularization, and constraint limits."""

    step_size: float = 0.1
    primal_reg: float = 1e-3
    dual_reg: float = 1e-4
    tracking_band: float = 0.001
    v_min: float = 0.95
    v_max: float = 1.05
    monitored_buses: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.primal_reg <= 0 or self.dual_reg <= 0:
            raise ValueError("regularization coefficients must be > 0")
        if self.tracking_band <= 0:
            raise ValueError("tracking_band must be > 0")
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be < v_max")
        object.__setattr__(self, "monitored_buses", tuple(self.monitored_buses))


def update_duals(
    d: DualState,
    voltages: Sequence[float] | np.ndarray,
    p0: float,
    p0_set: float,
    params: ControlParams,
) -> DualState:
    """One projected gradient-ascent step on all multipliers.

    voltages are the measured magnitudes at params.monitored_buses, in that
    order. Each multiplier moves along its constraint residual, decays with
    the dual regularization, and is clipped at zero.
    """
    v = np.asarray(voltages, dtype=float)
    if v.shape != (len(params.monitored_buses),) or v.shape != d.v_lo.shape:
        raise ValueError(
            f"voltage vector length {v.shape} does not match monitored set "
            f"({len(params.monitored_buses)} buses, dual length {d.v_lo.shape[0]})"
        )
    a = params.step_size
    eps = params.dual_reg
    band = params.tracking_band
    v_lo = np.maximum(0.0, d.v_lo + a * (params.v_min - v - eps * d.v_lo))
    v_hi = np.maximum(0.0, d.v_hi + a * (v - params.v_max - eps * d.v_hi))
    track_hi = max(0.0, d.track_hi + a * (p0 - p0_set - band - eps * d.track_hi))
    track_lo = max(0.0, d.track_lo + a * (p0_set - p0 - band - eps * d.track_lo))
    return DualState(v_lo, v_hi, track_hi, track_lo, d.step_index + 1)


def der_gradient(
    der: DerState,
    d: DualState,
    model: SensitivityModel,
    params: ControlParams,
) -> tuple[float, float]:
    """Gradient of the regularized Lagrangian in this DER's (P, Q).

    Combines the local quadratic cost, the primal regularization, the
    voltage-bound multipliers weighted by this DER's voltage sensitivities,
    and the tracking multipliers weighted by its head-power sensitivity.
    """
    col = der.bus - 1
    if col < 0 or col >= model.n:
        raise ValueError(f"DER bus {der.bus} outside model range 1..{model.n}")
    if d.v_lo.shape[0] != len(params.monitored_buses):
        raise ValueError("dual state does not match monitored set")
    rows = [b - 1 for b in params.monitored_buses]
    w = d.v_hi - d.v_lo
    track = d.track_hi - d.track_lo
    g_p = (
        -2.0 * der.cost_p * (der.p_avail - der.p_set)
        + params.primal_reg * der.p_set
        + float(w @ model.dv_dp[rows, col])
        + track * model.dhead_dp[0, col]
    )
    g_q = (
        2.0 * der.cost_q * der.q_set
        + params.primal_reg * der.q_set
        + float(w @ model.dv_dq[rows, col])
        + track * model.dhead_dq[0, col]
    )
    return g_p, g_q


def project_capability(
    p: float, q: float, p_avail: float, s_rating: float
) -> tuple[float, float]:
    """Exact Euclidean projection onto {0 <= P <= min(p_avail, S), P^2+Q^2 <= S^2}.

    Closed-form case split: clamping P alone if the result respects the disc;
    radial scaling onto the disc if the scaled point respects the box; else
    the corner at the violated P bound with Q on the disc boundary.
    """
    if not all(math.isfinite(v) for v in (p, q, p_avail, s_rating)):
        raise ValueError("projection inputs must be finite")
    if p_avail < 0 or s_rating <= 0:
        raise ValueError("p_avail must be >= 0 and s_rating > 0")
    p_ub = min(p_avail, s_rating)
    s_sq = s_rating**2
    # ulp-level slack keeps re-projection of boundary points exactly idempotent
    s_sq_tol = s_sq * (1.0 + 4.0 * 2.220446049250313e-16)

    p_clamped = min(max(p, 0.0), p_ub)
    if p_clamped**2 + q**2 <= s_sq_tol:
        return p_clamped, q

    # clamping violates the disc, so the point is outside the disc
    norm = math.hypot(p, q)
    scale = s_rating / norm
    p_disc, q_disc = p * scale, q * scale
    if 0.0 <= p_disc <= p_ub:
        return p_disc, q_disc

    p_corner = 0.0 if p_disc < 0.0 else p_ub
    q_max = math.sqrt(max(s_sq - p_corner**2, 0.0))
    q_corner = math.copysign(min(abs(q), q_max), q) if q != 0.0 else 0.0
    return p_corner, q_corner


def update_der(
    der: DerState,
    d_available: DualState,
    model: SensitivityModel,
    params: ControlParams,
) -> DerState:
    """One projected gradient descent step with whatever duals the DER holds."""
    g_p, g_q = der_gradient(der, d_available, model, params)
    p_new, q_new = project_capability(
        der.p_set - params.step_size * g_p,
        der.q_set - params.step_size * g_q,
        der.p_avail,
        der.s_rating,
    )
    return replace(der, p_set=p_new, q_set=q_new)
