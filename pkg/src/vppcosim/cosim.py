"""Closed-loop co-simulation on a shared control clock.

Each control step: sample the profiles, evaluate the linearized feeder under
the setpoints applied so far, update the feeder-level multipliers from those
measurements, deliver the multiplier broadcast to each DER according to the
communication mode, and let every DER take one projected gradient step with
whatever multipliers it actually holds. When no packet reaches a DER within
an interval, the DER reuses the last delivered multipliers (hold-last-value);
delivered packets never regress the multiplier age.

Communication modes: Ideal (in-step delivery to all DERs), Trace (replay a
packet delay log), Simulate (generate the log first, then replay it).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Union

import numpy as np

from .dispatch import ControlParams, DerState, DualState, update_der, update_duals
from .errors import ConfigError, ScenarioError
from .feeder import FeederGraph, InjectionVector, SensitivityModel, build_sensitivity
from .netsim import (
    NO_PACKET,
    DelayTrace,
    DeliverySchedule,
    NetConfig,
    derive_step_delays,
    simulate_downlink,
)
from .profiles import ProfileSet, ResolvedProfiles, TimeSeries

__all__ = [
    "IdealComm",
    "TraceComm",
    "SimulateComm",
    "CommMode",
    "Scenario",
    "SimState",
    "RunHistory",
    "RunReport",
    "Simulation",
    "run",
    "compute_metrics",
    "history_to_csv",
    "metrics_to_json",
]


@dataclass(frozen=True)
class IdealComm:
    """Every DER receives the current multiplier broadcast within the step."""


@dataclass(frozen=True)
class TraceComm:
    """Replay a pre-recorded packet delay trace (time zero = first step)."""

    trace: DelayTrace


@dataclass(frozen=True)
class SimulateComm:
    """Generate the downlink trace from a network config, then replay it."""

    net_config: NetConfig


CommMode = Union[IdealComm, TraceComm, SimulateComm]


@dataclass(frozen=True)
class Scenario:
    """Everything one closed-loop run depends on."""

    feeder: FeederGraph
    profiles: ProfileSet
    params: ControlParams
    comm: CommMode
    p0_set: TimeSeries
    horizon_steps: int
    control_interval_s: float = 1.0
    start_time_s: float = 0.0
    window_start_s: float | None = None  # tracking active in [start, end)
    window_end_s: float | None = None
    cost_p: float = 3.0
    cost_q: float = 1.0

    def __post_init__(self) -> None:
        if self.horizon_steps <= 0:
            raise ConfigError("horizon_steps must be > 0")
        if self.control_interval_s <= 0:
            raise ConfigError("control_interval_s must be > 0")

    @property
    def end_time_s(self) -> float:
        return self.start_time_s + self.horizon_steps * self.control_interval_s

    @property
    def window(self) -> tuple[float, float]:
        lo = self.window_start_s if self.window_start_s is not None else self.start_time_s
        hi = self.window_end_s if self.window_end_s is not None else self.end_time_s
        return lo, hi


@dataclass
class SimState:
    """Mutable loop state; advanced in place by Simulation.step."""

    step: int
    duals_feeder: DualState
    dual_history: list[DualState]
    duals_at_der: list[DualState]
    held_src: list[int]  # step index each DER's held multipliers came from
    ders: list[DerState]
    injections: InjectionVector


@dataclass
class RunHistory:
    """Per-step record of the run, as column arrays."""

    t_sec: np.ndarray
    p0: np.ndarray
    p0_set: np.ndarray  # NaN outside the dispatch window
    v: np.ndarray  # (n_steps, n_monitored)
    der_p: np.ndarray  # (n_steps, n_der)
    der_q: np.ndarray
    delivered_src: np.ndarray  # (n_steps, n_der); NO_PACKET when nothing arrived
    applied_src: np.ndarray  # step the applied multipliers were generated at
    in_window: np.ndarray
    monitored_buses: tuple[int, ...]
    der_buses: tuple[int, ...]
    v_min: float
    v_max: float
    control_interval_s: float


@dataclass
class RunReport:
    history: RunHistory
    metrics: dict


class Simulation:
    """A scenario bound to its model, profiles, and delivery schedule."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        feeder = scenario.feeder
        self.model: SensitivityModel = build_sensitivity(feeder)
        params = scenario.params
        if not params.monitored_buses:
            params = replace(params, monitored_buses=tuple(feeder.der_buses))
        for b in params.monitored_buses:
            if b < 1 or b > feeder.n:
                raise ConfigError(f"monitored bus {b} not in feeder")
        self.params = params
        self.der_buses = tuple(feeder.der_buses)
        if not self.der_buses:
            raise ConfigError("feeder has no DER buses to dispatch")

        n_steps = scenario.horizon_steps
        dt = scenario.control_interval_s
        self.resolved: ResolvedProfiles = scenario.profiles.resolve(
            feeder, scenario.start_time_s, n_steps, dt
        )
        self.schedule = self._build_schedule()
        self.p0_set_arr = self._resolve_p0_set()

        ders = []
        for bus in self.der_buses:
            avail = self.resolved.p_avail[bus]
            rating = scenario.profiles.rating(bus, default=1.1 * float(avail.max()))
            if rating <= 0:
                raise ConfigError(
                    f"DER at bus {bus}: no apparent-power rating and no availability "
                    f"profile to derive one from"
                )
            ders.append(
                DerState(
                    bus=bus,
                    p_set=0.0,
                    q_set=0.0,
                    p_avail=float(avail[0]),
                    s_rating=rating,
                    cost_p=scenario.cost_p,
                    cost_q=scenario.cost_q,
                )
            )

        m = len(self.params.monitored_buses)
        zeros = DualState.zeros(m)
        self.state = SimState(
            step=0,
            duals_feeder=zeros,
            dual_history=[],
            duals_at_der=[zeros] * len(ders),
            held_src=[NO_PACKET] * len(ders),
            ders=ders,
            injections=InjectionVector(np.zeros(feeder.n), np.zeros(feeder.n)),
        )
        self._rows = _HistoryRows()

    def _build_schedule(self) -> DeliverySchedule | None:
        sc = self.scenario
        comm = sc.comm
        span = sc.horizon_steps * sc.control_interval_s
        if isinstance(comm, IdealComm):
            return None
        if isinstance(comm, SimulateComm):
            if comm.net_config.sim_time_s + 1e-9 < span:
                raise ScenarioError(
                    f"network sim_time_s {comm.net_config.sim_time_s} s shorter than "
                    f"the scenario horizon {span} s"
                )
            trace = simulate_downlink(comm.net_config)
        elif isinstance(comm, TraceComm):
            trace = comm.trace
            if trace.horizon_s + 1e-9 < span - sc.control_interval_s:
                raise ScenarioError(
                    f"trace covers {trace.horizon_s:.1f} s but the scenario needs {span} s"
                )
        else:
            raise ConfigError(f"unknown communication mode {comm!r}")
        if trace.n_der < len(self.der_buses):
            raise ScenarioError(
                f"trace carries {trace.n_der} DER streams but the feeder has "
                f"{len(self.der_buses)} DERs"
            )
        return derive_step_delays(trace, sc.control_interval_s, sc.horizon_steps)

    def _resolve_p0_set(self) -> np.ndarray:
        sc = self.scenario
        t = self.resolved.t
        lo, hi = sc.window
        mask = (t >= lo) & (t < hi)
        out = np.full(t.shape, np.nan)
        if mask.any():
            out[mask] = sc.p0_set.values_at(t[mask])
        return out

    def step(self) -> SimState:
        """Advance one control step; returns the updated state."""
        st = self.state
        k = st.step
        sc = self.scenario
        if k >= sc.horizon_steps:
            raise ScenarioError(f"scenario horizon ({sc.horizon_steps} steps) exhausted")
        t_k = float(self.resolved.t[k])
        in_window = bool(np.isfinite(self.p0_set_arr[k]))

        # refresh availability, then measure the feeder under current setpoints
        st.ders = [
            replace(der, p_avail=float(self.resolved.p_avail[der.bus][k]))
            for der in st.ders
        ]
        p = -self.resolved.load_p[k].copy()
        q = -self.resolved.load_q[k].copy()
        for der in st.ders:
            p[der.bus - 1] += der.p_set
            q[der.bus - 1] += der.q_set
        inj = InjectionVector(p, q)
        mon_idx = [b - 1 for b in self.params.monitored_buses]
        v_all = self.model.dv_dp @ p + self.model.dv_dq @ q + self.model.v_base
        v_mon = v_all[mon_idx]
        head = self.model.dhead_dp @ p + self.model.dhead_dq @ q + self.model.head_base
        p0 = float(head[0])

        # feeder-level multiplier update; tracking is only armed in the window
        if in_window:
            p0_set_k = float(self.p0_set_arr[k])
            d_new = update_duals(st.duals_feeder, v_mon, p0, p0_set_k, self.params)
        else:
            p0_set_k = float("nan")
            d_new = update_duals(st.duals_feeder, v_mon, p0, p0, self.params)
            d_new = replace(d_new, track_hi=0.0, track_lo=0.0)
        st.duals_feeder = d_new
        st.dual_history.append(d_new)

        # downlink delivery
        delivered_row = np.full(len(st.ders), NO_PACKET, dtype=np.int64)
        if self.schedule is None:
            st.duals_at_der = [d_new] * len(st.ders)
            st.held_src = [k] * len(st.ders)
            delivered_row[:] = k
        else:
            for i in range(len(st.ders)):
                src = self.schedule.delivered(i + 1, k)
                if src is not None:
                    delivered_row[i] = src
                    if src >= st.held_src[i]:  # stale packets never regress the state
                        st.duals_at_der[i] = st.dual_history[src]
                        st.held_src[i] = src

        # local DER updates with whatever multipliers each one holds
        st.ders = [
            update_der(der, st.duals_at_der[i], self.model, self.params)
            for i, der in enumerate(st.ders)
        ]
        st.injections = inj
        self._rows.append(
            t_k,
            p0,
            p0_set_k,
            v_mon,
            np.array([d.p_set for d in st.ders]),
            np.array([d.q_set for d in st.ders]),
            delivered_row,
            np.array(st.held_src, dtype=np.int64),
            in_window,
        )
        st.step = k + 1
        return st

    def run(self) -> RunReport:
        for _ in range(self.scenario.horizon_steps):
            self.step()
        history = self._rows.finalize(
            self.params.monitored_buses,
            self.der_buses,
            self.params.v_min,
            self.params.v_max,
            self.scenario.control_interval_s,
        )
        return RunReport(history=history, metrics=compute_metrics(history))


class _HistoryRows:
    def __init__(self) -> None:
        self.t: list[float] = []
        self.p0: list[float] = []
        self.p0_set: list[float] = []
        self.v: list[np.ndarray] = []
        self.der_p: list[np.ndarray] = []
        self.der_q: list[np.ndarray] = []
        self.delivered: list[np.ndarray] = []
        self.applied: list[np.ndarray] = []
        self.in_window: list[bool] = []

    def append(self, t, p0, p0_set, v, der_p, der_q, delivered, applied, in_window):
        self.t.append(t)
        self.p0.append(p0)
        self.p0_set.append(p0_set)
        self.v.append(v.copy())
        self.der_p.append(der_p)
        self.der_q.append(der_q)
        self.delivered.append(delivered)
        self.applied.append(applied)
        self.in_window.append(in_window)

    def finalize(self, monitored, der_buses, v_min, v_max, dt) -> RunHistory:
        return RunHistory(
            t_sec=np.array(self.t),
            p0=np.array(self.p0),
            p0_set=np.array(self.p0_set),
            v=np.vstack(self.v),
            der_p=np.vstack(self.der_p),
            der_q=np.vstack(self.der_q),
            delivered_src=np.vstack(self.delivered),
            applied_src=np.vstack(self.applied),
            in_window=np.array(self.in_window, dtype=bool),
            monitored_buses=tuple(monitored),
            der_buses=tuple(der_buses),
            v_min=v_min,
            v_max=v_max,
            control_interval_s=dt,
        )


def run(scenario: Scenario) -> RunReport:
    """Execute the scenario over its full horizon."""
    return Simulation(scenario).run()


def compute_metrics(history: RunHistory) -> dict:
    """Tracking, voltage-violation, and staleness metrics for one run.

    Tracking statistics cover the dispatch window; voltage statistics cover
    the whole horizon per monitored bus. Staleness histograms count delivered
    packets by their age in control steps.
    """
    dt = history.control_interval_s
    w = history.in_window & np.isfinite(history.p0_set)
    if w.any():
        err = history.p0[w] - history.p0_set[w]
        tracking = {
            "rms": float(np.sqrt(np.mean(err**2))),
            "max_abs": float(np.max(np.abs(err))),
            "samples": int(w.sum()),
            "terminal_abs": float(abs(err[-1])),
        }
    else:
        tracking = {"rms": 0.0, "max_abs": 0.0, "samples": 0, "terminal_abs": 0.0}

    voltage: dict[str, dict] = {}
    over_total = under_total = 0
    for j, bus in enumerate(history.monitored_buses):
        col = history.v[:, j]
        over = col > history.v_max
        under = col < history.v_min
        voltage[str(bus)] = {
            "over_samples": int(over.sum()),
            "under_samples": int(under.sum()),
            "over_episodes": _episodes(over),
            "under_episodes": _episodes(under),
            "over_duration_s": float(over.sum() * dt),
            "under_duration_s": float(under.sum() * dt),
        }
        over_total += int(over.sum())
        under_total += int(under.sum())

    staleness: dict[str, dict] = {}
    n_steps = history.t_sec.shape[0]
    for i, bus in enumerate(history.der_buses):
        src = history.delivered_src[:, i]
        got = src != NO_PACKET
        ages = np.arange(n_steps)[got] - src[got]
        hist: dict[str, int] = {}
        for age in np.unique(ages):
            hist[str(int(age))] = int(np.sum(ages == age))
        staleness[str(bus)] = {
            "delivered": int(got.sum()),
            "no_packet_steps": int((~got).sum()),
            "histogram": hist,
        }

    return {
        "tracking": tracking,
        "voltage": voltage,
        "voltage_totals": {"over_samples": over_total, "under_samples": under_total},
        "staleness": staleness,
        "steps": int(n_steps),
    }


def _episodes(flags: np.ndarray) -> int:
    if flags.size == 0:
        return 0
    v = flags.astype(np.int8)
    return int(v[0] + np.sum((v[1:] - v[:-1]) == 1))


def history_to_csv(history: RunHistory, path: str | Path) -> None:
    """Write the run time series: t_sec, p0, p0_set, v_<bus>..., der setpoints."""
    cols = ["t_sec", "p0", "p0_set"]
    cols += [f"v_{b}" for b in history.monitored_buses]
    cols += [f"der_p_{b}" for b in history.der_buses]
    cols += [f"der_q_{b}" for b in history.der_buses]
    lines = [",".join(cols)]
    for k in range(history.t_sec.shape[0]):
        row = [
            f"{history.t_sec[k]:.6f}",
            f"{history.p0[k]:.6f}",
            f"{history.p0_set[k]:.6f}",
        ]
        row += [f"{x:.6f}" for x in history.v[k]]
        row += [f"{x:.6f}" for x in history.der_p[k]]
        row += [f"{x:.6f}" for x in history.der_q[k]]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def metrics_to_json(metrics: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
