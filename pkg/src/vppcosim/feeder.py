"""Radial distribution feeder model and its linearized sensitivities.

The feeder is a tree of buses rooted at the feeder head (bus 0). Around a
flat, zero-injection operating point the bus voltage magnitudes and the
feeder-head power are affine in the net nodal injections:

    |V|        ~  dv_dp @ p + dv_dq @ q + v_base
    (P0, Q0)   ~  dhead_dp @ p + dhead_dq @ q + head_base

``build_sensitivity`` constructs these coefficients from the tree topology
(common-path impedance rule); ``solve_distflow`` is an independent nonlinear
branch-flow solver used to validate the linear model in the test suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ConvergenceError, TopologyError

__all__ = [
    "Bus",
    "Line",
    "FeederGraph",
    "InjectionVector",
    "SensitivityModel",
    "compute_net_injections",
    "build_sensitivity",
    "evaluate_voltages",
    "evaluate_feeder_head",
    "solve_distflow",
    "load_feeder",
    "feeder_from_dict",
    "feeder_to_dict",
]


@dataclass(frozen=True)
class Bus:
    """One feeder node. Bus 0 is the feeder head and carries no load or DER."""

    id: int
    load_p: float = 0.0
    load_q: float = 0.0
    has_der: bool = False

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ConfigError(f"bus id must be nonnegative, got {self.id}")
        if not (math.isfinite(self.load_p) and math.isfinite(self.load_q)):
            raise ConfigError(f"bus {self.id}: loads must be finite")
        if self.id == 0 and (self.load_p != 0.0 or self.load_q != 0.0 or self.has_der):
            raise ConfigError("bus 0 (feeder head) must carry no load and no DER")


@dataclass(frozen=True)
class Line:
    """Series branch between two buses, impedance in per-unit."""

    from_bus: int
    to_bus: int
    r: float
    x: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.r) and math.isfinite(self.x)):
            raise ConfigError(f"line {self.from_bus}-{self.to_bus}: impedance must be finite")
        if self.r < 0:
            raise ConfigError(f"line {self.from_bus}-{self.to_bus}: r must be >= 0")


class FeederGraph:
    """Radial feeder: N+1 buses (ids 0..N), N lines forming a tree rooted at bus 0.

    Loads and impedances are per-unit on the (base_kva, base_kv) bases declared
    in the feeder file; ``v_nom`` is the nominal voltage magnitude in per-unit.
    """

    def __init__(
        self,
        buses: Sequence[Bus],
        lines: Sequence[Line],
        v_nom: float = 1.0,
        base_kva: float = 1000.0,
        base_kv: float = 4.16,
    ) -> None:
        if v_nom <= 0 or not math.isfinite(v_nom):
            raise ConfigError(f"v_nom must be positive, got {v_nom}")
        if base_kva <= 0 or base_kv <= 0:
            raise ConfigError("base_kva and base_kv must be positive")
        self.buses = sorted(buses, key=lambda b: b.id)
        self.lines = list(lines)
        self.v_nom = float(v_nom)
        self.base_kva = float(base_kva)
        self.base_kv = float(base_kv)

        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate bus ids")
        if ids != list(range(len(ids))):
            raise ConfigError("bus ids must be exactly 0..N")
        if 0 not in ids:
            raise ConfigError("feeder must contain bus 0 (the head)")

        # parent[i] for i >= 1; validates the tree property on the way.
        self.parent, self.parent_line = self._build_tree()
        self.n = len(self.buses) - 1

    def _build_tree(self) -> tuple[dict[int, int], dict[int, Line]]:
        n_bus = len(self.buses)
        if len(self.lines) != n_bus - 1:
            raise TopologyError(
                f"{n_bus} buses need exactly {n_bus - 1} lines for a tree, "
                f"got {len(self.lines)}"
            )
        adj: dict[int, list[tuple[int, Line]]] = {b.id: [] for b in self.buses}
        for ln in self.lines:
            if ln.from_bus not in adj or ln.to_bus not in adj:
                raise TopologyError(f"line {ln.from_bus}-{ln.to_bus} references unknown bus")
            adj[ln.from_bus].append((ln.to_bus, ln))
            adj[ln.to_bus].append((ln.from_bus, ln))
        parent: dict[int, int] = {}
        parent_line: dict[int, Line] = {}
        seen = {0}
        stack = [0]
        while stack:
            node = stack.pop()
            for nbr, ln in adj[node]:
                if nbr in seen:
                    continue
                seen.add(nbr)
                parent[nbr] = node
                parent_line[nbr] = ln
                stack.append(nbr)
        if len(seen) != n_bus:
            missing = sorted(set(adj) - seen)
            raise TopologyError(f"buses not reachable from bus 0: {missing}")
        return parent, parent_line

    @property
    def der_buses(self) -> list[int]:
        """DER-capable bus ids in ascending order."""
        return [b.id for b in self.buses if b.has_der]

    def bus(self, bus_id: int) -> Bus:
        try:
            return self.buses[bus_id]
        except IndexError:
            raise ConfigError(f"unknown bus id {bus_id}") from None

    def with_der_at(self, bus_ids: Sequence[int]) -> "FeederGraph":
        """Copy of the feeder with has_der additionally set on the given buses."""
        extra = set(bus_ids)
        for b in extra:
            if b <= 0 or b > self.n:
                raise ConfigError(f"cannot place DER at bus {b}")
        buses = [
            Bus(b.id, b.load_p, b.load_q, b.has_der or b.id in extra) for b in self.buses
        ]
        return FeederGraph(buses, self.lines, self.v_nom, self.base_kva, self.base_kv)

    def load_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        """(load_p, load_q) over buses 1..N as arrays."""
        lp = np.array([b.load_p for b in self.buses[1:]], dtype=float)
        lq = np.array([b.load_q for b in self.buses[1:]], dtype=float)
        return lp, lq


@dataclass(frozen=True)
class InjectionVector:
    """Net active/reactive injections at buses 1..N (loads enter negatively)."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError(f"p and q must be 1-D with equal length, got {p.shape}, {q.shape}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("injections must be finite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    def __len__(self) -> int:
        return self.p.shape[0]


@dataclass(frozen=True)
class SensitivityModel:
    """Affine voltage / feeder-head model around zero injection.

    dv_dp, dv_dq : (N, N) voltage-magnitude sensitivities to p/q injections
    dhead_dp, dhead_dq : (2, N) feeder-head (P0, Q0) sensitivities
    v_base : (N,) voltages at zero injection
    head_base : (2,) feeder-head power at zero injection
    """

    dv_dp: np.ndarray
    dv_dq: np.ndarray
    dhead_dp: np.ndarray
    dhead_dq: np.ndarray
    v_base: np.ndarray
    head_base: np.ndarray

    def __post_init__(self) -> None:
        n = self.dv_dp.shape[0]
        if self.dv_dp.shape != (n, n) or self.dv_dq.shape != (n, n):
            raise ValueError("voltage sensitivity matrices must be square and same size")
        if self.dhead_dp.shape != (2, n) or self.dhead_dq.shape != (2, n):
            raise ValueError("head sensitivity matrices must be 2 x N")
        if self.v_base.shape != (n,) or self.head_base.shape != (2,):
            raise ValueError("base vectors have inconsistent dimensions")
        for arr in (self.dv_dp, self.dv_dq, self.dhead_dp, self.dhead_dq,
                    self.v_base, self.head_base):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.dv_dp.shape[0]


def compute_net_injections(
    feeder: FeederGraph, der_setpoints: Mapping[int, tuple[float, float]]
) -> InjectionVector:
    """Combine DER setpoints and bus loads into net injections at buses 1..N.

    Entry i is (P_i - load_p_i, Q_i - load_q_i) at a DER bus with a setpoint
    and (-load_p_i, -load_q_i) everywhere else.
    """
    p, q = feeder.load_vectors()
    p = -p
    q = -q
    for bus_id, (sp, sq) in der_setpoints.items():
        if bus_id < 0 or bus_id > feeder.n:
            raise ConfigError(f"setpoint for unknown bus id {bus_id}")
        if not feeder.bus(bus_id).has_der:
            raise ConfigError(f"setpoint at bus {bus_id}, which has no DER")
        p[bus_id - 1] += sp
        q[bus_id - 1] += sq
    return InjectionVector(p, q)


def build_sensitivity(feeder: FeederGraph) -> SensitivityModel:
    """Construct the affine model from the tree topology.

    The voltage sensitivity between buses n and m is the impedance summed
    over the lines shared by their paths to the head (the path from the head
    to their lowest common ancestor), divided by v_nom. The feeder head is
    modeled lossless: P0 = -sum(p), Q0 = -sum(q), so at zero DER output the
    head carries exactly the total load.
    """
    n = feeder.n
    if n == 0:
        raise ConfigError("feeder has no buses beyond the head")

    # cumulative path impedance head -> bus, and depth for LCA walks
    r_path = {0: 0.0}
    x_path = {0: 0.0}
    depth = {0: 0}
    order = sorted(feeder.parent, key=lambda b: _depth_of(b, feeder.parent))
    for b in order:
        par = feeder.parent[b]
        ln = feeder.parent_line[b]
        r_path[b] = r_path[par] + ln.r
        x_path[b] = x_path[par] + ln.x
        depth[b] = depth[par] + 1

    def lca(a: int, b: int) -> int:
        while depth[a] > depth[b]:
            a = feeder.parent[a]
        while depth[b] > depth[a]:
            b = feeder.parent[b]
        while a != b:
            a = feeder.parent[a]
            b = feeder.parent[b]
        return a

    dv_dp = np.zeros((n, n))
    dv_dq = np.zeros((n, n))
    for i in range(1, n + 1):
        for j in range(i, n + 1):
            anc = lca(i, j)
            dv_dp[i - 1, j - 1] = dv_dp[j - 1, i - 1] = r_path[anc] / feeder.v_nom
            dv_dq[i - 1, j - 1] = dv_dq[j - 1, i - 1] = x_path[anc] / feeder.v_nom

    dhead_dp = np.vstack([-np.ones(n), np.zeros(n)])
    dhead_dq = np.vstack([np.zeros(n), -np.ones(n)])
    v_base = np.full(n, feeder.v_nom)
    head_base = np.zeros(2)
    return SensitivityModel(dv_dp, dv_dq, dhead_dp, dhead_dq, v_base, head_base)


def _depth_of(b: int, parent: Mapping[int, int]) -> int:
    d = 0
    while b != 0:
        b = parent[b]
        d += 1
    return d


def evaluate_voltages(model: SensitivityModel, inj: InjectionVector) -> np.ndarray:
    """Voltage magnitudes at buses 1..N under the affine model."""
    if len(inj) != model.n:
        raise ValueError(f"injection length {len(inj)} != model size {model.n}")
    return model.dv_dp @ inj.p + model.dv_dq @ inj.q + model.v_base


def evaluate_feeder_head(model: SensitivityModel, inj: InjectionVector) -> tuple[float, float]:
    """(P0, Q0) at the feeder head under the affine model."""
    if len(inj) != model.n:
        raise ValueError(f"injection length {len(inj)} != model size {model.n}")
    head = model.dhead_dp @ inj.p + model.dhead_dq @ inj.q + model.head_base
    return float(head[0]), float(head[1])


def solve_distflow(
    feeder: FeederGraph,
    inj: InjectionVector,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> np.ndarray:
    """Nonlinear single-phase branch-flow solve; validation oracle only.

    Backward/forward sweep on squared voltage magnitudes with explicit line
    losses. Intended for the light-loading regime (max |inj| <= 0.2 pu);
    raises ConvergenceError if the sweep does not settle in max_iter rounds.

    Returns voltage magnitudes at buses 1..N.
    """
    if len(inj) != feeder.n:
        raise ValueError(f"injection length {len(inj)} != feeder size {feeder.n}")
    n = feeder.n
    children: dict[int, list[int]] = {b.id: [] for b in feeder.buses}
    for b, par in feeder.parent.items():
        children[par].append(b)

    # depth-first orders: forward (root out), backward (leaves in)
    forward: list[int] = []
    stack = [0]
    while stack:
        node = stack.pop()
        forward.append(node)
        stack.extend(children[node])
    backward = [b for b in reversed(forward) if b != 0]

    v_sq = np.full(n + 1, feeder.v_nom**2)  # squared magnitudes, index = bus id
    flow_p = np.zeros(n + 1)  # sending-end flow on the line into each bus
    flow_q = np.zeros(n + 1)
    cur_sq = np.zeros(n + 1)  # squared current magnitude on that line

    for _ in range(max_iter):
        # backward: accumulate flows from the leaves, including line losses
        for b in backward:
            ln = feeder.parent_line[b]
            p_down = -inj.p[b - 1] + sum(flow_p[c] for c in children[b])
            q_down = -inj.q[b - 1] + sum(flow_q[c] for c in children[b])
            flow_p[b] = p_down + ln.r * cur_sq[b]
            flow_q[b] = q_down + ln.x * cur_sq[b]
        # forward: propagate voltages from the head
        max_dv = 0.0
        for b in forward:
            if b == 0:
                continue
            par = feeder.parent[b]
            ln = feeder.parent_line[b]
            v_new = (
                v_sq[par]
                - 2.0 * (ln.r * flow_p[b] + ln.x * flow_q[b])
                + (ln.r**2 + ln.x**2) * cur_sq[b]
            )
            if v_new <= 0:
                raise ConvergenceError(f"voltage collapse at bus {b} (v^2={v_new:g})")
            max_dv = max(max_dv, abs(v_new - v_sq[b]))
            v_sq[b] = v_new
            cur_sq[b] = (flow_p[b] ** 2 + flow_q[b] ** 2) / v_sq[par]
        if max_dv < tol:
            return np.sqrt(v_sq[1:])
    raise ConvergenceError(f"branch-flow sweep did not converge in {max_iter} iterations")


# feeder file schema: {base_kva, base_kv, v_nom, buses: [{id, load_p, load_q,
# has_der}], lines: [{from, to, r, x}]}

def feeder_from_dict(doc: dict) -> FeederGraph:
    try:
        buses = [
            Bus(
                id=int(b["id"]),
                load_p=float(b.get("load_p", 0.0)),
                load_q=float(b.get("load_q", 0.0)),
                has_der=bool(b.get("has_der", False)),
            )
            for b in doc["buses"]
        ]
        lines = [
            Line(
                from_bus=int(ln["from"]),
                to_bus=int(ln["to"]),
                r=float(ln["r"]),
                x=float(ln["x"]),
            )
            for ln in doc["lines"]
        ]
        return FeederGraph(
            buses,
            lines,
            v_nom=float(doc.get("v_nom", 1.0)),
            base_kva=float(doc.get("base_kva", 1000.0)),
            base_kv=float(doc.get("base_kv", 4.16)),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed feeder document: {exc}") from exc


def feeder_to_dict(feeder: FeederGraph) -> dict:
    return {
        "base_kva": feeder.base_kva,
        "base_kv": feeder.base_kv,
        "v_nom": feeder.v_nom,
        "buses": [
            {"id": b.id, "load_p": b.load_p, "load_q": b.load_q, "has_der": b.has_der}
            for b in feeder.buses
        ],
        "lines": [
            {"from": ln.from_bus, "to": ln.to_bus, "r": ln.r, "x": ln.x}
            for ln in feeder.lines
        ],
    }


def load_feeder(path: str | Path) -> FeederGraph:
    """Read a feeder JSON file."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"feeder file not found: {p}")
    with open(p) as fh:
        return feeder_from_dict(json.load(fh))
