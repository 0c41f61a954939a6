"""Deterministic discrete-event model of the controller-to-DER downlink.

Star topology: one controller node, one independent point-to-point link per
DER. Every send interval the controller emits one packet per DER; the packet
is logged at the DER after serialization time, fixed propagation delay, a
per-packet uniform jitter, and any configured extra delay. No queuing or
background traffic is modeled, so delays are bounded and packets arrive in
send order on each link.

The resulting per-packet log is post-processed into a per-DER, per-control-step
delivery schedule: within each control interval the most recently received
packet is the one that delivers the multiplier update; intervals without a
packet are flagged so the consumer can hold the last delivered values.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, ParseError

__all__ = [
    "NetConfig",
    "DelayRecord",
    "DelayTrace",
    "DeliverySchedule",
    "simulate_downlink",
    "write_trace",
    "read_trace",
    "derive_step_delays",
    "DEFAULT_TRACE_FILENAME",
]

DEFAULT_TRACE_FILENAME = "der_downlink_delay.csv"

NO_PACKET = -1


@dataclass(frozen=True)
class NetConfig:
    """Downlink parameters. Times in the units of the field names."""

    n_der: int = 18
    link_rate_bps: float = 10_000_000.0
    link_delay_ms: float = 1.0
    jitter_min_ms: float = 1.0
    jitter_max_ms: float = 150.0
    send_interval_s: float = 1.0
    payload_bytes: int = 64
    header_bytes: int = 0
    sim_time_s: float = 86400.0
    seed: int = 0
    extra_delay_ms: float = 0.0
    loss_prob: float = 0.0

    def __post_init__(self) -> None:
        if self.n_der < 1:
            raise ConfigError(f"n_der must be >= 1, got {self.n_der}")
        if self.link_rate_bps <= 0:
            raise ConfigError("link_rate_bps must be > 0")
        if not 0 <= self.jitter_min_ms <= self.jitter_max_ms:
            raise ConfigError(
                f"need 0 <= jitter_min_ms <= jitter_max_ms, got "
                f"[{self.jitter_min_ms}, {self.jitter_max_ms}]"
            )
        if self.send_interval_s <= 0:
            raise ConfigError("send_interval_s must be > 0")
        if self.payload_bytes <= 0 or self.header_bytes < 0:
            raise ConfigError("payload_bytes must be > 0 and header_bytes >= 0")
        if self.sim_time_s <= 0:
            raise ConfigError("sim_time_s must be > 0")
        if self.link_delay_ms < 0 or self.extra_delay_ms < 0:
            raise ConfigError("delays must be >= 0")
        if not 0 <= self.loss_prob < 1:
            raise ConfigError("loss_prob must be in [0, 1)")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")

    @property
    def tx_time_ms(self) -> float:
        """Serialization time of one packet on the link, in ms."""
        return 8.0 * (self.payload_bytes + self.header_bytes) / self.link_rate_bps * 1e3

    @property
    def n_sends(self) -> int:
        """Send instants per DER: t = k * send_interval_s < sim_time_s."""
        return int(math.floor(self.sim_time_s / self.send_interval_s - 1e-9)) + 1


@dataclass(frozen=True)
class DelayRecord:
    """One received packet: reception time (s), DER index, end-to-end delay (ms)."""

    rx_time_sec: float
    der_id: int
    delay_ms: float


@dataclass(frozen=True)
class DelayTrace:
    """Time-ordered packet log, stored column-wise for bulk processing.

    Iteration yields DelayRecord views; config carries the generating
    parameters when the trace was simulated (None for traces read from disk).
    """

    rx_time_sec: np.ndarray
    der_id: np.ndarray
    delay_ms: np.ndarray
    config: NetConfig | None = None

    def __post_init__(self) -> None:
        rx = np.asarray(self.rx_time_sec, dtype=float)
        der = np.asarray(self.der_id, dtype=np.int64)
        dly = np.asarray(self.delay_ms, dtype=float)
        if not (rx.shape == der.shape == dly.shape) or rx.ndim != 1:
            raise ValueError("trace columns must be 1-D and the same length")
        if rx.size:
            if np.any(dly <= 0):
                raise ValueError("delays must be positive")
            if np.any(der < 1):
                raise ValueError("der ids must be >= 1")
            if np.any(np.diff(rx) < 0):
                raise ValueError("records must be sorted by rx_time_sec")
            if np.any(rx < dly * 1e-3 - 1e-5):
                raise ValueError("a record implies a transmit time before t=0")
        for arr, name in ((rx, "rx_time_sec"), (der, "der_id"), (dly, "delay_ms")):
            object.__setattr__(self, name, arr)
            arr.setflags(write=False)

    def __len__(self) -> int:
        return int(self.rx_time_sec.shape[0])

    def __iter__(self) -> Iterator[DelayRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i: int) -> DelayRecord:
        return DelayRecord(
            float(self.rx_time_sec[i]), int(self.der_id[i]), float(self.delay_ms[i])
        )

    @property
    def n_der(self) -> int:
        if self.config is not None:
            return self.config.n_der
        return int(self.der_id.max()) if len(self) else 0

    @property
    def horizon_s(self) -> float:
        """Time span the trace is valid for."""
        if self.config is not None:
            return self.config.sim_time_s
        return float(self.rx_time_sec[-1]) if len(self) else 0.0

    @classmethod
    def from_records(
        cls, records: list[DelayRecord] | tuple[DelayRecord, ...], config: NetConfig | None = None
    ) -> "DelayTrace":
        return cls(
            np.array([r.rx_time_sec for r in records], dtype=float),
            np.array([r.der_id for r in records], dtype=np.int64),
            np.array([r.delay_ms for r in records], dtype=float),
            config,
        )


def simulate_downlink(config: NetConfig) -> DelayTrace:
    """Generate the per-packet delay trace for the configured downlink.

    Each DER gets an independent RNG stream derived from (seed, der_id), so
    a DER's delays do not change when n_der changes. Jitter is drawn per
    packet; with loss enabled, the loss decision is drawn after the jitter so
    surviving packets keep their delays.
    """
    n_sends = config.n_sends
    send_times = np.arange(n_sends, dtype=float) * config.send_interval_s
    base_ms = config.tx_time_ms + config.link_delay_ms + config.extra_delay_ms

    rx_parts: list[np.ndarray] = []
    der_parts: list[np.ndarray] = []
    delay_parts: list[np.ndarray] = []
    for der in range(1, config.n_der + 1):
        rng = np.random.default_rng([config.seed, der])
        jitter = rng.uniform(config.jitter_min_ms, config.jitter_max_ms, n_sends)
        delay_ms = base_ms + jitter
        if config.loss_prob > 0.0:
            keep = rng.random(n_sends) >= config.loss_prob
            delay_ms = delay_ms[keep]
            times = send_times[keep]
        else:
            times = send_times
        rx_parts.append(times + delay_ms * 1e-3)
        der_parts.append(np.full(delay_ms.shape[0], der, dtype=np.int64))
        delay_parts.append(delay_ms)

    rx = np.concatenate(rx_parts)
    der_id = np.concatenate(der_parts)
    delay = np.concatenate(delay_parts)
    order = np.lexsort((der_id, rx))
    return DelayTrace(rx[order], der_id[order], delay[order], config)


def write_trace(trace: DelayTrace, path: str | Path) -> None:
    """Write the trace CSV: one `rx_time_sec,der_id,delay_ms` line per packet.

    rx with 6 decimals, delay with 3; no header row. The format is stable
    byte-for-byte for a given trace.
    """
    lines = (
        f"{rx:.6f},{der},{dly:.3f}"
        for rx, der, dly in zip(trace.rx_time_sec, trace.der_id, trace.delay_ms)
    )
    text = "\n".join(lines)
    if text:
        text += "\n"
    Path(path).write_text(text)


def read_trace(path: str | Path) -> DelayTrace:
    """Parse a trace CSV (three-column format, possibly from an external emulator)."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"trace file not found: {p}")
    rx_l: list[float] = []
    der_l: list[int] = []
    dly_l: list[float] = []
    with open(p) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError(f"{p}:{lineno}: expected 3 comma-separated fields")
            try:
                rx_l.append(float(parts[0]))
                der_l.append(int(parts[1]))
                dly_l.append(float(parts[2]))
            except ValueError as exc:
                raise ParseError(f"{p}:{lineno}: {exc}") from None
    rx = np.array(rx_l, dtype=float)
    der = np.array(der_l, dtype=np.int64)
    dly = np.array(dly_l, dtype=float)
    if rx.size and np.any(np.diff(rx) < 0):
        warnings.warn(f"{p}: rx timestamps not monotone; records re-sorted", stacklevel=2)
        order = np.lexsort((der, rx))
        rx, der, dly = rx[order], der[order], dly[order]
    return DelayTrace(rx, der, dly, config=None)


@dataclass(frozen=True)
class DeliverySchedule:
    """Per-DER, per-step delivery outcome derived from a trace.

    src_step[der_id - 1, k] is the control step whose multiplier broadcast is
    delivered at step k (the packet's transmit step), or NO_PACKET when no
    packet for that DER was received during interval k.
    """

    src_step: np.ndarray
    control_interval_s: float

    @property
    def n_der(self) -> int:
        return int(self.src_step.shape[0])

    @property
    def n_steps(self) -> int:
        return int(self.src_step.shape[1])

    def delivered(self, der_id: int, step: int) -> int | None:
        """Transmit step of the packet delivered at `step`, or None."""
        src = int(self.src_step[der_id - 1, step])
        return None if src == NO_PACKET else src

    def delay_steps(self, der_id: int, step: int) -> int | None:
        src = self.delivered(der_id, step)
        return None if src is None else step - src

    def delivered_count(self, der_id: int) -> int:
        return int(np.sum(self.src_step[der_id - 1] != NO_PACKET))


def derive_step_delays(
    trace: DelayTrace, control_interval_s: float, n_steps: int
) -> DeliverySchedule:
    """Reduce a packet trace to the per-step delivery schedule.

    A packet received in [k*dt, (k+1)*dt) is a candidate for step k; the
    latest reception in the interval wins. Transmit instants are assumed to
    lie on the send grid, so the source step is recovered by rounding
    (rx - delay) to the nearest step, never past the delivery step.
    """
    if control_interval_s <= 0:
        raise ConfigError("control_interval_s must be > 0")
    if n_steps < 0:
        raise ConfigError("n_steps must be >= 0")
    n_der = trace.n_der
    src = np.full((max(n_der, 1), n_steps), NO_PACKET, dtype=np.int64)
    if len(trace) == 0 or n_steps == 0:
        return DeliverySchedule(src, control_interval_s)

    steps = np.floor(trace.rx_time_sec / control_interval_s).astype(np.int64)
    tx_time = trace.rx_time_sec - trace.delay_ms * 1e-3
    tx_steps = np.rint(tx_time / control_interval_s).astype(np.int64)
    tx_steps = np.clip(tx_steps, 0, steps)  # never later than the delivery step
    valid = (steps >= 0) & (steps < n_steps)
    # trace is rx-sorted: keep the latest reception per (der, step) cell
    keys = (trace.der_id[valid] - 1) * n_steps + steps[valid]
    vals = tx_steps[valid]
    uniq, first_in_reversed = np.unique(keys[::-1], return_index=True)
    src.flat[uniq] = vals[::-1][first_in_reversed]
    return DeliverySchedule(src, control_interval_s)
