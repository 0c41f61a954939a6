"""Load and PV-availability time series.

CSV series are parsed on a uniform time grid, linearly resampled to the
control resolution, and converted to per-unit on the configured power base.
PV availability can be given directly in kW or derived from an irradiance
series scaled to the installed capacity.

A profile manifest (JSON) maps bus ids to series. Schema:

    {
      "power_base_kva": 1000.0,            # optional, defaults to feeder base
      "loads": {"<bus>": {"p": SERIES, "q": SERIES}},
      "pv":    {"<bus>": {"available": SERIES} |
                         {"irradiance_csv": "f.csv",
                          "capacity_kw": 100.0,
                          "irradiance_ref": 1000.0},
                "s_rating_kva": 110.0}     # per-entry, optional
    }

    SERIES = {"const": 0.35, "unit": "pu"|"kw"} |
             {"csv": "relative/file.csv", "unit": "pu"|"kw", "scale": 1.0}

Buses absent from "loads" fall back to the feeder file's static loads.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, ScenarioError
from .feeder import FeederGraph

__all__ = [
    "TimeSeries",
    "ProfileSet",
    "ResolvedProfiles",
    "interpolate_linear",
    "scale_irradiance_to_pv",
    "load_profile_csv",
    "load_profile_set",
    "constant_series",
]


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled series; start_time in seconds (since midnight)."""

    start_time: float
    resolution_s: float
    values: np.ndarray
    unit: str = "pu"

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ConfigError("series needs at least one sample")
        if not np.all(np.isfinite(vals)):
            raise ConfigError("series values must be finite")
        if self.resolution_s <= 0:
            raise ConfigError("resolution_s must be > 0")
        object.__setattr__(self, "values", vals)
        vals.setflags(write=False)

    @property
    def end_time(self) -> float:
        return self.start_time + (len(self.values) - 1) * self.resolution_s

    @property
    def is_constant(self) -> bool:
        return len(self.values) == 1

    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.values)) * self.resolution_s

    def values_at(self, t: np.ndarray) -> np.ndarray:
        """Linear interpolation at arbitrary instants; errors outside coverage."""
        t = np.asarray(t, dtype=float)
        if self.is_constant:
            return np.full(t.shape, self.values[0])
        if np.any(t < self.start_time - 1e-9) or np.any(t > self.end_time + 1e-9):
            raise ScenarioError(
                f"series covers [{self.start_time}, {self.end_time}] s but "
                f"[{t.min()}, {t.max()}] s was requested"
            )
        return np.interp(t, self.times(), self.values)

    def scaled(self, factor: float, unit: str | None = None) -> "TimeSeries":
        return TimeSeries(
            self.start_time,
            self.resolution_s,
            self.values * factor,
            unit if unit is not None else self.unit,
        )


def constant_series(value: float, unit: str = "pu") -> TimeSeries:
    """Single-sample series; interpolates to `value` everywhere."""
    return TimeSeries(0.0, 1.0, np.array([value]), unit)


def interpolate_linear(series: TimeSeries, target_resolution_s: float) -> TimeSeries:
    """Piecewise-linear resampling onto a finer/coarser uniform grid.

    Knot values are preserved exactly where the target grid hits them; the
    start is always on the grid and the end is when the span divides evenly.
    A single-sample series is held constant (with a warning).
    """
    if target_resolution_s <= 0:
        raise ConfigError("target_resolution_s must be > 0")
    if series.is_constant:
        warnings.warn("single-sample series held constant", stacklevel=2)
        return TimeSeries(series.start_time, target_resolution_s, series.values, series.unit)
    span = series.end_time - series.start_time
    n_out = int(np.floor(span / target_resolution_s + 1e-9)) + 1
    t_out = series.start_time + np.arange(n_out) * target_resolution_s
    return TimeSeries(
        series.start_time, target_resolution_s, series.values_at(t_out), series.unit
    )


def scale_irradiance_to_pv(
    irradiance: TimeSeries, capacity_kw: float, irradiance_ref: float = 1000.0
) -> TimeSeries:
    """Available PV power: capacity * min(1, irradiance / reference), in kW."""
    if irradiance_ref <= 0:
        raise ConfigError("irradiance_ref must be > 0")
    if capacity_kw < 0:
        raise ConfigError("capacity_kw must be >= 0")
    vals = np.asarray(irradiance.values, dtype=float)
    if np.any(vals < 0):
        warnings.warn("negative irradiance samples clamped to 0", stacklevel=2)
        vals = np.maximum(vals, 0.0)
    power = capacity_kw * np.minimum(1.0, vals / irradiance_ref)
    return TimeSeries(irradiance.start_time, irradiance.resolution_s, power, "kw")


def load_profile_csv(path: str | Path, unit: str = "pu") -> TimeSeries:
    """Parse a `time_sec,value` CSV (header optional) into a uniform series."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"profile file not found: {p}")
    times: list[float] = []
    vals: list[float] = []
    with open(p) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if lineno == 1 and parts and not _is_number(parts[0]):
                if [s.strip() for s in parts] != ["time_sec", "value"]:
                    raise ParseError(f"{p}:1: unexpected header {line!r}")
                continue
            if len(parts) != 2:
                raise ParseError(f"{p}:{lineno}: expected 2 fields, got {len(parts)}")
            try:
                t, v = float(parts[0]), float(parts[1])
            except ValueError:
                raise ParseError(f"{p}:{lineno}: non-numeric field") from None
            if times and t <= times[-1]:
                raise ParseError(f"{p}:{lineno}: time must be strictly increasing")
            times.append(t)
            vals.append(v)
    if not times:
        raise ParseError(f"{p}: no samples")
    if len(times) == 1:
        return TimeSeries(times[0], 1.0, np.array(vals), unit)
    steps = np.diff(times)
    res = steps[0]
    if np.any(np.abs(steps - res) > 1e-6 * max(res, 1.0)):
        bad = int(np.argmax(np.abs(steps - res) > 1e-6 * max(res, 1.0)))
        raise ParseError(f"{p}: non-uniform sample spacing near row {bad + 2}")
    return TimeSeries(times[0], float(res), np.array(vals), unit)


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


@dataclass
class ProfileSet:
    """Per-bus load and per-DER availability series, all in per-unit."""

    power_base_kva: float
    load_p: dict[int, TimeSeries] = field(default_factory=dict)
    load_q: dict[int, TimeSeries] = field(default_factory=dict)
    p_avail: dict[int, TimeSeries] = field(default_factory=dict)
    s_rating: dict[int, float] = field(default_factory=dict)

    def resolve(
        self, feeder: FeederGraph, start_s: float, n_steps: int, dt: float
    ) -> "ResolvedProfiles":
        """Sample everything on the control grid over the scenario window."""
        t = start_s + np.arange(n_steps) * dt
        lp_static, lq_static = feeder.load_vectors()
        load_p = np.tile(lp_static, (n_steps, 1))
        load_q = np.tile(lq_static, (n_steps, 1))
        for bus, series in self.load_p.items():
            self._check_bus(feeder, bus)
            load_p[:, bus - 1] = series.values_at(t)
        for bus, series in self.load_q.items():
            self._check_bus(feeder, bus)
            load_q[:, bus - 1] = series.values_at(t)
        avail = {}
        for bus in feeder.der_buses:
            series = self.p_avail.get(bus)
            avail[bus] = series.values_at(t) if series is not None else np.zeros(n_steps)
        return ResolvedProfiles(t, load_p, load_q, avail)

    def rating(self, bus: int, default: float) -> float:
        return self.s_rating.get(bus, default)

    @staticmethod
    def _check_bus(feeder: FeederGraph, bus: int) -> None:
        if bus < 1 or bus > feeder.n:
            raise ConfigError(f"profile references unknown bus {bus}")


@dataclass(frozen=True)
class ResolvedProfiles:
    """Profiles sampled on the control grid: arrays indexed [step, bus-1]."""

    t: np.ndarray
    load_p: np.ndarray
    load_q: np.ndarray
    p_avail: dict[int, np.ndarray]


def load_profile_set(path: str | Path, feeder: FeederGraph) -> ProfileSet:
    """Read a profile manifest; series paths resolve relative to the manifest."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"profile manifest not found: {p}")
    with open(p) as fh:
        doc = json.load(fh)
    base_dir = p.parent
    power_base = float(doc.get("power_base_kva", feeder.base_kva))
    if power_base <= 0:
        raise ConfigError("power_base_kva must be > 0")
    pset = ProfileSet(power_base_kva=power_base)

    for bus_str, entry in doc.get("loads", {}).items():
        bus = int(bus_str)
        if "p" in entry:
            pset.load_p[bus] = _resolve_series(entry["p"], base_dir, power_base)
        if "q" in entry:
            pset.load_q[bus] = _resolve_series(entry["q"], base_dir, power_base)

    for bus_str, entry in doc.get("pv", {}).items():
        bus = int(bus_str)
        if "available" in entry:
            series = _resolve_series(entry["available"], base_dir, power_base)
            capacity_kw = float(np.max(series.values)) * power_base
        elif "irradiance_csv" in entry:
            irr = load_profile_csv(base_dir / entry["irradiance_csv"], unit="w_m2")
            capacity_kw = float(entry["capacity_kw"])
            ref = float(entry.get("irradiance_ref", 1000.0))
            series = _to_pu(scale_irradiance_to_pv(irr, capacity_kw, ref), power_base)
        else:
            raise ConfigError(f"pv entry for bus {bus}: need 'available' or 'irradiance_csv'")
        pset.p_avail[bus] = series
        s_kva = float(entry.get("s_rating_kva", 1.1 * capacity_kw))
        pset.s_rating[bus] = s_kva / power_base
    return pset


def _resolve_series(spec: dict | float, base_dir: Path, power_base_kva: float) -> TimeSeries:
    """Series spec -> per-unit TimeSeries."""
    if isinstance(spec, (int, float)):
        return constant_series(float(spec))
    unit = spec.get("unit", "pu")
    if "const" in spec:
        series = constant_series(float(spec["const"]), unit)
    elif "csv" in spec:
        series = load_profile_csv(base_dir / spec["csv"], unit=unit)
    else:
        raise ConfigError(f"series spec needs 'const' or 'csv': {spec}")
    if "scale" in spec:
        series = series.scaled(float(spec["scale"]))
    return _to_pu(series, power_base_kva)


def _to_pu(series: TimeSeries, power_base_kva: float) -> TimeSeries:
    if series.unit == "pu":
        return series
    if series.unit == "kw":
        return series.scaled(1.0 / power_base_kva, unit="pu")
    raise ConfigError(f"cannot convert unit {series.unit!r} to per-unit")
