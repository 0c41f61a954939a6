"""Command-line entry points.

Subcommands:
    simulate-net    generate a downlink delay trace CSV
    run             execute one closed-loop scenario, emit CSV/JSON reports
    compare         run ideal and delayed variants on identical power inputs
    validate-config load and check a config without running anything

Configuration is a single JSON document with sections {feeder, profiles,
control, network, run}; command-line flags override file values. Relative
paths inside the config resolve against the config file's directory. Exit
codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

from .cosim import (
    IdealComm,
    RunReport,
    Scenario,
    SimulateComm,
    TraceComm,
    history_to_csv,
    metrics_to_json,
    run as run_scenario,
)
from .dispatch import ControlParams
from .errors import ConfigError, ConvergenceError, ParseError, ScenarioError
from .feeder import load_feeder
from .netsim import DEFAULT_TRACE_FILENAME, NetConfig, read_trace, simulate_downlink, write_trace
from .profiles import ProfileSet, TimeSeries, constant_series, load_profile_csv, load_profile_set

DEFAULT_CONFIG: dict = {
    "feeder": {"path": None, "extra_der_buses": []},
    "profiles": {"manifest": None},
    "control": {
        "step_size": 0.1,
        "primal_reg": 1e-3,
        "dual_reg": 1e-4,
        "tracking_band": 0.001,
        "v_min": 0.95,
        "v_max": 1.05,
        "monitored_buses": [],
        "cost_p": 3.0,
        "cost_q": 1.0,
    },
    "network": {
        "n_der": 18,
        "link_rate_bps": 10_000_000.0,
        "link_delay_ms": 1.0,
        "jitter_min_ms": 1.0,
        "jitter_max_ms": 150.0,
        "send_interval_s": 1.0,
        "payload_bytes": 64,
        "header_bytes": 0,
        "sim_time_s": 86400.0,
        "seed": 0,
        "extra_delay_ms": 0.0,
        "loss_prob": 0.0,
    },
    "run": {
        "mode": "ideal",
        "trace": None,
        "horizon_steps": 600,
        "control_interval_s": 1.0,
        "start_time_s": 0.0,
        "window": [None, None],
        "p0_set": {"const": 0.0},
        "out_dir": "out",
        "plots": False,
        "seed": None,
    },
}

MODES = ("ideal", "trace", "simulate")


def load_config(path: str | Path) -> dict:
    """Read a config file and merge it over the defaults (strict keys)."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p) as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{p}: invalid JSON ({exc})") from None
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    _merge_section(cfg, user, "")
    _resolve_paths(cfg, p.parent.resolve())
    return cfg


def _merge_section(base: dict, user: dict, prefix: str) -> None:
    if not isinstance(user, dict):
        raise ConfigError(f"config section {prefix or '<root>'} must be an object")
    for key, value in user.items():
        if key not in base:
            raise ConfigError(f"unknown config key: {prefix}{key}")
        if isinstance(base[key], dict) and prefix == "":
            _merge_section(base[key], value, f"{key}.")
        else:
            base[key] = value


def _resolve_paths(cfg: dict, base_dir: Path) -> None:
    def maybe(section: str, key: str) -> None:
        val = cfg[section][key]
        if isinstance(val, str):
            cfg[section][key] = str((base_dir / val).resolve())

    maybe("feeder", "path")
    maybe("profiles", "manifest")
    maybe("run", "trace")
    p0 = cfg["run"]["p0_set"]
    if isinstance(p0, dict) and isinstance(p0.get("csv"), str):
        p0["csv"] = str((base_dir / p0["csv"]).resolve())


def apply_flags(cfg: dict, args: argparse.Namespace) -> None:
    if getattr(args, "mode", None):
        cfg["run"]["mode"] = args.mode
    if getattr(args, "trace", None):
        cfg["run"]["trace"] = str(Path(args.trace).resolve())
    if getattr(args, "seed", None) is not None:
        cfg["run"]["seed"] = args.seed
    if getattr(args, "out", None):
        cfg["run"]["out_dir"] = args.out
    if getattr(args, "plots", False):
        cfg["run"]["plots"] = True
    if cfg["run"]["seed"] is not None:
        cfg["network"]["seed"] = int(cfg["run"]["seed"])


def build_net_config(cfg: dict) -> NetConfig:
    return NetConfig(**cfg["network"])


def build_scenario(cfg: dict) -> Scenario:
    feeder_path = cfg["feeder"]["path"]
    if not feeder_path:
        raise ConfigError("feeder.path is required")
    feeder = load_feeder(feeder_path)
    extra = cfg["feeder"]["extra_der_buses"]
    if extra:
        feeder = feeder.with_der_at([int(b) for b in extra])

    manifest = cfg["profiles"]["manifest"]
    if manifest:
        profiles = load_profile_set(manifest, feeder)
    else:
        profiles = ProfileSet(power_base_kva=feeder.base_kva)

    ctl = cfg["control"]
    params = ControlParams(
        step_size=float(ctl["step_size"]),
        primal_reg=float(ctl["primal_reg"]),
        dual_reg=float(ctl["dual_reg"]),
        tracking_band=float(ctl["tracking_band"]),
        v_min=float(ctl["v_min"]),
        v_max=float(ctl["v_max"]),
        monitored_buses=tuple(int(b) for b in ctl["monitored_buses"]),
    )

    rn = cfg["run"]
    mode = rn["mode"]
    if mode not in MODES:
        raise ConfigError(f"run.mode must be one of {MODES}, got {mode!r}")
    if mode == "ideal":
        comm = IdealComm()
    elif mode == "trace":
        if not rn["trace"]:
            raise ConfigError("run.mode 'trace' requires run.trace (or --trace)")
        comm = TraceComm(read_trace(rn["trace"]))
    else:
        comm = SimulateComm(build_net_config(cfg))

    window = rn["window"] if rn["window"] else [None, None]
    if not isinstance(window, (list, tuple)) or len(window) != 2:
        raise ConfigError("run.window must be [start_s, end_s] (null allowed)")

    return Scenario(
        feeder=feeder,
        profiles=profiles,
        params=params,
        comm=comm,
        p0_set=_build_p0_set(rn["p0_set"]),
        horizon_steps=int(rn["horizon_steps"]),
        control_interval_s=float(rn["control_interval_s"]),
        start_time_s=float(rn["start_time_s"]),
        window_start_s=None if window[0] is None else float(window[0]),
        window_end_s=None if window[1] is None else float(window[1]),
        cost_p=float(ctl["cost_p"]),
        cost_q=float(ctl["cost_q"]),
    )


def _build_p0_set(spec) -> TimeSeries:
    if isinstance(spec, (int, float)):
        return constant_series(float(spec))
    if isinstance(spec, dict):
        if "const" in spec:
            return constant_series(float(spec["const"]))
        if "csv" in spec:
            return load_profile_csv(spec["csv"], unit="pu")
    raise ConfigError(f"run.p0_set must be a number, {{'const': x}} or {{'csv': path}}: {spec}")


def _echo_config(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "effective_config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate_net(cfg: dict) -> int:
    out_dir = Path(cfg["run"]["out_dir"])
    net = build_net_config(cfg)
    trace = simulate_downlink(net)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / DEFAULT_TRACE_FILENAME
    write_trace(trace, path)
    _echo_config(cfg, out_dir)
    print(f"wrote {len(trace)} records to {path}")
    return 0


def _run_and_write(cfg: dict, out_dir: Path) -> RunReport:
    scenario = build_scenario(cfg)
    report = run_scenario(scenario)
    out_dir.mkdir(parents=True, exist_ok=True)
    history_to_csv(report.history, out_dir / "run_timeseries.csv")
    metrics_to_json(report.metrics, out_dir / "metrics.json")
    _echo_config(cfg, out_dir)
    if cfg["run"]["plots"]:
        _write_plots(report, out_dir)
    return report


def cmd_run(cfg: dict) -> int:
    out_dir = Path(cfg["run"]["out_dir"])
    report = _run_and_write(cfg, out_dir)
    t = report.metrics["tracking"]
    print(
        f"{cfg['run']['mode']} run: {report.metrics['steps']} steps, "
        f"tracking rms {t['rms']:.6f}, max |err| {t['max_abs']:.6f} -> {out_dir}"
    )
    return 0


def cmd_compare(cfg: dict) -> int:
    out_dir = Path(cfg["run"]["out_dir"])
    ideal_cfg = copy.deepcopy(cfg)
    ideal_cfg["run"]["mode"] = "ideal"
    ideal_cfg["run"]["out_dir"] = str(out_dir / "ideal")
    delayed_cfg = copy.deepcopy(cfg)
    if delayed_cfg["run"]["mode"] == "ideal":
        delayed_cfg["run"]["mode"] = "simulate"
    delayed_cfg["run"]["out_dir"] = str(out_dir / "delayed")

    ideal = _run_and_write(ideal_cfg, Path(ideal_cfg["run"]["out_dir"]))
    delayed = _run_and_write(delayed_cfg, Path(delayed_cfg["run"]["out_dir"]))

    rms_i = ideal.metrics["tracking"]["rms"]
    rms_d = delayed.metrics["tracking"]["rms"]
    if rms_d == rms_i:
        ratio: float | None = 1.0
    elif rms_i == 0.0:
        ratio = None  # delayed error against a perfect baseline
    else:
        ratio = rms_d / rms_i
    comparison = {
        "ideal": ideal.metrics,
        "delayed": delayed.metrics,
        "delayed_mode": delayed_cfg["run"]["mode"],
        "tracking_rms_ratio": ratio,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "comparison.json", "w") as fh:
        json.dump(comparison, fh, indent=2, sort_keys=True)
        fh.write("\n")
    shown = "inf" if ratio is None else f"{ratio:.4f}"
    print(
        f"ideal rms {rms_i:.6f}, delayed rms {rms_d:.6f}, ratio {shown} -> "
        f"{out_dir / 'comparison.json'}"
    )
    return 0


def cmd_validate_config(cfg: dict) -> int:
    build_net_config(cfg)
    if cfg["run"]["mode"] != "trace" or cfg["run"]["trace"]:
        build_scenario(cfg)
    print(json.dumps(cfg, indent=2, sort_keys=True))
    return 0


def _write_plots(report: RunReport, out_dir: Path) -> None:
    try:
        import matplotlib
    except ImportError:
        raise ConfigError("plot output requires matplotlib (install extra 'plots')")
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    h = report.history
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.plot(h.t_sec, h.p0, label="feeder head P0", lw=0.9)
    ax.plot(h.t_sec, h.p0_set, label="P0 setpoint", lw=1.2, ls="--")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("active power [pu]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "p0_tracking.png", dpi=130)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(9, 4))
    show = h.monitored_buses[: min(4, len(h.monitored_buses))]
    for j, bus in enumerate(h.monitored_buses):
        if bus in show:
            ax.plot(h.t_sec, h.v[:, j], lw=0.9, label=f"bus {bus}")
    ax.axhline(h.v_max, color="r", ls=":", lw=1)
    ax.axhline(h.v_min, color="r", ls=":", lw=1)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("|V| [pu]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "voltages.png", dpi=130)
    plt.close(fig)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vppcosim",
        description="VPP dispatch co-simulation with downlink delay",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp: argparse.ArgumentParser, with_run_flags: bool = True) -> None:
        sp.add_argument("--config", required=True, help="scenario config JSON")
        sp.add_argument("--seed", type=int, default=None, help="override the RNG seed")
        sp.add_argument("--out", default=None, help="output directory")
        if with_run_flags:
            sp.add_argument("--mode", choices=MODES, default=None)
            sp.add_argument("--trace", default=None, help="delay trace CSV for trace mode")
            sp.add_argument("--plots", action="store_true", help="emit static plot images")

    add_common(sub.add_parser("simulate-net", help="generate a downlink delay trace"),
               with_run_flags=False)
    add_common(sub.add_parser("run", help="run one scenario"))
    add_common(sub.add_parser("compare", help="run ideal and delayed variants"))
    add_common(sub.add_parser("validate-config", help="check a config and echo it"))
    return parser


COMMANDS = {
    "simulate-net": cmd_simulate_net,
    "run": cmd_run,
    "compare": cmd_compare,
    "validate-config": cmd_validate_config,
}


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        apply_flags(cfg, args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ScenarioError, ConvergenceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
