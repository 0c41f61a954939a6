"""Co-simulation of primal-dual VPP dispatch under packet-level downlink delay.

Subpackages:
    feeder    radial feeder model and linearized sensitivities
    dispatch  feeder-level multiplier updates and per-DER projected steps
    netsim    deterministic downlink delay simulator and trace handling
    profiles  load / PV availability time series
    cosim     closed-loop orchestration and metrics
    cli       scenario configuration and experiment commands
"""

from importlib import resources
from pathlib import Path

from .cosim import (
    CommMode,
    IdealComm,
    RunReport,
    Scenario,
    SimulateComm,
    Simulation,
    TraceComm,
    compute_metrics,
    run,
)
from .dispatch import (
    ControlParams,
    DerState,
    DualState,
    der_gradient,
    project_capability,
    update_der,
    update_duals,
)
from .errors import ConfigError, ConvergenceError, ParseError, ScenarioError, TopologyError
from .feeder import (
    Bus,
    FeederGraph,
    InjectionVector,
    Line,
    SensitivityModel,
    build_sensitivity,
    compute_net_injections,
    evaluate_feeder_head,
    evaluate_voltages,
    load_feeder,
    solve_distflow,
)
from .netsim import (
    DelayRecord,
    DelayTrace,
    DeliverySchedule,
    NetConfig,
    derive_step_delays,
    read_trace,
    simulate_downlink,
    write_trace,
)
from .profiles import (
    ProfileSet,
    TimeSeries,
    interpolate_linear,
    load_profile_csv,
    load_profile_set,
    scale_irradiance_to_pv,
)

__version__ = "0.1.0"


def data_path(relative: str) -> Path:
    """Path to a shipped data file, e.g. data_path('desk5.json')."""
    return Path(str(resources.files("vppcosim") / "data" / relative))
