"""cpmsim: a deterministic software re-creation of a model-scale
connected-vehicle testbed.

The package provides a logical-execution-time publish-subscribe middleware,
a layered controller stack (planning, trajectory-following MPC with sensor
fusion, simulated vehicle plant), a simulated LED-based indoor positioning
system, and a scenario runner that reproduces platooning, intersection, and
fleet stress experiments with bit-reproducible traces.
"""

from .middleware import Envelope, FaultModel, LetConfig, Scheduler
from .runner import (compare_traces, compute_metrics, read_trace,
                     run_experiment, write_trace)
from .scenario import (ScenarioSpec, load_fixture, load_scenario,
                       resolve_scenario, save_scenario)
from .trajectory import Trajectory, interpolate, sample
from .types import (ActuatorCommand, Pose, TrajectoryNode, VehicleParams,
                    VehicleState)

__version__ = "0.1.0"

__all__ = [
    "ActuatorCommand", "Envelope", "FaultModel", "LetConfig", "Pose",
    "ScenarioSpec", "Scheduler", "Trajectory", "TrajectoryNode",
    "VehicleParams", "VehicleState", "compare_traces", "compute_metrics",
    "interpolate", "load_fixture", "load_scenario", "read_trace",
    "resolve_scenario", "run_experiment", "sample", "save_scenario",
    "write_trace", "__version__",
]
