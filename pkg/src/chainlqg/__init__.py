"""Decentralized LQG control of chain-structured systems.

Synthesis of jointly optimal controllers for two- and three-subsystem
chains under one-directional information flow, an analytical per-step
cost decomposition, a linearized heavy-vehicle platoon model with
gap-dependent drag, and seeded closed-loop simulation tooling.
"""

from .blocks import BlockIndexError, Partition, PartitionedMatrix
from .exceptions import (
    AssumptionError,
    ChainLQGError,
    ConfigError,
    ModelError,
    RiccatiDivergenceError,
    SimulationDivergenceError,
    WeightError,
)
from .platoon_model import (
    DEFAULT_INPUT_WEIGHT,
    DEFAULT_MASSES,
    AeroModel,
    ChainSystem,
    CostWeights,
    OperatingPoint,
    VehicleParams,
    build_cost,
    build_platoon,
    default_platoon,
    phi,
)
from .riccati import (
    RiccatiSchedule,
    RiccatiSolution,
    closed_loop_spectral_radius,
    cost_identity_residual,
    dare_residual,
    detectability_factor,
    is_detectable,
    is_stabilizable,
    riccati_finite,
    riccati_infinite,
    riccati_step,
)
from .simulate import (
    Scenario,
    SimulationTrace,
    compare_controllers,
    covariance_trace_series,
    draw_noise,
    empirical_average_cost,
    quiet_scenario,
    run_closed_loop,
    write_metrics_csv,
    write_trace_csv,
)
from .synthesis import (
    DistributedController,
    OptimalCostReport,
    StaticController,
    closed_loop_maps,
    exact_finite_horizon_cost,
    load_controller,
    save_controller,
    step_controller,
    synth_centralized,
    synth_suboptimal_local,
    synth_three_vehicle,
    synth_two_vehicle,
    synth_two_vehicle_finite,
)
from .verification import run_suite, scalar_chain

__version__ = "0.1.0"

__all__ = [
    "AeroModel",
    "AssumptionError",
    "BlockIndexError",
    "ChainLQGError",
    "ChainSystem",
    "ConfigError",
    "CostWeights",
    "DEFAULT_INPUT_WEIGHT",
    "DEFAULT_MASSES",
    "DistributedController",
    "ModelError",
    "OperatingPoint",
    "OptimalCostReport",
    "Partition",
    "PartitionedMatrix",
    "RiccatiDivergenceError",
    "RiccatiSchedule",
    "RiccatiSolution",
    "Scenario",
    "SimulationDivergenceError",
    "SimulationTrace",
    "StaticController",
    "VehicleParams",
    "WeightError",
    "build_cost",
    "build_platoon",
    "closed_loop_maps",
    "closed_loop_spectral_radius",
    "compare_controllers",
    "cost_identity_residual",
    "covariance_trace_series",
    "dare_residual",
    "default_platoon",
    "detectability_factor",
    "draw_noise",
    "empirical_average_cost",
    "exact_finite_horizon_cost",
    "is_detectable",
    "is_stabilizable",
    "load_controller",
    "phi",
    "quiet_scenario",
    "riccati_finite",
    "riccati_infinite",
    "riccati_step",
    "run_closed_loop",
    "run_suite",
    "save_controller",
    "scalar_chain",
    "step_controller",
    "synth_centralized",
    "synth_suboptimal_local",
    "synth_three_vehicle",
    "synth_two_vehicle",
    "synth_two_vehicle_finite",
    "write_metrics_csv",
    "write_trace_csv",
]
