//! Experiment configuration, Monte Carlo simulation and parameter sweeps.

pub mod config;
pub mod sim;
pub mod sweep;

pub use config::{emit_config, load_config, Experiment, ExperimentConfig, Horizon, SolverKind, SweepAxis};
pub use sim::{
    mean_and_ci, realization, simulate, simulate_noncausal, Controller, CostMode, SensorView, SimulationOptions,
    SimulationResult, TrajectoryRecord,
};
pub use sweep::{build_grid, emit_csv, run_solver, sweep, write_csv, InfoKind, SweepRow};
