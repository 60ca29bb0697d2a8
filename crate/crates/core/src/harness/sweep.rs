//! Parameter sweeps: solve, simulate and tabulate one row per (axis value, solver).

use super::config::{Experiment, ExperimentConfig, Horizon, SolverKind, SweepAxis};
use super::sim::{simulate, simulate_noncausal, Controller, CostMode, SimulationOptions, SimulationResult};
use crate::belief::CovGrid;
use crate::dp::{
    discretize_process, sample_belief_set, solve_average, solve_finite, uniform_actions, AverageSolution,
    BeliefSampling, InfoAxis, Policy, RviOptions, Solver, StateGrid,
};
use crate::error::{Error, Result};
use crate::structural::{
    search_threshold_policy, BinaryActionSet, GradientSchedule, ThresholdOptions, ThresholdSearch,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Information coordinate of a DP grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoKind {
    Covariance,
    Belief,
    Estimate,
}

impl InfoKind {
    pub fn name(&self) -> &'static str {
        match self {
            InfoKind::Covariance => "covariance",
            InfoKind::Belief => "belief",
            InfoKind::Estimate => "estimate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "covariance" => Some(InfoKind::Covariance),
            "belief" => Some(InfoKind::Belief),
            "estimate" => Some(InfoKind::Estimate),
            _ => None,
        }
    }

    /// Axis used by the causal optimal solver for the configured acknowledgments.
    pub fn optimal_for(exp: &Experiment) -> Self {
        if exp.feedback.is_perfect() {
            InfoKind::Covariance
        } else {
            InfoKind::Belief
        }
    }
}

/// Build the DP grid described by the configuration.
pub fn build_grid(cfg: &ExperimentConfig, exp: &Experiment, kind: InfoKind, actions: Vec<f64>) -> Result<StateGrid> {
    let g = &cfg.grids;
    let cov = CovGrid::log_spaced(&exp.model, g.cov_points)?;
    let info = match kind {
        InfoKind::Covariance => InfoAxis::dirac(cov, &exp.model, g.projection)?,
        InfoKind::Estimate => InfoAxis::estimate(cov, &exp.model, g.projection)?,
        InfoKind::Belief => {
            let sampling = BeliefSampling {
                trajectories: cfg.belief.trajectories,
                steps: cfg.belief.steps,
                max_beliefs: cfg.belief.max_beliefs.max(cov.len()),
                dedup_tol: 1e-6,
                seed: cfg.seed,
                projection: g.projection,
            };
            let set = sample_belief_set(
                &cov,
                &exp.model,
                &exp.dropout,
                &exp.feedback,
                &exp.gain,
                &exp.harvest,
                &exp.battery,
                &actions,
                &sampling,
            )?;
            InfoAxis::belief(cov, &exp.model, set, g.projection)?
        }
    };
    StateGrid::new(
        info,
        discretize_process(&exp.gain, g.gain_bins)?,
        discretize_process(&exp.harvest, g.harvest_bins)?,
        exp.battery.b_max,
        g.battery_points,
        actions,
    )
}

pub fn default_actions(cfg: &ExperimentConfig) -> Vec<f64> {
    uniform_actions(cfg.battery.b_max, cfg.grids.action_points)
}

pub fn rvi_options(cfg: &ExperimentConfig) -> RviOptions {
    RviOptions {
        tol: cfg.solver.tol,
        max_iters: cfg.solver.max_iters,
        reference: None,
    }
}

pub fn simulation_options(cfg: &ExperimentConfig) -> SimulationOptions {
    let mode = match cfg.horizon {
        Horizon::Finite(t) => CostMode::Finite(t),
        Horizon::Average => {
            let steps = cfg.simulation.steps;
            CostMode::Average {
                steps,
                burn_in: ((steps as f64) * cfg.simulation.burn_in_fraction).floor() as usize,
            }
        }
    };
    SimulationOptions {
        n_runs: cfg.simulation.n_runs,
        mode,
        seed: cfg.seed,
        keep_trajectories: 0,
    }
}

pub fn binary_levels(cfg: &ExperimentConfig) -> Result<BinaryActionSet> {
    BinaryActionSet::new(cfg.threshold.e0, cfg.threshold.e1, cfg.battery.b_max)
}

pub fn threshold_options(cfg: &ExperimentConfig) -> Result<ThresholdOptions> {
    Ok(ThresholdOptions {
        schedule: GradientSchedule::new(cfg.threshold.omega, cfg.threshold.sigma, cfg.threshold.kappa)?,
        inner_steps: cfg.threshold.inner_steps,
        restarts: cfg.threshold.restarts,
        rvi: rvi_options(cfg),
    })
}

/// Solved policies for the configured horizon.
pub enum Solved {
    Average(AverageSolution),
    Finite(Vec<Policy>),
}

/// Solve with the causal DP on `grid` for the configured horizon.
pub fn solve_causal(cfg: &ExperimentConfig, exp: &Experiment, grid: &StateGrid) -> Result<Solved> {
    match cfg.horizon {
        Horizon::Average => Ok(Solved::Average(solve_average(
            grid,
            &exp.model,
            &exp.dropout,
            &exp.feedback,
            &rvi_options(cfg),
        )?)),
        Horizon::Finite(t) => Ok(Solved::Finite(
            solve_finite(t, grid, &exp.model, &exp.dropout, &exp.feedback)?.1,
        )),
    }
}

/// Threshold search on a binary-action covariance grid (perfect acknowledgments only).
pub fn solve_threshold(cfg: &ExperimentConfig, exp: &Experiment) -> Result<(StateGrid, ThresholdSearch)> {
    if !exp.feedback.is_perfect() {
        return Err(Error::InvalidModel(
            "the threshold search assumes perfect acknowledgments".into(),
        ));
    }
    if cfg.horizon != Horizon::Average {
        return Err(Error::InvalidModel(
            "the threshold search is defined for the average cost".into(),
        ));
    }
    let levels = binary_levels(cfg)?;
    let grid = build_grid(cfg, exp, InfoKind::Covariance, levels.action_grid())?;
    let solver = Solver::new(&grid, &exp.model, &exp.dropout, &exp.feedback)?;
    let search = search_threshold_policy(&solver, &exp.model, levels, &threshold_options(cfg)?)?;
    Ok((grid, search))
}

/// Solve with one solver and simulate it with the configured seed.
pub fn run_solver(cfg: &ExperimentConfig, kind: SolverKind) -> Result<SimulationResult> {
    let exp = cfg.experiment()?;
    let sim = simulation_options(cfg);
    match kind {
        SolverKind::Optimal | SolverKind::Suboptimal => {
            let info = if kind == SolverKind::Optimal {
                InfoKind::optimal_for(&exp)
            } else {
                InfoKind::Estimate
            };
            let grid = build_grid(cfg, &exp, info, default_actions(cfg))?;
            match solve_causal(cfg, &exp, &grid)? {
                Solved::Average(sol) => simulate(
                    &Controller::Stationary {
                        grid: &grid,
                        policy: &sol.policy,
                    },
                    &exp,
                    &sim,
                ),
                Solved::Finite(policies) => simulate(
                    &Controller::Staged {
                        grid: &grid,
                        policies: &policies,
                    },
                    &exp,
                    &sim,
                ),
            }
        }
        SolverKind::Noncausal => {
            let grid = build_grid(cfg, &exp, InfoKind::optimal_for(&exp), default_actions(cfg))?;
            simulate_noncausal(&grid, &exp, &sim)
        }
        SolverKind::Threshold => {
            let (grid, search) = solve_threshold(cfg, &exp)?;
            simulate(
                &Controller::Threshold {
                    grid: &grid,
                    policy: &search.policy,
                },
                &exp,
                &sim,
            )
        }
    }
}

/// One line of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_name: String,
    pub axis_value: String,
    pub solver: String,
    pub mean_cost: Option<f64>,
    pub ci_half_width: Option<f64>,
    pub mean_energy: Option<f64>,
    pub n_runs: usize,
    pub seed: u64,
    pub error: String,
}

/// Default axis values when the configuration lists none.
pub fn default_axis_values(axis: SweepAxis) -> Vec<f64> {
    match axis {
        SweepAxis::BMax => vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
        SweepAxis::GainMean => vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
        SweepAxis::Horizon => vec![4.0, 5.0],
        SweepAxis::Feedback => Vec::new(),
    }
}

/// Configurations along the sweep axis, labelled by their axis value.
pub fn sweep_points(cfg: &ExperimentConfig) -> Result<Vec<(String, ExperimentConfig)>> {
    let axis = cfg
        .sweep
        .axis
        .ok_or_else(|| Error::schema("sweep.axis", "one of b_max, gain_mean, horizon, feedback"))?;
    if axis == SweepAxis::Feedback {
        let pairs = if cfg.sweep.feedback_pairs.is_empty() {
            vec![[0.4, 0.2], [0.1, 0.01]]
        } else {
            cfg.sweep.feedback_pairs.clone()
        };
        return Ok(pairs
            .into_iter()
            .map(|[eta, eps]| {
                let mut c = cfg.clone();
                c.feedback.eta = eta;
                c.feedback.epsilon = eps;
                (format!("eta={eta};eps={eps}"), c)
            })
            .collect());
    }
    let values = if cfg.sweep.values.is_empty() {
        default_axis_values(axis)
    } else {
        cfg.sweep.values.clone()
    };
    values
        .into_iter()
        .map(|v| {
            let mut c = cfg.clone();
            match axis {
                SweepAxis::BMax => c.battery.b_max = v,
                SweepAxis::GainMean => c.channel.mean = v,
                SweepAxis::Horizon => {
                    if !(v >= 1.0 && v.fract() == 0.0) {
                        return Err(Error::schema("sweep.values", "positive integer horizons"));
                    }
                    c.horizon = Horizon::Finite(v as usize);
                }
                SweepAxis::Feedback => unreachable!(),
            }
            Ok((format!("{v}"), c))
        })
        .collect()
}

/// Run every requested solver at every axis value; failures become error rows.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let axis = cfg.sweep.axis.map(|a| a.name()).unwrap_or("none");
    let mut rows = Vec::new();
    for (label, point) in sweep_points(cfg)? {
        for &kind in &cfg.sweep.solvers {
            let outcome = point.validate().and_then(|_| run_solver(&point, kind));
            let row = match outcome {
                Ok(r) => SweepRow {
                    axis_name: axis.into(),
                    axis_value: label.clone(),
                    solver: kind.name().into(),
                    mean_cost: Some(r.mean_cost),
                    ci_half_width: Some(r.ci_half_width),
                    mean_energy: Some(r.mean_energy),
                    n_runs: r.n_runs,
                    seed: point.seed,
                    error: String::new(),
                },
                Err(e) => {
                    log::warn!("sweep point {axis}={label} with {} failed: {e}", kind.name());
                    SweepRow {
                        axis_name: axis.into(),
                        axis_value: label.clone(),
                        solver: kind.name().into(),
                        mean_cost: None,
                        ci_half_width: None,
                        mean_energy: None,
                        n_runs: point.simulation.n_runs,
                        seed: point.seed,
                        error: e.to_string(),
                    }
                }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Write serializable records as CSV with a header row, in order.
pub fn write_csv<T: Serialize, W: std::io::Write>(records: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Write records to a CSV file.
pub fn emit_csv<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<()> {
    write_csv(records, std::fs::File::create(path)?)
}
