//! `harvest`: stability reports, DP solves, closed-loop simulation, threshold search
//! and parameter sweeps for an energy-harvesting remote estimator.

use clap::{Parser, Subcommand};
use harvest_core::dp::{read_policies_csv, solve_average, solve_finite, write_table_csv, write_tables_csv, Stage};
use harvest_core::harness::sweep::{default_actions, rvi_options, simulation_options, solve_threshold};
use harvest_core::harness::{
    build_grid, load_config, simulate, sweep, write_csv, Controller, ExperimentConfig, Horizon, InfoKind, SolverKind,
    SweepAxis,
};
use harvest_core::stability::{check_a2, empirical_bound_fit, minimal_rho};
use harvest_core::{Error, Result};
use serde::Serialize;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "harvest", version, about)]
struct Cli {
    /// TOML experiment configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for belief sampling and simulation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of points on the covariance grid.
    #[arg(long, global = true)]
    grid_points: Option<usize>,
    /// Acknowledgment channel as `eta=<f>,eps=<f>`.
    #[arg(long, global = true, value_parser = parse_feedback)]
    feedback: Option<(f64, f64)>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the full-harvest stability condition.
    Stability {
        /// Contraction factor in [0, 1); defaults to the smallest one that satisfies the condition.
        #[arg(long)]
        rho: Option<f64>,
        /// Also fit an exponential bound to a simulated full-harvest covariance curve.
        #[arg(long)]
        fit: bool,
        #[arg(long, default_value_t = 10_000)]
        runs: usize,
        #[arg(long, default_value_t = 60)]
        steps: usize,
    },
    /// Solve the DP and write the value and policy tables.
    Solve {
        #[arg(long, required_unless_present = "average", conflicts_with = "average")]
        horizon: Option<usize>,
        #[arg(long)]
        average: bool,
        /// Information coordinate: covariance, belief or estimate.
        #[arg(long, value_parser = parse_info)]
        info: Option<InfoKind>,
    },
    /// Simulate a policy table written by `solve` with the same configuration.
    Simulate {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, value_parser = parse_info)]
        info: Option<InfoKind>,
    },
    /// Search binary threshold policies under the average cost.
    ThresholdSearch,
    /// Solve and simulate along one configuration axis.
    Sweep {
        /// b_max, gain_mean, horizon or feedback.
        #[arg(long, value_parser = parse_axis)]
        axis: Option<SweepAxis>,
        /// Comma-separated axis values; feedback values are `eta:eps` pairs.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// Comma-separated solvers: optimal, suboptimal, noncausal, threshold.
        #[arg(long, value_delimiter = ',', value_parser = parse_solver)]
        solvers: Vec<SolverKind>,
    },
}

fn parse_feedback(s: &str) -> std::result::Result<(f64, f64), String> {
    let (mut eta, mut eps) = (None, None);
    for part in s.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{part}`"))?;
        let value: f64 = value.trim().parse().map_err(|e| format!("`{value}`: {e}"))?;
        match key.trim() {
            "eta" => eta = Some(value),
            "eps" | "epsilon" => eps = Some(value),
            other => return Err(format!("unknown key `{other}`, expected eta or eps")),
        }
    }
    match (eta, eps) {
        (Some(eta), Some(eps)) => Ok((eta, eps)),
        _ => Err("both eta and eps are required".into()),
    }
}

fn parse_info(s: &str) -> std::result::Result<InfoKind, String> {
    InfoKind::parse(s).ok_or_else(|| format!("`{s}` is not one of covariance, belief, estimate"))
}

fn parse_axis(s: &str) -> std::result::Result<SweepAxis, String> {
    SweepAxis::parse(s).ok_or_else(|| format!("`{s}` is not one of b_max, gain_mean, horizon, feedback"))
}

fn parse_solver(s: &str) -> std::result::Result<SolverKind, String> {
    [
        SolverKind::Optimal,
        SolverKind::Suboptimal,
        SolverKind::Noncausal,
        SolverKind::Threshold,
    ]
    .into_iter()
    .find(|k| k.name() == s)
    .ok_or_else(|| format!("`{s}` is not one of optimal, suboptimal, noncausal, threshold"))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Schema { .. } => 2,
        Error::NoConvergence { .. } | Error::Unbounded { .. } => 3,
        _ => 1,
    }
}

/// The configuration file, or the defaults, with the global flags applied.
fn configuration(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.grid_points {
        cfg.grids.cov_points = n;
    }
    if let Some((eta, eps)) = cli.feedback {
        cfg.feedback.eta = eta;
        cfg.feedback.epsilon = eps;
    }
    Ok(cfg)
}

fn writer(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(io::stdout().lock()),
    })
}

#[derive(Serialize)]
struct SimulationSummary {
    mean_cost: f64,
    ci_half_width: f64,
    mean_energy: f64,
    n_runs: usize,
    seed: u64,
}

#[derive(Serialize)]
struct ThresholdRow {
    info_index: usize,
    info_trace: f64,
    gain: f64,
    harvest: Option<f64>,
    b_star: f64,
}

fn stability(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    rho: Option<f64>,
    fit: bool,
    runs: usize,
    steps: usize,
) -> Result<()> {
    let exp = cfg.experiment()?;
    let b_max = exp.battery.b_max;
    let rho = match rho {
        Some(r) => r,
        None => minimal_rho(&exp.gain, &exp.harvest, b_max, &exp.dropout, &exp.model)?.unwrap_or(0.99),
    };
    let report = if fit {
        empirical_bound_fit(
            &exp.model,
            &exp.gain,
            &exp.harvest,
            &exp.battery,
            &exp.dropout,
            rho,
            runs,
            steps,
            cfg.seed,
        )?
    } else {
        check_a2(&exp.gain, &exp.harvest, b_max, &exp.dropout, rho, &exp.model)?
    };
    print!("{}", report.to_key_value());
    if let Some(path) = out {
        std::fs::write(path, report.to_csv()?)?;
    }
    Ok(())
}

fn solve(cfg: &ExperimentConfig, out: Option<&Path>, info: Option<InfoKind>) -> Result<()> {
    let exp = cfg.experiment()?;
    let kind = info.unwrap_or_else(|| InfoKind::optimal_for(&exp));
    let grid = build_grid(cfg, &exp, kind, default_actions(cfg))?;
    let mut w = writer(out)?;
    match cfg.horizon {
        Horizon::Finite(t) => {
            let (tables, policies) = solve_finite(t, &grid, &exp.model, &exp.dropout, &exp.feedback)?;
            write_tables_csv(&grid, &tables, &policies, &mut w)?;
            eprintln!("horizon = {t}\ninfo = {}\nstates = {}", kind.name(), grid.len());
        }
        Horizon::Average => {
            let sol = solve_average(&grid, &exp.model, &exp.dropout, &exp.feedback, &rvi_options(cfg))?;
            write_table_csv(&grid, &sol.values, &sol.policy, &mut w)?;
            eprintln!(
                "rho = {}\niterations = {}\ninfo = {}\nstates = {}",
                sol.rho,
                sol.iterations,
                kind.name(),
                grid.len()
            );
        }
    }
    w.flush()?;
    Ok(())
}

fn simulate_policy(
    cfg: &mut ExperimentConfig,
    out: Option<&Path>,
    policy: &Path,
    info: Option<InfoKind>,
) -> Result<()> {
    let exp = cfg.experiment()?;
    let kind = info.unwrap_or_else(|| InfoKind::optimal_for(&exp));
    let grid = build_grid(cfg, &exp, kind, default_actions(cfg))?;
    let policies = read_policies_csv(&grid, File::open(policy)?)?;
    let result = if policies[0].stage == Stage::Stationary {
        simulate(
            &Controller::Stationary {
                grid: &grid,
                policy: &policies[0],
            },
            &exp,
            &simulation_options(cfg),
        )?
    } else {
        cfg.horizon = Horizon::Finite(policies.len());
        simulate(
            &Controller::Staged {
                grid: &grid,
                policies: &policies,
            },
            &exp,
            &simulation_options(cfg),
        )?
    };
    let summary = SimulationSummary {
        mean_cost: result.mean_cost,
        ci_half_width: result.ci_half_width,
        mean_energy: result.mean_energy,
        n_runs: result.n_runs,
        seed: cfg.seed,
    };
    println!(
        "mean_cost = {}\nci_half_width = {}\nmean_energy = {}\nn_runs = {}\nseed = {}",
        summary.mean_cost, summary.ci_half_width, summary.mean_energy, summary.n_runs, summary.seed
    );
    if let Some(path) = out {
        write_csv(&[summary], File::create(path)?)?;
    }
    Ok(())
}

fn threshold_search(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<()> {
    let exp = cfg.experiment()?;
    let (grid, search) = solve_threshold(cfg, &exp)?;
    let [ni, ng, nh, _] = grid.shape();
    let mut rows = Vec::with_capacity(ni * ng * nh);
    for i in 0..ni {
        for g in 0..ng {
            for h in 0..nh {
                rows.push(ThresholdRow {
                    info_index: i,
                    info_trace: grid.info.coordinate(i),
                    gain: grid.gain.value(g),
                    harvest: (!grid.harvest.is_iid()).then(|| grid.harvest.value(h)),
                    b_star: search.policy.b_star[(i * ng + g) * nh + h],
                });
            }
        }
    }
    let mut w = writer(out)?;
    write_csv(&rows, &mut w)?;
    w.flush()?;
    let restarts: Vec<String> = search.restart_costs.iter().map(|c| c.to_string()).collect();
    eprintln!(
        "rho = {}\ne0 = {}\ne1 = {}\nrestart_costs = [{}]",
        search.rho,
        search.policy.levels.e0,
        search.policy.levels.e1,
        restarts.join(", ")
    );
    Ok(())
}

fn run_sweep(
    cfg: &mut ExperimentConfig,
    out: Option<&Path>,
    axis: Option<SweepAxis>,
    values: &[String],
    solvers: &[SolverKind],
) -> Result<()> {
    if let Some(axis) = axis {
        cfg.sweep.axis = Some(axis);
    }
    if !values.is_empty() {
        if cfg.sweep.axis == Some(SweepAxis::Feedback) {
            cfg.sweep.feedback_pairs = values
                .iter()
                .map(|v| {
                    let pair = v
                        .split_once(':')
                        .and_then(|(a, b)| Some([a.parse().ok()?, b.parse().ok()?]));
                    pair.ok_or_else(|| Error::schema("--values", "eta:eps pairs"))
                })
                .collect::<Result<_>>()?;
        } else {
            cfg.sweep.values = values
                .iter()
                .map(|v| {
                    v.parse()
                        .map_err(|_| Error::schema("--values", "comma-separated reals"))
                })
                .collect::<Result<_>>()?;
        }
    }
    if !solvers.is_empty() {
        cfg.sweep.solvers = solvers.to_vec();
    }
    let rows = sweep(cfg)?;
    let mut w = writer(out)?;
    write_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = configuration(cli)?;
    if let Command::Solve { horizon, .. } = &cli.command {
        cfg.horizon = horizon.map_or(Horizon::Average, Horizon::Finite);
    }
    cfg.validate()?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Stability { rho, fit, runs, steps } => stability(&cfg, out, *rho, *fit, *runs, *steps),
        Command::Solve { info, .. } => solve(&cfg, out, *info),
        Command::Simulate { policy, info } => simulate_policy(&mut cfg, out, policy, *info),
        Command::ThresholdSearch => threshold_search(&cfg, out),
        Command::Sweep { axis, values, solvers } => run_sweep(&mut cfg, out, *axis, values, solvers),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
