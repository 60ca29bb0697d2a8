//! Seeded closed-loop Monte Carlo simulation.
//!
//! Run `r` draws its gain and harvest realization from stream `2r` and its packet and
//! acknowledgment outcomes from stream `2r + 1` of a ChaCha generator keyed by the
//! seed, so every policy evaluated with the same seed sees the same realizations.

use super::config::Experiment;
use crate::belief::{
    belief_update, branch_weights, Belief, CovGrid, GridBelief, Projection, DEFAULT_SUPPORT_CAP, PRUNE_THRESHOLD,
};
use crate::dp::{solve_noncausal, InfoAxis, Policy, StateGrid};
use crate::error::{Error, Result};
use crate::model::{
    battery_step, packet_success_prob, riccati_step, sample_feedback, sample_process, Cov, SystemModel,
};
use crate::structural::ThresholdPolicy;
use crate::subopt::p_hat_step;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// What the sensor knows when it picks the energy for step `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorView {
    pub k: usize,
    pub g: f64,
    pub h: f64,
    pub b: f64,
}

pub type PolicyFn = dyn Fn(&SensorView) -> f64 + Sync;

/// Source of the allocation `u_k`.
#[derive(Clone, Copy)]
pub enum Controller<'a> {
    /// Stationary table over a DP grid.
    Stationary { grid: &'a StateGrid, policy: &'a Policy },
    /// One table per stage of a finite-horizon solution.
    Staged {
        grid: &'a StateGrid,
        policies: &'a [Policy],
    },
    Threshold {
        grid: &'a StateGrid,
        policy: &'a ThresholdPolicy,
    },
    /// Any rule of the observable quantities.
    Callback(&'a PolicyFn),
}

impl Controller<'_> {
    fn grid(&self) -> Option<&StateGrid> {
        match self {
            Controller::Stationary { grid, .. }
            | Controller::Staged { grid, .. }
            | Controller::Threshold { grid, .. } => Some(grid),
            Controller::Callback(_) => None,
        }
    }
}

/// Finite-horizon sum or long-run average with a discarded burn-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMode {
    Finite(usize),
    Average { steps: usize, burn_in: usize },
}

impl CostMode {
    pub fn steps(&self) -> usize {
        match *self {
            CostMode::Finite(t) => t,
            CostMode::Average { steps, .. } => steps,
        }
    }

    fn first_counted(&self) -> usize {
        match *self {
            CostMode::Finite(_) => 0,
            CostMode::Average { burn_in, .. } => burn_in,
        }
    }

    /// Cost of one run from its per-step costs.
    fn reduce(&self, costs: &[f64]) -> f64 {
        let counted = &costs[self.first_counted()..];
        match self {
            CostMode::Finite(_) => counted.iter().sum(),
            CostMode::Average { .. } => counted.iter().sum::<f64>() / counted.len() as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub n_runs: usize,
    pub mode: CostMode,
    pub seed: u64,
    /// Number of runs whose full trajectories are kept.
    pub keep_trajectories: usize,
}

/// One closed-loop step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub k: usize,
    pub g: f64,
    pub h: f64,
    pub b: f64,
    pub u: f64,
    pub gamma: bool,
    pub gamma_hat: u8,
    /// `tr(P_k)` before the transmission.
    pub trace_p: f64,
    /// `tr(P_{k+1})`, the cost charged for step `k`.
    pub trace_p_next: f64,
    pub trace_p_hat: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub mean_cost: f64,
    /// `1.96` standard errors across runs.
    pub ci_half_width: f64,
    /// Mean transmitted energy per counted step.
    pub mean_energy: f64,
    pub n_runs: usize,
    pub run_costs: Vec<f64>,
    pub trajectories: Vec<Vec<TrajectoryRecord>>,
}

/// Mean and `1.96`-standard-error half width.
pub fn mean_and_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

fn process_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * run as u64);
    rng
}

fn channel_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * run as u64 + 1);
    rng
}

/// `(g_k, H_k)` for `k = 0..len` of run `run`.
pub fn realization(exp: &Experiment, seed: u64, run: usize, len: usize) -> Result<Vec<(f64, f64)>> {
    let mut rng = process_rng(seed, run);
    let mut out = Vec::with_capacity(len);
    let mut prev: Option<(f64, f64)> = None;
    for _ in 0..len {
        let g = sample_process(&exp.gain, prev.map(|p| p.0), &mut rng)?;
        let h = sample_process(&exp.harvest, prev.map(|p| p.1), &mut rng)?;
        out.push((g, h));
        prev = Some((g, h));
    }
    Ok(out)
}

/// Coefficients of the scalar Riccati map.
#[derive(Debug, Clone, Copy)]
struct ScalarRiccati {
    a2: f64,
    c2: f64,
    q: f64,
    r: f64,
}

impl ScalarRiccati {
    fn new(model: &SystemModel) -> Option<Self> {
        model.is_scalar().then(|| {
            let (a, c) = (model.a()[(0, 0)], model.c()[(0, 0)]);
            ScalarRiccati {
                a2: a * a,
                c2: c * c,
                q: model.q()[(0, 0)],
                r: model.r()[(0, 0)],
            }
        })
    }

    fn step(&self, p: f64, gamma: bool) -> f64 {
        let open = self.a2 * p + self.q;
        if gamma {
            open - self.a2 * self.c2 * p * p / (self.c2 * p + self.r)
        } else {
            open
        }
    }
}

/// True covariance, with an allocation-free path for scalar systems.
#[derive(Debug, Clone)]
enum TrueCov {
    Scalar(ScalarRiccati, f64),
    Matrix(Cov),
}

impl TrueCov {
    fn new(model: &SystemModel) -> Self {
        match ScalarRiccati::new(model) {
            Some(m) => TrueCov::Scalar(m, model.p0()[(0, 0)]),
            None => TrueCov::Matrix(model.p0().clone()),
        }
    }

    fn trace(&self) -> f64 {
        match self {
            TrueCov::Scalar(_, p) => *p,
            TrueCov::Matrix(p) => p.trace(),
        }
    }

    fn step(&mut self, gamma: bool, model: &SystemModel) -> Result<()> {
        match self {
            TrueCov::Scalar(m, p) => *p = m.step(*p, gamma),
            TrueCov::Matrix(p) => *p = riccati_step(p, gamma, model)?,
        }
        Ok(())
    }
}

/// Scalar information state as `(covariance, weight)` atoms sorted by covariance,
/// updated with the same merge, pruning and support cap as [`belief_update`].
#[derive(Debug, Clone)]
struct ScalarBelief {
    model: ScalarRiccati,
    atoms: Vec<(f64, f64)>,
    cap: usize,
}

impl ScalarBelief {
    fn update(&mut self, c0: f64, c1: f64) -> Result<()> {
        let mut next = Vec::with_capacity(2 * self.atoms.len());
        for &(p, w) in &self.atoms {
            for (gamma, c) in [(false, c0), (true, c1)] {
                if w * c != 0.0 {
                    next.push((self.model.step(p, gamma), w * c));
                }
            }
        }
        if next.is_empty() {
            return Err(Error::EmptyBelief);
        }
        next.sort_by(|a, b| a.0.total_cmp(&b.0));
        next.dedup_by(|b, a| {
            let same = a.0 == b.0;
            if same {
                a.1 += b.1;
            }
            same
        });
        let total: f64 = next.iter().map(|a| a.1).sum();
        for a in &mut next {
            a.1 /= total;
        }
        if next.len() > self.cap && next.iter().any(|a| a.1 >= PRUNE_THRESHOLD) {
            next.retain(|a| a.1 >= PRUNE_THRESHOLD);
            let total: f64 = next.iter().map(|a| a.1).sum();
            for a in &mut next {
                a.1 /= total;
            }
        }
        while next.len() > self.cap {
            let i = (0..next.len() - 1)
                .min_by(|&i, &j| (next[i + 1].0 - next[i].0).total_cmp(&(next[j + 1].0 - next[j].0)))
                .expect("at least two atoms");
            let (pr, wr) = next.remove(i + 1);
            let (pl, wl) = next[i];
            let w = wl + wr;
            next[i] = (if w > 0.0 { (pl * wl + pr * wr) / w } else { pl }, w);
        }
        self.atoms = next;
        Ok(())
    }

    fn project(&self, grid: &CovGrid, projection: Projection) -> Result<GridBelief> {
        let mut weights = vec![0.0; grid.len()];
        for &(p, w) in &self.atoms {
            for (j, f) in grid.project(p, projection) {
                weights[j] += w * f;
            }
        }
        GridBelief::from_raw(weights)
    }
}

/// The sensor-side information coordinate a table policy is indexed by.
#[derive(Debug, Clone)]
enum Tracker {
    /// The true covariance is known (perfect acknowledgments).
    Exact,
    Belief(Belief),
    ScalarBelief(ScalarBelief),
    Estimate(Cov),
}

impl Tracker {
    fn new(grid: &StateGrid, exp: &Experiment) -> Result<Self> {
        match &grid.info {
            InfoAxis::Dirac { .. } => {
                if !exp.feedback.is_perfect() {
                    return Err(Error::InvalidModel(
                        "a covariance-indexed policy needs perfect acknowledgments".into(),
                    ));
                }
                Ok(Tracker::Exact)
            }
            InfoAxis::Belief { .. } => Ok(match ScalarRiccati::new(&exp.model) {
                Some(model) => Tracker::ScalarBelief(ScalarBelief {
                    model,
                    atoms: vec![(exp.model.p0()[(0, 0)], 1.0)],
                    cap: DEFAULT_SUPPORT_CAP,
                }),
                None => Tracker::Belief(Belief::dirac(exp.model.p0().clone(), DEFAULT_SUPPORT_CAP)),
            }),
            InfoAxis::Estimate { .. } => Ok(Tracker::Estimate(exp.model.p0().clone())),
        }
    }

    /// Information-axis members the policy is read at, with mixing weights.
    ///
    /// Beliefs use the same mean-preserving bracket as the DP successor lookup.
    fn index(&self, grid: &StateGrid, truth: &TrueCov) -> Result<Vec<(usize, f64)>> {
        Ok(match (self, &grid.info) {
            (
                Tracker::Belief(b),
                InfoAxis::Belief {
                    grid: cov,
                    beliefs,
                    dynamics,
                },
            ) => beliefs.bracket(&GridBelief::from_belief_with(b, cov, dynamics.projection)?),
            (
                Tracker::ScalarBelief(b),
                InfoAxis::Belief {
                    grid: cov,
                    beliefs,
                    dynamics,
                },
            ) => beliefs.bracket(&b.project(cov, dynamics.projection)?),
            (Tracker::Estimate(p), _) => vec![(grid.info.grid().nearest(p.trace()), 1.0)],
            _ => vec![(grid.info.grid().nearest(truth.trace()), 1.0)],
        })
    }

    fn p_hat_trace(&self) -> Option<f64> {
        match self {
            Tracker::Estimate(p) => Some(p.trace()),
            _ => None,
        }
    }

    fn update(&mut self, exp: &Experiment, gamma_hat: u8, g: f64, u: f64) -> Result<()> {
        match self {
            Tracker::Exact => {}
            Tracker::Belief(b) => {
                *b = belief_update(b, gamma_hat, g, u, &exp.model, &exp.dropout, &exp.feedback)?;
            }
            Tracker::ScalarBelief(b) => {
                let (c0, c1) = branch_weights(gamma_hat, packet_success_prob(g, u, &exp.dropout), &exp.feedback)?;
                b.update(c0, c1)?;
            }
            Tracker::Estimate(p) => {
                *p = p_hat_step(p, gamma_hat, g, u, &exp.model, &exp.dropout, &exp.feedback)?;
            }
        }
        Ok(())
    }
}

fn choose_action(ctrl: &Controller, tracker: &Tracker, truth: &TrueCov, view: &SensorView) -> Result<f64> {
    let Some(grid) = ctrl.grid() else {
        let Controller::Callback(f) = ctrl else { unreachable!() };
        return Ok(f(view));
    };
    let members = tracker.index(grid, truth)?;
    let g = grid.gain.lookup(view.g);
    let h = grid.harvest_slice(grid.harvest.lookup(view.h));
    let mut u = 0.0;
    for &(i, w) in &members {
        u += w * match ctrl {
            Controller::Stationary { policy, .. } => policy.action_at(grid, i, g, h, view.b)?,
            Controller::Staged { policies, .. } => {
                let stage = view.k.min(policies.len() - 1);
                policies[stage].action_at(grid, i, g, h, view.b)?
            }
            Controller::Threshold { policy, .. } => {
                let [_, ng, nh, _] = grid.shape();
                policy.action((i * ng + g) * nh + h, view.b)
            }
            Controller::Callback(_) => unreachable!(),
        };
    }
    Ok(u.min(view.b))
}

struct RunOutcome {
    cost: f64,
    energy: f64,
    records: Option<Vec<TrajectoryRecord>>,
}

fn run_once(ctrl: &Controller, exp: &Experiment, opts: &SimulationOptions, run: usize) -> Result<RunOutcome> {
    let steps = opts.mode.steps();
    let real = realization(exp, opts.seed, run, steps + 1)?;
    let mut rng = channel_rng(opts.seed, run);
    let mut truth = TrueCov::new(&exp.model);
    let mut tracker = match ctrl.grid() {
        Some(grid) => Tracker::new(grid, exp)?,
        None => Tracker::Exact,
    };
    let keep = run < opts.keep_trajectories;
    let mut records = keep.then(|| Vec::with_capacity(steps));
    let mut costs = Vec::with_capacity(steps);
    let mut energies = Vec::with_capacity(steps);
    let mut b = exp.battery.b0;
    for (k, &(g, h)) in real.iter().take(steps).enumerate() {
        let view = SensorView { k, g, h, b };
        let u = choose_action(ctrl, &tracker, &truth, &view)?;
        if !(0.0..=b + 1e-12).contains(&u) {
            log::error!("run {run} step {k}: allocation {u} with battery {b}, gain {g}, harvest {h}");
            return Err(Error::InfeasibleAction { u, battery: b });
        }
        let p1 = packet_success_prob(g, u, &exp.dropout);
        let gamma = rng.random::<f64>() < p1;
        let gamma_hat = sample_feedback(gamma, &exp.feedback, &mut rng);
        let trace_p = truth.trace();
        let trace_p_hat = tracker.p_hat_trace();
        truth.step(gamma, &exp.model)?;
        tracker.update(exp, gamma_hat, g, u)?;
        costs.push(truth.trace());
        energies.push(u);
        if let Some(r) = records.as_mut() {
            r.push(TrajectoryRecord {
                k,
                g,
                h,
                b,
                u,
                gamma,
                gamma_hat,
                trace_p,
                trace_p_next: truth.trace(),
                trace_p_hat,
            });
        }
        b = battery_step(b, u, real[k + 1].1, &exp.battery)?;
    }
    let first = opts.mode.first_counted();
    let counted = &energies[first..];
    Ok(RunOutcome {
        cost: opts.mode.reduce(&costs),
        energy: counted.iter().sum::<f64>() / counted.len() as f64,
        records,
    })
}

/// Monte Carlo estimate of the cost of a controller.
pub fn simulate(ctrl: &Controller, exp: &Experiment, opts: &SimulationOptions) -> Result<SimulationResult> {
    if opts.n_runs == 0 || opts.mode.steps() == 0 || opts.mode.first_counted() >= opts.mode.steps() {
        return Err(Error::InvalidModel("simulation needs runs and counted steps".into()));
    }
    if let Controller::Staged { policies, .. } = ctrl {
        if policies.is_empty() {
            return Err(Error::InvalidModel("no stage policies".into()));
        }
    }
    let outcomes = (0..opts.n_runs)
        .into_par_iter()
        .map(|r| run_once(ctrl, exp, opts, r))
        .collect::<Result<Vec<_>>>()?;
    let run_costs: Vec<f64> = outcomes.iter().map(|o| o.cost).collect();
    let (mean_cost, ci_half_width) = mean_and_ci(&run_costs);
    let mean_energy = outcomes.iter().map(|o| o.energy).sum::<f64>() / opts.n_runs as f64;
    let trajectories = outcomes.into_iter().filter_map(|o| o.records).collect();
    Ok(SimulationResult {
        mean_cost,
        ci_half_width,
        mean_energy,
        n_runs: opts.n_runs,
        run_costs,
        trajectories,
    })
}

/// Clairvoyant DP cost on the realizations [`simulate`] would draw with the same seed.
pub fn simulate_noncausal(grid: &StateGrid, exp: &Experiment, opts: &SimulationOptions) -> Result<SimulationResult> {
    let steps = opts.mode.steps();
    let first = opts.mode.first_counted();
    if opts.n_runs == 0 || steps == 0 || first >= steps {
        return Err(Error::InvalidModel("simulation needs runs and counted steps".into()));
    }
    let outcomes = (0..opts.n_runs)
        .into_par_iter()
        .map(|r| {
            let real = realization(exp, opts.seed, r, steps)?;
            let sol = solve_noncausal(&real, grid, &exp.model, &exp.dropout, &exp.feedback, exp.battery.b0)?;
            let counted = &sol.expected_energy[first..];
            Ok((
                opts.mode.reduce(&sol.expected_costs),
                counted.iter().sum::<f64>() / counted.len() as f64,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let run_costs: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let (mean_cost, ci_half_width) = mean_and_ci(&run_costs);
    let mean_energy = outcomes.iter().map(|o| o.1).sum::<f64>() / opts.n_runs as f64;
    Ok(SimulationResult {
        mean_cost,
        ci_half_width,
        mean_energy,
        n_runs: opts.n_runs,
        run_costs,
        trajectories: Vec::new(),
    })
}
