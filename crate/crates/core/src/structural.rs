//! Threshold policies for two transmission levels, the gradient-estimate threshold
//! search, and numerical checks of the monotone/convex/submodular structure.

use crate::dp::{evaluate_average, relative_value_iteration, Policy, RviOptions, Solver, Stage, StateGrid};
use crate::error::{Error, Result};
use crate::model::SystemModel;
use rayon::prelude::*;
use serde::Serialize;

/// Two transmission energies `E0 < E1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryActionSet {
    pub e0: f64,
    pub e1: f64,
}

impl BinaryActionSet {
    pub fn new(e0: f64, e1: f64, b_max: f64) -> Result<Self> {
        if !(0.0 <= e0 && e0 < e1 && e1 <= b_max) {
            return Err(Error::schema("threshold", format!("energies 0 <= e0 < e1 <= {b_max}")));
        }
        Ok(BinaryActionSet { e0, e1 })
    }

    /// Action grid for the DP: the two levels plus zero as the infeasibility fallback.
    pub fn action_grid(&self) -> Vec<f64> {
        if self.e0 == 0.0 {
            vec![0.0, self.e1]
        } else {
            vec![0.0, self.e0, self.e1]
        }
    }

    /// Feasible level for battery `b` given the intended level `u`.
    pub fn feasible(&self, u: f64, b: f64) -> f64 {
        if u <= b + 1e-12 {
            return u;
        }
        log::debug!("threshold action {u} infeasible at battery {b}; falling back");
        if self.e0 <= b + 1e-12 {
            self.e0
        } else {
            0.0
        }
    }
}

/// Step sizes `omega_n = omega / (n + 1)^kappa` and `sigma_n = sigma / (n + 1)^kappa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientSchedule {
    pub omega: f64,
    pub sigma_step: f64,
    pub kappa: f64,
}

impl Default for GradientSchedule {
    fn default() -> Self {
        GradientSchedule {
            omega: 0.1,
            sigma_step: 0.5,
            kappa: 1.0,
        }
    }
}

impl GradientSchedule {
    pub fn new(omega: f64, sigma_step: f64, kappa: f64) -> Result<Self> {
        if !(omega > 0.0) {
            return Err(Error::schema("threshold.omega", "a positive real"));
        }
        if !(sigma_step > 0.0) {
            return Err(Error::schema("threshold.sigma", "a positive real"));
        }
        if !(kappa > 0.5 && kappa <= 1.0) {
            return Err(Error::schema("threshold.kappa", "a real in (0.5, 1]"));
        }
        Ok(GradientSchedule {
            omega,
            sigma_step,
            kappa,
        })
    }

    pub fn omega_n(&self, n: usize) -> f64 {
        self.omega / ((n + 1) as f64).powf(self.kappa)
    }

    pub fn sigma_n(&self, n: usize) -> f64 {
        self.sigma_step / ((n + 1) as f64).powf(self.kappa)
    }
}

/// Clip the minimizer of the unconstrained convex problem to `[0, B]`.
pub fn clipped_policy_from_unconstrained(u_star: f64, b: f64) -> f64 {
    if u_star <= 0.0 {
        0.0
    } else if u_star < b {
        u_star
    } else {
        b
    }
}

/// One two-sided finite-difference step on the threshold, clipped to `[-B_max, 2 B_max]`.
pub fn gradient_step(
    b_star: f64,
    n: usize,
    schedule: &GradientSchedule,
    b_max: f64,
    mut j: impl FnMut(f64) -> f64,
) -> f64 {
    let w = schedule.omega_n(n);
    let grad = (j(b_star + w) - j(b_star - w)) / (2.0 * w);
    let next = b_star - schedule.sigma_n(n) * grad;
    let (lo, hi) = (-b_max, 2.0 * b_max);
    if !(lo..=hi).contains(&next) {
        log::debug!("threshold {next} left [{lo}, {hi}] and was clipped");
        return next.clamp(lo, hi);
    }
    next
}

/// Run `n_iters` gradient steps on a scalar objective `J(B*)` starting at `initial`.
pub fn threshold_search(
    initial: f64,
    schedule: &GradientSchedule,
    b_max: f64,
    n_iters: usize,
    mut j: impl FnMut(f64) -> f64,
) -> Vec<f64> {
    let mut trace = Vec::with_capacity(n_iters + 1);
    let mut b = initial;
    trace.push(b);
    for n in 0..n_iters {
        b = gradient_step(b, n, schedule, b_max, &mut j);
        trace.push(b);
    }
    trace
}

/// Battery thresholds per `(info, gain, harvest)` slice of a [`StateGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdPolicy {
    pub levels: BinaryActionSet,
    pub b_star: Vec<f64>,
}

impl ThresholdPolicy {
    /// `E0` when `B <= B*`, else `E1`, falling back when the level is not affordable.
    pub fn action(&self, slice: usize, b: f64) -> f64 {
        let u = if b <= self.b_star[slice] {
            self.levels.e0
        } else {
            self.levels.e1
        };
        self.levels.feasible(u, b)
    }

    /// Tabulate on the battery points of `grid`.
    pub fn to_policy(&self, grid: &StateGrid) -> Policy {
        let nb = grid.battery().len();
        let actions = (0..grid.len())
            .map(|s| self.action(s / nb, grid.battery()[s % nb]))
            .collect();
        Policy {
            stage: Stage::Stationary,
            actions,
        }
    }
}

/// Options for the threshold search inside relative value iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdOptions {
    pub schedule: GradientSchedule,
    /// Gradient iterations per relative value iteration sweep.
    pub inner_steps: usize,
    pub restarts: usize,
    pub rvi: RviOptions,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        ThresholdOptions {
            schedule: GradientSchedule::default(),
            inner_steps: 50,
            restarts: 5,
            rvi: RviOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ThresholdSearch {
    pub policy: ThresholdPolicy,
    /// Average cost of the returned policy.
    pub rho: f64,
    /// Average cost reached from each initial threshold.
    pub restart_costs: Vec<f64>,
}

/// Smoothed slice objective `sum_b cell * [theta_b l1(b) + (1 - theta_b) l0(b)]`, where
/// `theta_b(B*)` is a ramp of one battery cell centered on `B*`.
fn slice_objective(b_star: f64, battery: &[f64], q0: &[f64], q1: &[f64]) -> f64 {
    let cell = battery[1] - battery[0];
    battery
        .iter()
        .zip(q0.iter().zip(q1))
        .map(|(&b, (&l0, &l1))| {
            let theta = ((b - b_star) / cell + 0.5).clamp(0.0, 1.0);
            cell * (theta * l1 + (1.0 - theta) * l0)
        })
        .sum()
}

/// The better of `current` and the best cell midpoint, where the smoothed objective
/// equals the exact threshold objective.
fn coarse_threshold(current: f64, battery: &[f64], objective: &impl Fn(f64) -> f64) -> f64 {
    let cell = battery[1] - battery[0];
    let mut best = (objective(current), current);
    for i in 0..=battery.len() {
        let x = battery[0] + (i as f64 - 0.5) * cell;
        let j = objective(x);
        if j < best.0 {
            best = (j, x);
        }
    }
    best.1
}

/// Threshold search embedded in relative value iteration (perfect acknowledgments).
///
/// Every sweep scans the cell midpoints of each slice on the objective built from the
/// previous relative values, then runs `inner_steps` gradient iterations starting from
/// the better of that scan and the slice's current threshold, keeps the best iterate, and
/// then applies the resulting threshold rule. Each restart starts all slices at the same
/// threshold; restarts are spread evenly over `[0, B_max]`.
pub fn search_threshold_policy(
    solver: &Solver,
    model: &SystemModel,
    levels: BinaryActionSet,
    opts: &ThresholdOptions,
) -> Result<ThresholdSearch> {
    let grid = solver.grid();
    let actions = grid.actions();
    let index_of = |u: f64| {
        actions
            .iter()
            .position(|&a| (a - u).abs() <= 1e-9)
            .ok_or_else(|| Error::InvalidModel(format!("threshold level {u} is not on the action grid")))
    };
    let (a0, a1, a_zero) = (index_of(levels.e0)?, index_of(levels.e1)?, index_of(0.0)?);
    let nb = grid.battery().len();
    let n_slices = grid.len() / nb;
    let battery = grid.battery().to_vec();
    let reference = opts.rvi.reference.unwrap_or_else(|| grid.reference_state(model));
    let restarts = opts.restarts.max(1);
    let mut best: Option<ThresholdSearch> = None;
    let mut restart_costs = Vec::with_capacity(restarts);
    for r in 0..restarts {
        let start = if restarts == 1 {
            0.5 * grid.b_max()
        } else {
            grid.b_max() * r as f64 / (restarts - 1) as f64
        };
        let mut b_star = vec![start; n_slices];
        let choose = |b: usize, want: usize| -> usize {
            if solver.is_feasible(b, want) {
                want
            } else if solver.is_feasible(b, a0) {
                a0
            } else {
                a_zero
            }
        };
        let outcome = relative_value_iteration(grid, reference, &opts.rvi, |v, _| {
            let next = solver.expected_next(v);
            let updated: Vec<(f64, Vec<f64>, Vec<usize>)> = b_star
                .par_iter()
                .enumerate()
                .map(|(slice, &bs)| {
                    let base = slice * nb;
                    let q0: Vec<f64> = (0..nb)
                        .map(|b| solver.q_value(&next, base + b, choose(b, a0)))
                        .collect();
                    let q1: Vec<f64> = (0..nb)
                        .map(|b| solver.q_value(&next, base + b, choose(b, a1)))
                        .collect();
                    let objective = |x: f64| slice_objective(x, &battery, &q0, &q1);
                    let bs = coarse_threshold(bs, &battery, &objective);
                    let bs = threshold_search(bs, &opts.schedule, grid.b_max(), opts.inner_steps, &objective)
                        .into_iter()
                        .map(|x| (objective(x), x))
                        .min_by(|a, b| a.0.total_cmp(&b.0))
                        .expect("search trace starts with the initial threshold")
                        .1;
                    let mut vals = Vec::with_capacity(nb);
                    let mut idx = Vec::with_capacity(nb);
                    for b in 0..nb {
                        if battery[b] <= bs {
                            vals.push(q0[b]);
                            idx.push(choose(b, a0));
                        } else {
                            vals.push(q1[b]);
                            idx.push(choose(b, a1));
                        }
                    }
                    (bs, vals, idx)
                })
                .collect();
            let mut tv = Vec::with_capacity(grid.len());
            let mut idx = Vec::with_capacity(grid.len());
            for (slice, (bs, vals, ids)) in updated.into_iter().enumerate() {
                b_star[slice] = bs;
                tv.extend(vals);
                idx.extend(ids);
            }
            Ok((tv, idx))
        });
        match outcome {
            Ok(_) | Err(Error::NoConvergence { .. }) => {}
            Err(e) => return Err(e),
        }
        let policy = ThresholdPolicy {
            levels,
            b_star: b_star.clone(),
        };
        let eval = evaluate_average(solver, model, &policy.to_policy(grid), &opts.rvi)?;
        log::info!("threshold restart {r} from {start}: average cost {}", eval.rho);
        restart_costs.push(eval.rho);
        if best.as_ref().is_none_or(|b| eval.rho < b.rho) {
            best = Some(ThresholdSearch {
                policy,
                rho: eval.rho,
                restart_costs: Vec::new(),
            });
        }
    }
    let mut best = best.expect("at least one restart");
    best.restart_costs = restart_costs;
    Ok(best)
}

/// A battery step along which the allocation drops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotoneViolation {
    pub slice: usize,
    pub battery_index: usize,
    pub drop: f64,
}

/// Scan each battery row of a policy for `u(B_{i+1}) < u(B_i) - 1e-9`.
pub fn verify_monotone_policy(policy: &Policy, n_battery: usize) -> Vec<MonotoneViolation> {
    policy
        .actions
        .chunks(n_battery)
        .enumerate()
        .flat_map(|(slice, row)| {
            row.windows(2).enumerate().filter_map(move |(i, w)| {
                (w[1] < w[0] - 1e-9).then_some(MonotoneViolation {
                    slice,
                    battery_index: i,
                    drop: w[0] - w[1],
                })
            })
        })
        .collect()
}

/// A grid rectangle on which the stage objective has increasing differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubmodularViolation {
    pub b_lo: usize,
    pub b_hi: usize,
    pub u_lo: usize,
    pub u_hi: usize,
    pub excess: f64,
}

/// Check `L(B', u') - L(B, u') <= L(B', u) - L(B, u) + 1e-8` on every rectangle whose
/// four corners are feasible. `l[b][a]` is `None` where the action is infeasible.
pub fn verify_submodular(l: &[Vec<Option<f64>>]) -> Vec<SubmodularViolation> {
    let mut out = Vec::new();
    let nb = l.len();
    for b in 0..nb {
        for b2 in b + 1..nb {
            let na = l[b].len().min(l[b2].len());
            for a in 0..na {
                for a2 in a + 1..na {
                    let (Some(x), Some(y), Some(z), Some(w)) = (l[b2][a2], l[b][a2], l[b2][a], l[b][a]) else {
                        continue;
                    };
                    let excess = (x - y) - (z - w);
                    if excess > 1e-8 {
                        out.push(SubmodularViolation {
                            b_lo: b,
                            b_hi: b2,
                            u_lo: a,
                            u_hi: a2,
                            excess,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Largest violation of midpoint convexity along each battery row of a value table on a
/// uniform battery grid (0 when convex).
pub fn battery_convexity_gap(values: &[f64], n_battery: usize) -> f64 {
    values
        .chunks(n_battery)
        .flat_map(|row| row.windows(3).map(|w| 2.0 * w[1] - w[0] - w[2]))
        .fold(0.0, f64::max)
}

/// Largest increase along each battery row of a value table (0 when non-increasing).
pub fn battery_monotonicity_gap(values: &[f64], n_battery: usize) -> f64 {
    values
        .chunks(n_battery)
        .flat_map(|row| row.windows(2).map(|w| w[1] - w[0]))
        .fold(0.0, f64::max)
}
