//! Tabulated Bellman operators: finite-horizon backward induction and average-cost
//! relative value iteration over `(info, g, H, B)`.

use super::axis::InfoAxis;
use super::process::ProcessAxis;
use crate::error::{Error, Result};
use crate::model::{packet_success_prob, DropoutChannel, FeedbackChannel, SystemModel};
use rayon::prelude::*;

const FEASIBILITY_TOL: f64 = 1e-12;
const TIE_TOL: f64 = 1e-12;

/// The discretized state and action spaces.
///
/// When the harvest process is i.i.d. the current harvest carries no information
/// beyond the battery level, so the table stores a single harvest slice.
#[derive(Debug, Clone)]
pub struct StateGrid {
    pub info: InfoAxis,
    pub gain: ProcessAxis,
    pub harvest: ProcessAxis,
    battery: Vec<f64>,
    actions: Vec<f64>,
    b_max: f64,
}

impl StateGrid {
    pub fn new(
        info: InfoAxis,
        gain: ProcessAxis,
        harvest: ProcessAxis,
        b_max: f64,
        n_battery: usize,
        actions: Vec<f64>,
    ) -> Result<Self> {
        if !(b_max.is_finite() && b_max > 0.0) {
            return Err(Error::schema("battery.b_max", "a positive energy"));
        }
        if n_battery < 2 {
            return Err(Error::InvalidModel("the battery axis needs at least two points".into()));
        }
        if actions.is_empty()
            || actions.iter().any(|&u| !(0.0..=b_max).contains(&u))
            || actions[0] != 0.0
            || actions.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::InvalidModel(format!(
                "actions must be strictly increasing energies in [0, {b_max}] starting at 0"
            )));
        }
        if info.grid().point(0).nrows() != 1 {
            return Err(Error::NonScalar(info.grid().point(0).nrows()));
        }
        let battery = uniform(b_max, n_battery);
        Ok(StateGrid {
            info,
            gain,
            harvest,
            battery,
            actions,
            b_max,
        })
    }

    pub fn battery(&self) -> &[f64] {
        &self.battery
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn b_max(&self) -> f64 {
        self.b_max
    }

    /// Number of harvest slices stored in the tables.
    pub fn harvest_states(&self) -> usize {
        if self.harvest.is_iid() {
            1
        } else {
            self.harvest.len()
        }
    }

    /// `[info, gain, harvest slices, battery]`.
    pub fn shape(&self) -> [usize; 4] {
        [
            self.info.len(),
            self.gain.len(),
            self.harvest_states(),
            self.battery.len(),
        ]
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, g: usize, h: usize, b: usize) -> usize {
        let [_, ng, nh, nb] = self.shape();
        ((i * ng + g) * nh + h) * nb + b
    }

    pub fn coords(&self, s: usize) -> (usize, usize, usize, usize) {
        let [_, ng, nh, nb] = self.shape();
        (s / (ng * nh * nb), (s / (nh * nb)) % ng, (s / nb) % nh, s % nb)
    }

    /// Harvest slice used for a harvest representative index.
    pub fn harvest_slice(&self, h: usize) -> usize {
        if self.harvest.is_iid() {
            0
        } else {
            h
        }
    }

    /// Lower battery index and interpolation weight of the upper neighbor.
    pub fn battery_position(&self, b: f64) -> Result<(usize, f64)> {
        if !(b >= -1e-9 && b <= self.b_max + 1e-9) {
            return Err(Error::GridLookupOutOfRange {
                value: b,
                b_max: self.b_max,
            });
        }
        let n = self.battery.len();
        let x = (b.clamp(0.0, self.b_max) / self.b_max) * (n - 1) as f64;
        let lo = (x.floor() as usize).min(n - 2);
        let frac = (x - lo as f64).clamp(0.0, 1.0);
        Ok((lo, frac))
    }

    /// Interpolate a battery-indexed row at energy `b`.
    pub fn interpolate(&self, row: &[f64], b: f64) -> Result<f64> {
        let (lo, f) = self.battery_position(b)?;
        Ok(lerp(row[lo], row[lo + 1], f))
    }

    /// State used to normalize relative values: `P0`, first gain, first harvest, full battery.
    pub fn reference_state(&self, model: &SystemModel) -> usize {
        self.index(self.info.initial_index(model), 0, 0, self.battery.len() - 1)
    }

    /// Value at the initial condition `P0` and charge `b0`, averaged over the initial
    /// gain and harvest laws.
    pub fn initial_value(&self, values: &[f64], model: &SystemModel, b0: f64) -> Result<f64> {
        let i0 = self.info.initial_index(model);
        let nb = self.battery.len();
        let mut total = 0.0;
        for (g, &pg) in self.gain.initial().iter().enumerate() {
            for h in 0..self.harvest_states() {
                let ph = if self.harvest.is_iid() {
                    1.0
                } else {
                    self.harvest.initial()[h]
                };
                if pg * ph == 0.0 {
                    continue;
                }
                let s = self.index(i0, g, h, 0);
                total += pg * ph * self.interpolate(&values[s..s + nb], b0)?;
            }
        }
        Ok(total)
    }
}

fn uniform(b_max: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            if k + 1 == n {
                b_max
            } else {
                b_max * k as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// `n` evenly spaced energies from 0 to `b_max` inclusive.
pub fn uniform_actions(b_max: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0];
    }
    uniform(b_max, n)
}

fn lerp(a: f64, b: f64, f: f64) -> f64 {
    if f == 0.0 {
        a
    } else {
        a * (1.0 - f) + b * f
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stage {
    Finite(usize),
    Stationary,
}

/// Values over the flattened state index of a [`StateGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub stage: Stage,
    pub rho: Option<f64>,
    pub values: Vec<f64>,
}

/// Energy allocation over the flattened state index of a [`StateGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub stage: Stage,
    pub actions: Vec<f64>,
}

impl Policy {
    /// Allocation at a state whose battery level lies between grid points.
    pub fn action_at(&self, grid: &StateGrid, i: usize, g: usize, h: usize, b: f64) -> Result<f64> {
        let s = grid.index(i, g, h, 0);
        let u = grid.interpolate(&self.actions[s..s + grid.battery().len()], b)?;
        Ok(u.min(b).max(0.0))
    }
}

#[derive(Debug, Clone)]
struct Transition {
    cost: f64,
    next: Vec<(f64, usize)>,
}

/// `sum over next gain of P(g' | g) V(i', g', H', b)`, laid out as `[i'][row][H'][b]`.
pub struct ExpectedNext {
    values: Vec<f64>,
    rows: usize,
}

/// Precomputed transition kernel for one (grid, model, channel, feedback) combination.
pub struct Solver<'a> {
    grid: &'a StateGrid,
    kernel: Vec<Transition>,
    next_battery: Vec<(usize, f64)>,
    terminal_cost: Vec<f64>,
}

impl<'a> Solver<'a> {
    pub fn new(grid: &'a StateGrid, model: &SystemModel, ch: &DropoutChannel, fb: &FeedbackChannel) -> Result<Self> {
        let [ni, ng, _, nb] = grid.shape();
        let na = grid.actions.len();
        let nh = grid.harvest.len();
        let kernel = (0..ni * ng * na)
            .into_par_iter()
            .map(|k| {
                let (i, g, a) = (k / (ng * na), (k / na) % ng, k % na);
                let p1 = packet_success_prob(grid.gain.value(g), grid.actions[a], ch);
                Ok(Transition {
                    cost: grid.info.stage_cost(i, p1),
                    next: grid.info.successors(i, p1, model, fb)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut next_battery = vec![(0, 0.0); nb * na * nh];
        for b in 0..nb {
            for a in 0..na {
                if !self_feasible(grid, b, a) {
                    continue;
                }
                for h in 0..nh {
                    let level = (grid.battery[b] - grid.actions[a] + grid.harvest.value(h)).min(grid.b_max);
                    next_battery[(b * na + a) * nh + h] = grid.battery_position(level)?;
                }
            }
        }
        let terminal_cost = (0..ni * ng * nb)
            .map(|k| {
                let (i, g, b) = (k / (ng * nb), (k / nb) % ng, k % nb);
                grid.info
                    .stage_cost(i, packet_success_prob(grid.gain.value(g), grid.battery[b], ch))
            })
            .collect();
        Ok(Solver {
            grid,
            kernel,
            next_battery,
            terminal_cost,
        })
    }

    pub fn grid(&self) -> &StateGrid {
        self.grid
    }

    pub fn is_feasible(&self, b: usize, a: usize) -> bool {
        self_feasible(self.grid, b, a)
    }

    /// Number of actions available at battery index `b`.
    pub fn feasible_actions(&self, b: usize) -> usize {
        (0..self.grid.actions.len())
            .take_while(|&a| self.is_feasible(b, a))
            .count()
    }

    pub fn expected_next(&self, v: &[f64]) -> ExpectedNext {
        let grid = self.grid;
        let [ni, ng, _, nb] = grid.shape();
        let nh = grid.harvest.len();
        let rows = if grid.gain.is_iid() { 1 } else { ng };
        let mut out = vec![0.0; ni * rows * nh * nb];
        out.par_chunks_mut(rows * nh * nb).enumerate().for_each(|(i, chunk)| {
            for r in 0..rows {
                let row = grid.gain.row(r);
                for h in 0..nh {
                    let slice = grid.harvest_slice(h);
                    let dst = &mut chunk[(r * nh + h) * nb..(r * nh + h + 1) * nb];
                    for (g, &p) in row.iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        let s = grid.index(i, g, slice, 0);
                        for (d, &x) in dst.iter_mut().zip(&v[s..s + nb]) {
                            *d += p * x;
                        }
                    }
                }
            }
        });
        ExpectedNext { values: out, rows }
    }

    /// Stage cost plus expected continuation for action index `a` at state `s`.
    pub fn q_value(&self, next: &ExpectedNext, s: usize, a: usize) -> f64 {
        let grid = self.grid;
        let (i, g, h, b) = grid.coords(s);
        let [_, ng, _, nb] = grid.shape();
        let na = grid.actions.len();
        let nh = grid.harvest.len();
        let tr = &self.kernel[(i * ng + g) * na + a];
        let r = if next.rows == 1 { 0 } else { g };
        let hrow = grid.harvest.row(h);
        let mut cont = 0.0;
        for &(q, j) in &tr.next {
            let mut inner = 0.0;
            for (hn, &p) in hrow.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let (lo, f) = self.next_battery[(b * na + a) * nh + hn];
                let base = ((j * next.rows + r) * nh + hn) * nb;
                let vals = &next.values[base..base + nb];
                inner += p * lerp(vals[lo], vals[(lo + 1).min(nb - 1)], f);
            }
            cont += q * inner;
        }
        tr.cost + cont
    }

    /// Stage objective `L(B, u)` for every (battery, action) pair of one slice; `None` when infeasible.
    pub fn stage_objective(&self, v: &[f64], i: usize, g: usize, h: usize) -> Vec<Vec<Option<f64>>> {
        let next = self.expected_next(v);
        (0..self.grid.battery.len())
            .map(|b| {
                let s = self.grid.index(i, g, h, b);
                (0..self.grid.actions.len())
                    .map(|a| self.is_feasible(b, a).then(|| self.q_value(&next, s, a)))
                    .collect()
            })
            .collect()
    }

    /// Minimizing action index and value at state `s`; ties go to the smaller action.
    fn best_action(&self, next: &ExpectedNext, s: usize) -> (usize, f64) {
        let (_, _, _, b) = self.grid.coords(s);
        let mut best = (0, self.q_value(next, s, 0));
        for a in 1..self.feasible_actions(b) {
            let q = self.q_value(next, s, a);
            if q < best.1 - TIE_TOL * best.1.abs().max(1.0) {
                best = (a, q);
            }
        }
        best
    }

    /// One optimal Bellman sweep: returns `T V` and the minimizing action indices.
    pub fn sweep(&self, v: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let next = self.expected_next(v);
        let (values, actions): (Vec<f64>, Vec<usize>) = (0..self.grid.len())
            .into_par_iter()
            .map(|s| {
                let (a, q) = self.best_action(&next, s);
                (q, a)
            })
            .unzip();
        (values, actions)
    }

    /// One sweep under a fixed action-index assignment.
    pub fn sweep_fixed(&self, v: &[f64], actions: &[usize]) -> Vec<f64> {
        let next = self.expected_next(v);
        (0..self.grid.len())
            .into_par_iter()
            .map(|s| self.q_value(&next, s, actions[s]))
            .collect()
    }

    /// Terminal stage: all stored energy is spent.
    pub fn terminal(&self) -> (Vec<f64>, Vec<f64>) {
        let grid = self.grid;
        let [_, ng, _, nb] = grid.shape();
        (0..grid.len())
            .map(|s| {
                let (i, g, _, b) = grid.coords(s);
                (self.terminal_cost[(i * ng + g) * nb + b], grid.battery[b])
            })
            .unzip()
    }

    pub fn action_values(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&a| self.grid.actions[a]).collect()
    }
}

fn self_feasible(grid: &StateGrid, b: usize, a: usize) -> bool {
    grid.actions[a] <= grid.battery[b] + FEASIBILITY_TOL
}

/// One backward step from the stage-`k + 1` table.
pub fn bellman_backup_finite(
    v_next: &ValueTable,
    grid: &StateGrid,
    model: &SystemModel,
    ch: &DropoutChannel,
    fb: &FeedbackChannel,
    stage: usize,
) -> Result<(ValueTable, Policy)> {
    let solver = Solver::new(grid, model, ch, fb)?;
    Ok(backup_with(&solver, &v_next.values, stage))
}

fn backup_with(solver: &Solver, v_next: &[f64], stage: usize) -> (ValueTable, Policy) {
    let (values, idx) = solver.sweep(v_next);
    (
        ValueTable {
            stage: Stage::Finite(stage),
            rho: None,
            values,
        },
        Policy {
            stage: Stage::Finite(stage),
            actions: solver.action_values(&idx),
        },
    )
}

/// Backward induction over `horizon` stages.
///
/// Stage `k` accounts for `E[tr P_{k+1}]`, so the returned tables run from stage 0
/// to the terminal stage `horizon - 1`, where all stored energy is spent.
pub fn solve_finite(
    horizon: usize,
    grid: &StateGrid,
    model: &SystemModel,
    ch: &DropoutChannel,
    fb: &FeedbackChannel,
) -> Result<(Vec<ValueTable>, Vec<Policy>)> {
    if horizon == 0 {
        return Err(Error::InvalidModel("horizon must be at least 1".into()));
    }
    let solver = Solver::new(grid, model, ch, fb)?;
    let (values, actions) = solver.terminal();
    let last = horizon - 1;
    let mut tables = vec![ValueTable {
        stage: Stage::Finite(last),
        rho: None,
        values,
    }];
    let mut policies = vec![Policy {
        stage: Stage::Finite(last),
        actions,
    }];
    for k in (0..last).rev() {
        let (t, p) = backup_with(&solver, &tables.last().expect("non-empty").values, k);
        tables.push(t);
        policies.push(p);
    }
    tables.reverse();
    policies.reverse();
    Ok((tables, policies))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RviOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Flattened reference state; defaults to [`StateGrid::reference_state`].
    pub reference: Option<usize>,
}

impl Default for RviOptions {
    fn default() -> Self {
        RviOptions {
            tol: 1e-6,
            max_iters: 2000,
            reference: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AverageSolution {
    pub rho: f64,
    pub values: ValueTable,
    pub policy: Policy,
    pub iterations: usize,
    /// `span(T V - V)` after every sweep.
    pub spans: Vec<f64>,
}

/// Converged relative value iteration.
#[derive(Debug, Clone)]
pub struct RviOutcome {
    pub rho: f64,
    /// Relative values, zero at the reference state.
    pub values: Vec<f64>,
    /// Action indices of the final sweep.
    pub actions: Vec<usize>,
    /// `span(T V - V)` after every sweep.
    pub spans: Vec<f64>,
}

/// Relative value iteration driver shared by the optimal, fixed-policy and threshold solvers.
///
/// `sweep(v, n)` returns `T V` and the action indices used in sweep `n`.
pub fn relative_value_iteration(
    grid: &StateGrid,
    reference: usize,
    opts: &RviOptions,
    mut sweep: impl FnMut(&[f64], usize) -> Result<(Vec<f64>, Vec<usize>)>,
) -> Result<RviOutcome> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidModel("tolerance must be positive".into()));
    }
    let cap = grid.info.grid().trace(grid.info.grid().len() - 1);
    let mut v = vec![0.0; grid.len()];
    let mut spans = Vec::new();
    let mut rho = f64::NAN;
    for n in 0..opts.max_iters {
        let (tv, idx) = sweep(&v, n)?;
        let (lo, hi) = tv
            .iter()
            .zip(&v)
            .map(|(a, b)| a - b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        let span = hi - lo;
        rho = 0.5 * (lo + hi);
        spans.push(span);
        if !span.is_finite() {
            return Err(Error::NoConvergence { iters: n + 1, span });
        }
        let r = tv[reference];
        v = tv.into_iter().map(|x| x - r).collect();
        if span < opts.tol {
            if rho >= cap {
                return Err(Error::Unbounded { rho, cap });
            }
            return Ok(RviOutcome {
                rho,
                values: v,
                actions: idx,
                spans,
            });
        }
    }
    if rho >= cap {
        return Err(Error::Unbounded { rho, cap });
    }
    Err(Error::NoConvergence {
        iters: opts.max_iters,
        span: spans.last().copied().unwrap_or(f64::NAN),
    })
}

/// Average-cost optimal policy by relative value iteration.
pub fn solve_average(
    grid: &StateGrid,
    model: &SystemModel,
    ch: &DropoutChannel,
    fb: &FeedbackChannel,
    opts: &RviOptions,
) -> Result<AverageSolution> {
    let solver = Solver::new(grid, model, ch, fb)?;
    solve_average_with(&solver, model, opts)
}

pub fn solve_average_with(solver: &Solver, model: &SystemModel, opts: &RviOptions) -> Result<AverageSolution> {
    let grid = solver.grid();
    let reference = opts.reference.unwrap_or_else(|| grid.reference_state(model));
    let RviOutcome {
        rho,
        values,
        actions: idx,
        spans,
    } = relative_value_iteration(grid, reference, opts, |v, _| Ok(solver.sweep(v)))?;
    Ok(AverageSolution {
        rho,
        iterations: spans.len(),
        spans,
        values: ValueTable {
            stage: Stage::Stationary,
            rho: Some(rho),
            values,
        },
        policy: Policy {
            stage: Stage::Stationary,
            actions: solver.action_values(&idx),
        },
    })
}

/// Average cost of a fixed stationary policy whose actions lie on the action grid.
pub fn evaluate_average(
    solver: &Solver,
    model: &SystemModel,
    policy: &Policy,
    opts: &RviOptions,
) -> Result<AverageSolution> {
    let grid = solver.grid();
    let idx = policy
        .actions
        .iter()
        .map(|&u| {
            grid.actions
                .iter()
                .position(|&a| (a - u).abs() <= 1e-9)
                .ok_or_else(|| Error::InvalidModel(format!("policy action {u} is not on the action grid")))
        })
        .collect::<Result<Vec<_>>>()?;
    for (s, &a) in idx.iter().enumerate() {
        let (_, _, _, b) = grid.coords(s);
        if !solver.is_feasible(b, a) {
            return Err(Error::InfeasibleAction {
                u: grid.actions[a],
                battery: grid.battery[b],
            });
        }
    }
    let reference = opts.reference.unwrap_or_else(|| grid.reference_state(model));
    let RviOutcome {
        rho,
        values,
        actions: idx,
        spans,
    } = relative_value_iteration(grid, reference, opts, |v, _| {
        Ok((solver.sweep_fixed(v, &idx), idx.clone()))
    })?;
    Ok(AverageSolution {
        rho,
        iterations: spans.len(),
        spans,
        values: ValueTable {
            stage: Stage::Stationary,
            rho: Some(rho),
            values,
        },
        policy: Policy {
            stage: Stage::Stationary,
            actions: solver.action_values(&idx),
        },
    })
}
