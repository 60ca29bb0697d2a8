//! Information state: the sensor's distribution over the receiver's error covariance.
//!
//! A [`Belief`] is a weighted set of covariance atoms. The update [`belief_update`]
//! conditions on the acknowledgment and pushes every atom through both branches of
//! the Riccati map. For tabulated dynamic programming the atoms are projected onto a
//! [`CovGrid`] and carried around as a [`GridBelief`] weight vector.

use crate::error::{Error, Result};
use crate::model::{is_psd, packet_success_prob, riccati_step, Cov, DropoutChannel, FeedbackChannel, SystemModel};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub const PRUNE_THRESHOLD: f64 = 1e-8;
pub const DEFAULT_SUPPORT_CAP: usize = 50;
const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub cov: Cov,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    atoms: Vec<Atom>,
    support_cap: usize,
}

impl Belief {
    pub fn new(atoms: Vec<Atom>, support_cap: usize) -> Result<Self> {
        if support_cap == 0 {
            return Err(Error::InvalidModel("support cap must be positive".into()));
        }
        if atoms.is_empty() {
            return Err(Error::EmptyBelief);
        }
        if atoms.iter().any(|a| !(a.weight >= 0.0) || !is_psd(&a.cov)) {
            return Err(Error::InvalidModel(
                "belief atoms need non-negative weights and PSD covariances".into(),
            ));
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidModel(format!("belief weights sum to {total}")));
        }
        let mut b = Belief { atoms, support_cap };
        b.enforce_cap();
        Ok(b)
    }

    pub fn dirac(cov: Cov, support_cap: usize) -> Self {
        Belief {
            atoms: vec![Atom { cov, weight: 1.0 }],
            support_cap: support_cap.max(1),
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn support_cap(&self) -> usize {
        self.support_cap
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn is_dirac(&self) -> bool {
        self.atoms.len() == 1
    }

    pub fn mean_trace(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight * a.cov.trace()).sum()
    }

    /// Flat `(trace(P), weight)` records, e.g. for CSV dumps.
    pub fn records(&self) -> Vec<(f64, f64)> {
        self.atoms.iter().map(|a| (a.cov.trace(), a.weight)).collect()
    }

    fn renormalize(&mut self) {
        let total = self.total_weight();
        for a in &mut self.atoms {
            a.weight /= total;
        }
    }

    /// Drop atoms below [`PRUNE_THRESHOLD`], then merge the closest neighbors in trace
    /// (into their weighted mean) until the support fits the cap.
    fn enforce_cap(&mut self) {
        if self.atoms.len() <= self.support_cap {
            return;
        }
        if self.atoms.iter().any(|a| a.weight >= PRUNE_THRESHOLD) {
            self.atoms.retain(|a| a.weight >= PRUNE_THRESHOLD);
            self.renormalize();
        }
        self.atoms.sort_by(|a, b| a.cov.trace().total_cmp(&b.cov.trace()));
        while self.atoms.len() > self.support_cap {
            let (i, _) = self
                .atoms
                .windows(2)
                .map(|w| w[1].cov.trace() - w[0].cov.trace())
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("at least two atoms");
            let right = self.atoms.remove(i + 1);
            let left = &mut self.atoms[i];
            let w = left.weight + right.weight;
            if w > 0.0 {
                left.cov = (&left.cov * left.weight + &right.cov * right.weight) / w;
            }
            left.weight = w;
        }
    }
}

/// Posterior weights `(c0, c1)` on the two reception hypotheses after seeing `gamma_hat`.
pub fn branch_weights(gamma_hat: u8, p1: f64, fb: &FeedbackChannel) -> Result<(f64, f64)> {
    if gamma_hat > 2 {
        return Err(Error::ZeroLikelihood { gamma_hat });
    }
    let l0 = fb.prob(gamma_hat, false) * (1.0 - p1);
    let l1 = fb.prob(gamma_hat, true) * p1;
    let z = l0 + l1;
    if !(z > 0.0) {
        return Err(Error::ZeroLikelihood { gamma_hat });
    }
    Ok((l0 / z, l1 / z))
}

/// One step of the information-state recursion.
pub fn belief_update(
    pi: &Belief,
    gamma_hat: u8,
    g: f64,
    u: f64,
    model: &SystemModel,
    ch: &DropoutChannel,
    fb: &FeedbackChannel,
) -> Result<Belief> {
    let p1 = packet_success_prob(g, u, ch);
    let (c0, c1) = branch_weights(gamma_hat, p1, fb)?;
    let mut atoms: Vec<Atom> = Vec::with_capacity(2 * pi.atoms.len());
    for atom in &pi.atoms {
        for (gamma, c) in [(false, c0), (true, c1)] {
            let weight = atom.weight * c;
            if weight == 0.0 {
                continue;
            }
            let cov = riccati_step(&atom.cov, gamma, model)?;
            match atoms.iter_mut().find(|a| a.cov == cov) {
                Some(existing) => existing.weight += weight,
                None => atoms.push(Atom { cov, weight }),
            }
        }
    }
    if atoms.is_empty() {
        return Err(Error::EmptyBelief);
    }
    let mut next = Belief {
        atoms,
        support_cap: pi.support_cap,
    };
    next.renormalize();
    next.enforce_cap();
    Ok(next)
}

/// `E[tr L(P, gamma) | pi, g, u]`.
pub fn belief_expected_cost(pi: &Belief, g: f64, u: f64, model: &SystemModel, ch: &DropoutChannel) -> Result<f64> {
    let p1 = packet_success_prob(g, u, ch);
    let mut total = 0.0;
    for atom in &pi.atoms {
        let open = model.open_loop(&atom.cov).trace();
        let corr = if p1 > 0.0 {
            model.correction(&atom.cov)?.trace()
        } else {
            0.0
        };
        total += atom.weight * (open - p1 * corr);
    }
    Ok(total)
}

/// Covariance grid ordered by trace; the discretization vehicle for beliefs and tables.
#[derive(Debug, Clone, PartialEq)]
pub struct CovGrid {
    points: Vec<Cov>,
    traces: Vec<f64>,
}

impl CovGrid {
    pub fn new(points: Vec<Cov>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidModel("covariance grid is empty".into()));
        }
        if points.iter().any(|p| !is_psd(p)) {
            return Err(Error::InvalidModel("covariance grid points must be PSD".into()));
        }
        let traces: Vec<f64> = points.iter().map(|p| p.trace()).collect();
        if traces.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidModel(
                "covariance grid must be strictly increasing in trace".into(),
            ));
        }
        Ok(CovGrid { points, traces })
    }

    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect())
    }

    /// Log-spaced scalar grid on `[min(Q, P0), P_cap]`, with `P0` and the
    /// delivered-every-time fixed point added as anchors.
    ///
    /// `P_cap` follows the lost-every-time recursion from `P0` for 60 steps,
    /// stopping (and capping) once the trace exceeds `1e6`.
    pub fn log_spaced(model: &SystemModel, n: usize) -> Result<Self> {
        if !model.is_scalar() {
            return Err(Error::NonScalar(model.dim()));
        }
        let n = n.max(2);
        let q = model.q()[(0, 0)];
        let p0 = model.p0()[(0, 0)];
        let mut cap = p0;
        let mut p = model.p0().clone();
        for _ in 0..60 {
            p = riccati_step(&p, false, model)?;
            cap = p[(0, 0)];
            if cap > 1e6 {
                cap = 1e6;
                break;
            }
        }
        let lo = q.min(p0).max(1e-9);
        let hi = cap.max(lo * 10.0);
        let (llo, lhi) = (lo.ln(), hi.ln());
        let mut values: Vec<f64> = (0..n)
            .map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp())
            .collect();
        values[0] = lo;
        values[n - 1] = hi;
        let anchor = model.filter_fixed_point()?[(0, 0)];
        for a in [p0, anchor] {
            if a > 0.0 && !values.iter().any(|v| (v - a).abs() <= 1e-9 * (1.0 + a)) {
                values.push(a);
            }
        }
        values.sort_by(f64::total_cmp);
        values.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
        Self::scalar(&values)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Cov {
        &self.points[i]
    }

    pub fn points(&self) -> &[Cov] {
        &self.points
    }

    pub fn trace(&self, i: usize) -> f64 {
        self.traces[i]
    }

    pub fn traces(&self) -> &[f64] {
        &self.traces
    }

    /// Index of the grid point nearest in trace; ties go to the smaller point.
    pub fn nearest(&self, trace: f64) -> usize {
        let t = &self.traces;
        let i = t.partition_point(|&v| v < trace);
        if i == 0 {
            return 0;
        }
        if i == t.len() {
            return t.len() - 1;
        }
        if trace - t[i - 1] <= t[i] - trace {
            i - 1
        } else {
            i
        }
    }

    /// Grid points receiving the mass of a covariance with trace `trace`, with their shares.
    ///
    /// `Linear` splits the mass between the two bracketing points so that the mean trace
    /// is preserved inside the grid range; values outside the range go to the end point.
    pub fn project(&self, trace: f64, projection: Projection) -> [(usize, f64); 2] {
        let t = &self.traces;
        match projection {
            Projection::Nearest => [(self.nearest(trace), 1.0), (0, 0.0)],
            Projection::Linear => {
                let i = t.partition_point(|&v| v < trace);
                if i == 0 {
                    return [(0, 1.0), (0, 0.0)];
                }
                if i == t.len() {
                    return [(t.len() - 1, 1.0), (0, 0.0)];
                }
                let f = (trace - t[i - 1]) / (t[i] - t[i - 1]);
                [(i - 1, 1.0 - f), (i, f)]
            }
        }
    }

    /// Index of a point equal (within 1e-9 relative) to `p`, if any.
    pub fn find(&self, p: &Cov) -> Option<usize> {
        let i = self.nearest(p.trace());
        let tol = 1e-9 * (1.0 + p.abs().max());
        ((&self.points[i] - p).abs().max() <= tol).then_some(i)
    }
}

/// Move each atom's mass to its nearest grid point, prune tiny weights and renormalize.
pub fn compress(pi: &Belief, grid: &CovGrid) -> Result<Belief> {
    let gb = GridBelief::from_belief(pi, grid)?;
    Ok(gb.to_belief(grid, pi.support_cap.max(grid.len())))
}

/// A belief whose atoms sit on the points of a [`CovGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridBelief {
    weights: Vec<f64>,
}

impl GridBelief {
    pub fn dirac(n: usize, i: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[i] = 1.0;
        GridBelief { weights }
    }

    /// Nearest-point projection of `pi`, pruned and renormalized.
    pub fn from_belief(pi: &Belief, grid: &CovGrid) -> Result<Self> {
        let mut weights = vec![0.0; grid.len()];
        for atom in pi.atoms() {
            weights[grid.nearest(atom.cov.trace())] += atom.weight;
        }
        Self::from_raw(weights)
    }

    /// Projection of `pi` onto the grid with the given rule, pruned and renormalized.
    pub fn from_belief_with(pi: &Belief, grid: &CovGrid, projection: Projection) -> Result<Self> {
        let mut weights = vec![0.0; grid.len()];
        for atom in pi.atoms() {
            for (j, f) in grid.project(atom.cov.trace(), projection) {
                weights[j] += atom.weight * f;
            }
        }
        Self::from_raw(weights)
    }

    /// Prune and renormalize raw non-negative masses.
    pub fn from_raw(mut weights: Vec<f64>) -> Result<Self> {
        for w in weights.iter_mut() {
            if *w < PRUNE_THRESHOLD {
                *w = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::EmptyBelief);
        }
        for w in weights.iter_mut() {
            *w /= total;
        }
        Ok(GridBelief { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().copied().enumerate().filter(|&(_, w)| w > 0.0)
    }

    pub fn is_dirac(&self) -> bool {
        self.support().count() == 1
    }

    pub fn mean_trace(&self, grid: &CovGrid) -> f64 {
        self.support().map(|(i, w)| w * grid.trace(i)).sum()
    }

    pub fn to_belief(&self, grid: &CovGrid, support_cap: usize) -> Belief {
        let atoms = self
            .support()
            .map(|(i, w)| Atom {
                cov: grid.point(i).clone(),
                weight: w,
            })
            .collect();
        Belief {
            atoms,
            support_cap: support_cap.max(1),
        }
    }

    /// Cumulative weights, the representation used by [`GridBelief::distance`].
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect()
    }

    /// Earth mover's distance along the trace axis.
    pub fn distance(&self, other: &GridBelief, grid: &CovGrid) -> f64 {
        cdf_distance(&self.cdf(), &other.cdf(), grid.traces())
    }
}

/// Earth mover's distance between two beliefs given their cumulative weights on `traces`.
pub fn cdf_distance(a: &[f64], b: &[f64], traces: &[f64]) -> f64 {
    let mut d = 0.0;
    for i in 0..traces.len().saturating_sub(1) {
        d += (a[i] - b[i]).abs() * (traces[i + 1] - traces[i]);
    }
    d
}

/// How a successor covariance between grid points is mapped back onto the grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// All mass to the nearest point in trace.
    Nearest,
    /// Mass split between the two bracketing points, preserving the mean trace.
    #[default]
    Linear,
}

/// Per-grid-point Riccati data: traces of both branches and their projected grid successors.
#[derive(Debug, Clone)]
pub struct GridDynamics {
    pub projection: Projection,
    pub open_trace: Vec<f64>,
    pub corr_trace: Vec<f64>,
    pub lost: Vec<[(usize, f64); 2]>,
    pub delivered: Vec<[(usize, f64); 2]>,
}

impl GridDynamics {
    pub fn new(grid: &CovGrid, model: &SystemModel, projection: Projection) -> Result<Self> {
        let n = grid.len();
        let mut d = GridDynamics {
            projection,
            open_trace: Vec::with_capacity(n),
            corr_trace: Vec::with_capacity(n),
            lost: Vec::with_capacity(n),
            delivered: Vec::with_capacity(n),
        };
        for p in grid.points() {
            let open = riccati_step(p, false, model)?;
            let closed = riccati_step(p, true, model)?;
            d.open_trace.push(open.trace());
            d.corr_trace.push(open.trace() - closed.trace());
            d.lost.push(grid.project(open.trace(), projection));
            d.delivered.push(grid.project(closed.trace(), projection));
        }
        Ok(d)
    }

    /// `E[tr L(P, gamma)]` over the belief for reception probability `p1`.
    pub fn expected_cost(&self, b: &GridBelief, p1: f64) -> f64 {
        b.support()
            .map(|(i, w)| w * (self.open_trace[i] - p1 * self.corr_trace[i]))
            .sum()
    }

    /// Grid-projected belief update given the branch weights `(c0, c1)`.
    pub fn advance(&self, b: &GridBelief, c0: f64, c1: f64) -> Result<GridBelief> {
        let mut raw = vec![0.0; b.weights.len()];
        for (i, w) in b.support() {
            for (c, targets) in [(c0, &self.lost[i]), (c1, &self.delivered[i])] {
                if c > 0.0 {
                    for &(j, f) in targets {
                        raw[j] += w * c * f;
                    }
                }
            }
        }
        GridBelief::from_raw(raw)
    }
}
