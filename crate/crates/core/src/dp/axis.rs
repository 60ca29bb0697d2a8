//! The information coordinate of the DP state: a true covariance, a belief over
//! covariances, or the sensor's covariance estimate.

use crate::belief::{branch_weights, CovGrid, GridBelief, GridDynamics, Projection};
use crate::error::{Error, Result};
use crate::model::{
    battery_step, packet_success_prob, sample_feedback, sample_process, Battery, DropoutChannel, FeedbackChannel,
    StochProcessSpec, SystemModel,
};
use crate::subopt::p_hat_step_with_prob;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Which quantity the first state coordinate tracks.
#[derive(Debug, Clone)]
pub enum InfoAxis {
    /// The receiver's covariance itself (perfect acknowledgments).
    Dirac { grid: CovGrid, dynamics: GridDynamics },
    /// A sampled set of beliefs over the covariance grid.
    Belief {
        grid: CovGrid,
        dynamics: GridDynamics,
        beliefs: BeliefSet,
    },
    /// The sensor-side estimate driven by the acknowledgments.
    Estimate { grid: CovGrid, dynamics: GridDynamics },
}

impl InfoAxis {
    pub fn dirac(grid: CovGrid, model: &SystemModel, projection: Projection) -> Result<Self> {
        let dynamics = GridDynamics::new(&grid, model, projection)?;
        Ok(InfoAxis::Dirac { grid, dynamics })
    }

    pub fn estimate(grid: CovGrid, model: &SystemModel, projection: Projection) -> Result<Self> {
        let dynamics = GridDynamics::new(&grid, model, projection)?;
        Ok(InfoAxis::Estimate { grid, dynamics })
    }

    pub fn belief(grid: CovGrid, model: &SystemModel, beliefs: BeliefSet, projection: Projection) -> Result<Self> {
        if beliefs.grid_len() != grid.len() {
            return Err(Error::InvalidModel("belief set was built on a different grid".into()));
        }
        let dynamics = GridDynamics::new(&grid, model, projection)?;
        Ok(InfoAxis::Belief {
            grid,
            dynamics,
            beliefs,
        })
    }

    pub fn grid(&self) -> &CovGrid {
        match self {
            InfoAxis::Dirac { grid, .. } | InfoAxis::Belief { grid, .. } | InfoAxis::Estimate { grid, .. } => grid,
        }
    }

    pub fn dynamics(&self) -> &GridDynamics {
        match self {
            InfoAxis::Dirac { dynamics, .. }
            | InfoAxis::Belief { dynamics, .. }
            | InfoAxis::Estimate { dynamics, .. } => dynamics,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            InfoAxis::Belief { beliefs, .. } => beliefs.len(),
            _ => self.grid().len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> &'static str {
        match self {
            InfoAxis::Dirac { .. } => "covariance",
            InfoAxis::Belief { .. } => "belief",
            InfoAxis::Estimate { .. } => "estimate",
        }
    }

    /// Index standing for the initial condition `P0` (a Dirac belief on the belief axis).
    pub fn initial_index(&self, model: &SystemModel) -> usize {
        self.grid().nearest(model.p0().trace())
    }

    /// Trace of the covariance, or mean trace of the belief, at index `i`.
    pub fn coordinate(&self, i: usize) -> f64 {
        match self {
            InfoAxis::Belief { grid, beliefs, .. } => beliefs.get(i).mean_trace(grid),
            _ => self.grid().trace(i),
        }
    }

    /// Expected trace of the next covariance when the packet gets through with probability `p1`.
    pub fn stage_cost(&self, i: usize, p1: f64) -> f64 {
        match self {
            InfoAxis::Belief { dynamics, beliefs, .. } => dynamics.expected_cost(beliefs.get(i), p1),
            _ => {
                let d = self.dynamics();
                d.open_trace[i] - p1 * d.corr_trace[i]
            }
        }
    }

    /// Successor indices with their probabilities, merged when they coincide.
    pub fn successors(
        &self,
        i: usize,
        p1: f64,
        model: &SystemModel,
        fb: &FeedbackChannel,
    ) -> Result<Vec<(f64, usize)>> {
        let mut out: Vec<(f64, usize)> = Vec::with_capacity(3);
        let mut push = |q: f64, j: usize| {
            if q <= 0.0 {
                return;
            }
            match out.iter_mut().find(|(_, k)| *k == j) {
                Some(e) => e.0 += q,
                None => out.push((q, j)),
            }
        };
        match self {
            InfoAxis::Dirac { dynamics, .. } => {
                for &(j, f) in &dynamics.lost[i] {
                    push((1.0 - p1) * f, j);
                }
                for &(j, f) in &dynamics.delivered[i] {
                    push(p1 * f, j);
                }
            }
            InfoAxis::Belief { dynamics, beliefs, .. } => {
                for gamma_hat in 0..3u8 {
                    let q = fb.ack_prob(gamma_hat, p1);
                    if q <= 0.0 {
                        continue;
                    }
                    let (c0, c1) = branch_weights(gamma_hat, p1, fb)?;
                    let next = dynamics.advance(beliefs.get(i), c0, c1)?;
                    match dynamics.projection {
                        Projection::Nearest => push(q, beliefs.nearest(&next)),
                        Projection::Linear => {
                            for (k, lambda) in beliefs.bracket(&next) {
                                push(q * lambda, k);
                            }
                        }
                    }
                }
            }
            InfoAxis::Estimate { grid, dynamics } => {
                for gamma_hat in 0..3u8 {
                    let q = fb.ack_prob(gamma_hat, p1);
                    if q <= 0.0 {
                        continue;
                    }
                    let next = p_hat_step_with_prob(grid.point(i), gamma_hat, p1, model, fb)?;
                    for (j, f) in grid.project(next.trace(), dynamics.projection) {
                        push(q * f, j);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// A finite set of grid beliefs with nearest-neighbor lookup in earth mover's distance.
#[derive(Debug, Clone)]
pub struct BeliefSet {
    traces: Vec<f64>,
    beliefs: Vec<GridBelief>,
    cdfs: Vec<Vec<f64>>,
    means: Vec<f64>,
    /// Indices sorted by mean trace.
    order: Vec<usize>,
}

impl BeliefSet {
    /// One Dirac belief per grid point, in grid order.
    pub fn diracs(grid: &CovGrid) -> Self {
        let mut set = BeliefSet {
            traces: grid.traces().to_vec(),
            beliefs: Vec::new(),
            cdfs: Vec::new(),
            means: Vec::new(),
            order: Vec::new(),
        };
        for i in 0..grid.len() {
            set.push(GridBelief::dirac(grid.len(), i));
        }
        set
    }

    pub fn len(&self) -> usize {
        self.beliefs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beliefs.is_empty()
    }

    pub fn grid_len(&self) -> usize {
        self.traces.len()
    }

    pub fn get(&self, i: usize) -> &GridBelief {
        &self.beliefs[i]
    }

    pub fn beliefs(&self) -> &[GridBelief] {
        &self.beliefs
    }

    fn mean_of(&self, b: &GridBelief) -> f64 {
        b.support().map(|(i, w)| w * self.traces[i]).sum()
    }

    pub fn push(&mut self, b: GridBelief) -> usize {
        let mean = self.mean_of(&b);
        let idx = self.beliefs.len();
        let pos = self.order.partition_point(|&k| self.means[k] < mean);
        self.order.insert(pos, idx);
        self.cdfs.push(b.cdf());
        self.means.push(mean);
        self.beliefs.push(b);
        idx
    }

    /// Nearest member and its distance; ties go to the smaller index.
    pub fn nearest_with_distance(&self, b: &GridBelief) -> (usize, f64) {
        let cdf = b.cdf();
        let mean = self.mean_of(b);
        let pos = self.order.partition_point(|&k| self.means[k] < mean);
        let (mut best, mut best_d) = (usize::MAX, f64::INFINITY);
        // The mean gap lower-bounds the distance, so scan outward until it exceeds the best.
        let (mut left, mut right) = (pos, pos);
        loop {
            let gap_l = (left > 0).then(|| mean - self.means[self.order[left - 1]]);
            let gap_r = (right < self.order.len()).then(|| self.means[self.order[right]] - mean);
            let bound = best_d * (1.0 + 1e-12) + 1e-12;
            let take_left = match (gap_l, gap_r) {
                (None, None) => break,
                (Some(l), None) => {
                    if l > bound {
                        break;
                    }
                    true
                }
                (None, Some(r)) => {
                    if r > bound {
                        break;
                    }
                    false
                }
                (Some(l), Some(r)) => {
                    if l.min(r) > bound {
                        break;
                    }
                    l <= r
                }
            };
            let k = if take_left {
                left -= 1;
                self.order[left]
            } else {
                right += 1;
                self.order[right - 1]
            };
            let d = crate::belief::cdf_distance(&cdf, &self.cdfs[k], &self.traces);
            if d < best_d || (d == best_d && k < best) {
                best = k;
                best_d = d;
            }
        }
        (best, best_d)
    }

    pub fn nearest(&self, b: &GridBelief) -> usize {
        self.nearest_with_distance(b).0
    }

    /// Nearest member on each side of the mean trace of `b`, weighted to preserve that mean.
    ///
    /// When every member lies on one side, the single nearest member takes all the weight.
    pub fn bracket(&self, b: &GridBelief) -> Vec<(usize, f64)> {
        let cdf = b.cdf();
        let mean = self.mean_of(b);
        let pos = self.order.partition_point(|&k| self.means[k] < mean);
        let closest = |range: &mut dyn Iterator<Item = usize>| -> Option<(usize, f64)> {
            let mut best: Option<(usize, f64)> = None;
            for slot in range {
                let k = self.order[slot];
                let gap = (self.means[k] - mean).abs();
                if let Some((_, d)) = best {
                    if gap > d * (1.0 + 1e-12) + 1e-12 {
                        break;
                    }
                }
                let d = crate::belief::cdf_distance(&cdf, &self.cdfs[k], &self.traces);
                if best.is_none_or(|(j, bd)| d < bd || (d == bd && k < j)) {
                    best = Some((k, d));
                }
            }
            best
        };
        let below = closest(&mut (0..pos).rev());
        let above = closest(&mut (pos..self.order.len()));
        match (below, above) {
            (Some((lo, _)), Some((hi, _))) if self.means[hi] > self.means[lo] => {
                let f = ((mean - self.means[lo]) / (self.means[hi] - self.means[lo])).clamp(0.0, 1.0);
                let mut out = vec![(lo, 1.0 - f), (hi, f)];
                out.retain(|x| x.1 > 0.0);
                out
            }
            (Some((lo, dl)), Some((hi, dh))) => vec![(if dh < dl { hi } else { lo }, 1.0)],
            (Some((k, _)), None) | (None, Some((k, _))) => vec![(k, 1.0)],
            (None, None) => unreachable!("belief sets contain the grid Diracs"),
        }
    }
}

/// Options for reachable-belief sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeliefSampling {
    pub trajectories: usize,
    pub steps: usize,
    pub max_beliefs: usize,
    pub dedup_tol: f64,
    pub seed: u64,
    pub projection: Projection,
}

impl Default for BeliefSampling {
    fn default() -> Self {
        BeliefSampling {
            trajectories: 500,
            steps: 60,
            max_beliefs: 300,
            dedup_tol: 1e-6,
            seed: 0,
            projection: Projection::default(),
        }
    }
}

/// Reachable beliefs from `P0` under a uniformly random feasible policy.
///
/// All grid Diracs come first (in grid order); sampled beliefs follow. When more
/// than `max_beliefs` survive deduplication, farthest-point selection keeps a
/// spread-out subset.
#[allow(clippy::too_many_arguments)]
pub fn sample_belief_set(
    grid: &CovGrid,
    model: &SystemModel,
    ch: &DropoutChannel,
    fb: &FeedbackChannel,
    gain: &StochProcessSpec,
    harvest: &StochProcessSpec,
    battery: &Battery,
    actions: &[f64],
    opts: &BeliefSampling,
) -> Result<BeliefSet> {
    if opts.max_beliefs < grid.len() {
        return Err(Error::InvalidModel(format!(
            "max_beliefs {} is below the grid size {}",
            opts.max_beliefs,
            grid.len()
        )));
    }
    let dynamics = GridDynamics::new(grid, model, opts.projection)?;
    let mut set = BeliefSet::diracs(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start = grid.nearest(model.p0().trace());
    for _ in 0..opts.trajectories {
        let mut b = GridBelief::dirac(grid.len(), start);
        let mut energy = battery.b0;
        let mut g = sample_process(gain, None, &mut rng)?;
        let mut h = sample_process(harvest, None, &mut rng)?;
        for _ in 0..opts.steps {
            let feasible = actions.iter().take_while(|&&u| u <= energy + 1e-12).count();
            let u = if feasible == 0 {
                0.0
            } else {
                actions[rng.random_range(0..feasible)]
            };
            let p1 = packet_success_prob(g, u, ch);
            let gamma = rng.random::<f64>() < p1;
            let gamma_hat = sample_feedback(gamma, fb, &mut rng);
            let (c0, c1) = branch_weights(gamma_hat, p1, fb)?;
            b = dynamics.advance(&b, c0, c1)?;
            let (_, d) = set.nearest_with_distance(&b);
            if d > opts.dedup_tol {
                set.push(b.clone());
            }
            g = sample_process(gain, Some(g), &mut rng)?;
            h = sample_process(harvest, Some(h), &mut rng)?;
            energy = battery_step(energy, u, h, battery)?;
        }
    }
    if set.len() <= opts.max_beliefs {
        return Ok(set);
    }
    Ok(farthest_point_subset(&set, grid, opts.max_beliefs))
}

fn farthest_point_subset(set: &BeliefSet, grid: &CovGrid, keep: usize) -> BeliefSet {
    let n_dirac = grid.len();
    let candidates: Vec<usize> = (n_dirac..set.len()).collect();
    let mut dist: Vec<f64> = candidates
        .iter()
        .map(|&c| {
            (0..n_dirac)
                .map(|k| crate::belief::cdf_distance(&set.cdfs[c], &set.cdfs[k], &set.traces))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut out = BeliefSet::diracs(grid);
    let mut taken = vec![false; candidates.len()];
    while out.len() < keep {
        let mut pick = None;
        for (j, &d) in dist.iter().enumerate() {
            if taken[j] {
                continue;
            }
            if pick.is_none_or(|p: usize| d > dist[p]) {
                pick = Some(j);
            }
        }
        let Some(j) = pick else { break };
        taken[j] = true;
        let c = candidates[j];
        out.push(set.beliefs[c].clone());
        for (k, &other) in candidates.iter().enumerate() {
            if !taken[k] {
                let d = crate::belief::cdf_distance(&set.cdfs[c], &set.cdfs[other], &set.traces);
                dist[k] = dist[k].min(d);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_matches_exhaustive_search() {
        let grid = CovGrid::scalar(&[1.0, 1.5, 2.0, 3.0, 5.0, 8.0]).unwrap();
        let mut set = BeliefSet::diracs(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let raw: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>().powi(3)).collect();
            set.push(GridBelief::from_raw(raw).unwrap());
        }
        for _ in 0..200 {
            let raw: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>().powi(2)).collect();
            let q = GridBelief::from_raw(raw).unwrap();
            let (fast, d) = set.nearest_with_distance(&q);
            let brute = (0..set.len()).map(|k| (k, q.distance(set.get(k), &grid))).fold(
                (usize::MAX, f64::INFINITY),
                |acc, (k, d)| if d < acc.1 { (k, d) } else { acc },
            );
            assert_eq!(fast, brute.0);
            assert!((d - brute.1).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_feedback_with_nearest_projection_samples_only_diracs() {
        let model = SystemModel::scalar(1.2, 1.0, 1.0, 1.0, 1.0).unwrap();
        let grid = CovGrid::log_spaced(&model, 20).unwrap();
        let set = sample_belief_set(
            &grid,
            &model,
            &DropoutChannel::Bpsk { bits: 4 },
            &FeedbackChannel::PERFECT,
            &StochProcessSpec::IidExponential { mean: 1.0 },
            &StochProcessSpec::IidExponential { mean: 1.0 },
            &Battery::new(2.0, 2.0).unwrap(),
            &[0.0, 0.5, 1.0, 1.5, 2.0],
            &BeliefSampling {
                trajectories: 20,
                projection: Projection::Nearest,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(set.len(), grid.len());
    }

    #[test]
    fn cap_keeps_diracs_first() {
        let model = SystemModel::scalar(1.2, 1.0, 1.0, 1.0, 1.0).unwrap();
        let grid = CovGrid::log_spaced(&model, 15).unwrap();
        let set = sample_belief_set(
            &grid,
            &model,
            &DropoutChannel::Bpsk { bits: 4 },
            &FeedbackChannel::new(0.2, 0.4).unwrap(),
            &StochProcessSpec::IidExponential { mean: 1.0 },
            &StochProcessSpec::IidExponential { mean: 1.0 },
            &Battery::new(2.0, 2.0).unwrap(),
            &[0.0, 1.0, 2.0],
            &BeliefSampling {
                trajectories: 50,
                steps: 30,
                max_beliefs: 40,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(set.len(), 40);
        for i in 0..grid.len() {
            assert!(set.get(i).is_dirac());
            assert_eq!(set.get(i).weights()[i], 1.0);
        }
    }
}
