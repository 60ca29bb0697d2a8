#![allow(dead_code)]
//! Independent oracles shared by the integration suites.

use harvest_core::belief::Projection;
use harvest_core::dp::{InfoAxis, ProcessAxis, StateGrid};
use harvest_core::{CovGrid, DropoutChannel, SystemModel};

/// Standard normal CDF by composite Simpson integration of the density on `[0, x]`.
pub fn simpson_normal_cdf(x: f64) -> f64 {
    let n = 20_000;
    let h = x / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(0.0) + pdf(x);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(i as f64 * h);
    }
    0.5 + s * h / 3.0
}

/// Two-state plant with a scalar measurement, evaluated entry by entry.
pub fn two_state_oracle(p: [[f64; 2]; 2], gamma: bool) -> [[f64; 2]; 2] {
    let a = [[1.1, 0.3], [0.0, 0.9]];
    let c = [1.0, 0.5];
    let q = [[0.5, 0.1], [0.1, 0.4]];
    let r = 0.2;
    let mut apa = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    apa[i][j] += a[i][k] * p[k][l] * a[j][l];
                }
            }
        }
    }
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = apa[i][j] + q[i][j];
        }
    }
    if gamma {
        // v = A P C^T, s = C P C^T + R
        let mut v = [0.0; 2];
        for (i, vi) in v.iter_mut().enumerate() {
            for k in 0..2 {
                for l in 0..2 {
                    *vi += a[i][k] * p[k][l] * c[l];
                }
            }
        }
        let mut sc = r;
        for k in 0..2 {
            for l in 0..2 {
                sc += c[k] * p[k][l] * c[l];
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] -= v[i] * v[j] / sc;
            }
        }
    }
    out
}

pub const A: f64 = 1.2;

/// A scalar perfect-acknowledgment instance whose battery successors land on the grid.
pub struct Instance {
    pub cov: Vec<f64>,
    pub gains: Vec<f64>,
    pub gain_rows: Vec<Vec<f64>>,
    pub harvests: Vec<f64>,
    pub harvest_rows: Vec<Vec<f64>>,
    pub battery: Vec<f64>,
    /// Reception probability at every product `g u` reachable on the instance.
    pub h_table: Vec<(f64, f64)>,
    pub projection: Projection,
}

/// `tr L(p, gamma)` for the scalar plant with `C = Q = R = 1`.
pub fn riccati(p: f64, gamma: bool) -> f64 {
    let open = A * A * p + 1.0;
    if gamma {
        open - A * A * p * p / (p + 1.0)
    } else {
        open
    }
}

impl Instance {
    /// 3 covariance points, 2 gains, 2 harvests, 3 battery points and 3 actions.
    pub fn micro(projection: Projection) -> Self {
        Instance {
            cov: vec![1.0, 3.0, 8.0],
            gains: vec![0.5, 1.5],
            gain_rows: vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            harvests: vec![0.0, 1.0],
            harvest_rows: vec![vec![0.5, 0.5], vec![0.2, 0.8]],
            battery: vec![0.0, 1.0, 2.0],
            h_table: vec![(0.0, 0.05), (0.5, 0.3), (1.0, 0.45), (1.5, 0.6), (3.0, 0.9)],
            projection,
        }
    }

    pub fn b_max(&self) -> f64 {
        *self.battery.last().unwrap()
    }

    pub fn h(&self, x: f64) -> f64 {
        self.h_table
            .iter()
            .find(|(k, _)| (k - x).abs() < 1e-12)
            .expect("tabulated product")
            .1
    }

    pub fn channel(&self) -> DropoutChannel {
        DropoutChannel::Table {
            x: self.h_table.iter().map(|p| p.0).collect(),
            y: self.h_table.iter().map(|p| p.1).collect(),
        }
    }

    pub fn project(&self, t: f64) -> Vec<(usize, f64)> {
        let cov = &self.cov;
        match self.projection {
            Projection::Nearest => {
                let best = (0..cov.len())
                    .min_by(|&a, &b| (cov[a] - t).abs().partial_cmp(&(cov[b] - t).abs()).unwrap())
                    .unwrap();
                vec![(best, 1.0)]
            }
            Projection::Linear => {
                if t <= cov[0] {
                    return vec![(0, 1.0)];
                }
                if t >= cov[cov.len() - 1] {
                    return vec![(cov.len() - 1, 1.0)];
                }
                let j = cov.iter().position(|&c| c >= t).unwrap();
                let f = (t - cov[j - 1]) / (cov[j] - cov[j - 1]);
                vec![(j - 1, 1.0 - f), (j, f)]
            }
        }
    }

    pub fn stage_cost(&self, i: usize, g: usize, u: f64) -> f64 {
        let p1 = self.h(self.gains[g] * u);
        (1.0 - p1) * riccati(self.cov[i], false) + p1 * riccati(self.cov[i], true)
    }

    /// Cost of spending `u` at stage `k` and acting optimally afterwards, enumerating
    /// every reception, gain and harvest outcome.
    #[allow(clippy::too_many_arguments)]
    pub fn objective(&self, i: usize, g: usize, hv: usize, b: usize, u: f64, k: usize, horizon: usize) -> f64 {
        let p1 = self.h(self.gains[g] * u);
        let mut total = self.stage_cost(i, g, u);
        for (gamma, pg) in [(false, 1.0 - p1), (true, p1)] {
            for (j, f) in self.project(riccati(self.cov[i], gamma)) {
                for (gn, &pgn) in self.gain_rows[g].iter().enumerate() {
                    for (hn, &phn) in self.harvest_rows[hv].iter().enumerate() {
                        let level = (self.battery[b] - u + self.harvests[hn]).min(self.b_max());
                        let bn = self.battery.iter().position(|&x| x == level).unwrap();
                        total += pg * f * pgn * phn * self.value(j, gn, hn, bn, k + 1, horizon);
                    }
                }
            }
        }
        total
    }

    /// Minimal expected cost-to-go from stage `k` over every action sequence.
    pub fn value(&self, i: usize, g: usize, hv: usize, b: usize, k: usize, horizon: usize) -> f64 {
        if k == horizon - 1 {
            return self.stage_cost(i, g, self.battery[b]);
        }
        self.battery
            .iter()
            .filter(|&&u| u <= self.battery[b])
            .map(|&u| self.objective(i, g, hv, b, u, k, horizon))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn grid(&self) -> (StateGrid, SystemModel) {
        let model = SystemModel::scalar(A, 1.0, 1.0, 1.0, 1.0).unwrap();
        let cov = CovGrid::scalar(&self.cov).unwrap();
        let info = InfoAxis::dirac(cov, &model, self.projection).unwrap();
        let axis = |values: &[f64], rows: &[Vec<f64>]| {
            let initial = vec![1.0 / values.len() as f64; values.len()];
            ProcessAxis::new(values.to_vec(), rows.to_vec(), initial, false).unwrap()
        };
        let grid = StateGrid::new(
            info,
            axis(&self.gains, &self.gain_rows),
            axis(&self.harvests, &self.harvest_rows),
            self.b_max(),
            self.battery.len(),
            self.battery.clone(),
        )
        .unwrap();
        (grid, model)
    }
}
