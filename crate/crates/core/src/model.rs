//! Plant, channel, battery and feedback primitives with their one-step dynamics.
//!
//! Only the error covariance of the receiver's Kalman filter is tracked; the
//! plant state and the measurements themselves never need to be simulated.

use nalgebra::{Complex, DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Error covariance matrix.
pub type Cov = DMatrix<f64>;

const SYM_TOL: f64 = 1e-10;
const PSD_FLOOR: f64 = -1e-10;
const PBH_RANK_TOL: f64 = 1e-8;
const MAX_INNOVATION_COND: f64 = 1e12;

/// Linear time-invariant plant `x+ = A x + w`, `y = C x + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    p0: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>, p0: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::InvalidModel("A must be a non-empty square matrix".into()));
        }
        let m = c.nrows();
        if m == 0 || c.ncols() != n {
            return Err(Error::InvalidModel(format!("C must be m x {n}")));
        }
        if q.shape() != (n, n) || p0.shape() != (n, n) {
            return Err(Error::InvalidModel(format!("Q and P0 must be {n} x {n}")));
        }
        if r.shape() != (m, m) {
            return Err(Error::InvalidModel(format!("R must be {m} x {m}")));
        }
        let all_finite = [&a, &c, &q, &r, &p0].iter().all(|x| x.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::InvalidModel("matrices must be finite".into()));
        }
        if !is_symmetric(&q) || min_eigenvalue(&q) <= 0.0 {
            return Err(Error::InvalidModel("Q must be symmetric positive definite".into()));
        }
        if !is_psd(&r) {
            return Err(Error::InvalidModel("R must be symmetric positive semi-definite".into()));
        }
        if !is_psd(&p0) {
            return Err(Error::InvalidModel(
                "P0 must be symmetric positive semi-definite".into(),
            ));
        }
        let model = SystemModel { a, c, q, r, p0 };
        model.check_pbh()?;
        Ok(model)
    }

    pub fn scalar(a: f64, c: f64, q: f64, r: f64, p0: f64) -> Result<Self> {
        let s = |v| DMatrix::from_element(1, 1, v);
        Self::new(s(a), s(c), s(q), s(r), s(p0))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn p0(&self) -> &Cov {
        &self.p0
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_scalar(&self) -> bool {
        self.dim() == 1 && self.c.nrows() == 1
    }

    /// Spectral norm of `A`.
    pub fn a_norm(&self) -> f64 {
        spectral_norm(&self.a)
    }

    /// `A P A^T + Q`, the covariance after a lost packet.
    pub fn open_loop(&self, p: &Cov) -> Cov {
        symmetrize(&self.a * p * self.a.transpose() + &self.q)
    }

    /// `A P C^T (C P C^T + R)^{-1} C P A^T`, the reduction earned by a delivered packet.
    pub fn correction(&self, p: &Cov) -> Result<Cov> {
        let s = &self.c * p * self.c.transpose() + &self.r;
        let svd = s.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(cond < MAX_INNOVATION_COND) {
            return Err(Error::SingularInnovation { cond });
        }
        let s_inv = s.try_inverse().ok_or(Error::SingularInnovation { cond })?;
        let apc = &self.a * p * self.c.transpose();
        Ok(symmetrize(&apc * s_inv * apc.transpose()))
    }

    /// PBH tests: `(A, Q^{1/2})` stabilizable and `(A, C)` detectable.
    fn check_pbh(&self) -> Result<()> {
        let n = self.dim();
        let q_half = sqrtm_psd(&self.q);
        let eig = self.a.clone().schur().complex_eigenvalues();
        for lambda in eig.iter() {
            if lambda.norm() < 1.0 {
                continue;
            }
            let shifted = complexify(&self.a) - DMatrix::<Complex<f64>>::identity(n, n) * *lambda;
            let mut stab = DMatrix::<Complex<f64>>::zeros(n, 2 * n);
            stab.view_mut((0, 0), (n, n)).copy_from(&shifted);
            stab.view_mut((0, n), (n, n)).copy_from(&complexify(&q_half));
            if complex_rank(&stab) < n {
                return Err(Error::InvalidModel(format!(
                    "(A, Q^1/2) is not stabilizable at eigenvalue {lambda}"
                )));
            }
            let m = self.c.nrows();
            let mut det = DMatrix::<Complex<f64>>::zeros(n + m, n);
            det.view_mut((0, 0), (n, n)).copy_from(&shifted);
            det.view_mut((n, 0), (m, n)).copy_from(&complexify(&self.c));
            if complex_rank(&det) < n {
                return Err(Error::InvalidModel(format!(
                    "(A, C) is not detectable at eigenvalue {lambda}"
                )));
            }
        }
        Ok(())
    }

    /// Fixed point of the Riccati map with every packet delivered.
    pub fn filter_fixed_point(&self) -> Result<Cov> {
        let mut p = self.p0.clone();
        for _ in 0..100_000 {
            let next = riccati_step(&p, true, self)?;
            let diff = (&next - &p).abs().max();
            p = next;
            if diff <= 1e-13 * (1.0 + p.abs().max()) {
                break;
            }
        }
        Ok(p)
    }
}

fn complexify(m: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    m.map(|v| Complex::new(v, 0.0))
}

fn complex_rank(m: &DMatrix<Complex<f64>>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let scale = sv.max().max(1.0);
    sv.iter().filter(|&&s| s > PBH_RANK_TOL * scale).count()
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).abs().max() <= SYM_TOL * (1.0 + m.abs().max())
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Symmetric with smallest eigenvalue at least `-1e-10`.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    is_symmetric(m) && min_eigenvalue(m) >= PSD_FLOOR
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.shape() == (1, 1) {
        return m[(0, 0)].abs();
    }
    m.clone().svd(false, false).singular_values.max()
}

fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Random Riccati operator `L(P, gamma)`.
pub fn riccati_step(p: &Cov, gamma: bool, model: &SystemModel) -> Result<Cov> {
    let open = model.open_loop(p);
    if !gamma {
        return Ok(open);
    }
    let corr = model.correction(p)?;
    Ok(symmetrize(open - corr))
}

/// Packet reception probability as a function of received energy `g * u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DropoutChannel {
    /// BPSK with `bits` bits per packet: `h(x) = Phi(sqrt(x))^bits`.
    Bpsk { bits: u32 },
    /// Monotone piecewise-linear interpolation of samples, flat outside them.
    Table { x: Vec<f64>, y: Vec<f64> },
}

impl DropoutChannel {
    /// A channel with the same reception probability regardless of energy.
    pub fn constant(p: f64) -> Self {
        DropoutChannel::Table {
            x: vec![0.0, 1.0],
            y: vec![p, p],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DropoutChannel::Bpsk { bits } => {
                if *bits == 0 {
                    return Err(Error::schema("dropout.bits", "a positive integer"));
                }
            }
            DropoutChannel::Table { x, y } => {
                if x.is_empty() || x.len() != y.len() {
                    return Err(Error::schema("dropout.x/y", "equal-length non-empty arrays"));
                }
                if x[0] < 0.0 || x.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::schema("dropout.x", "strictly increasing values >= 0"));
                }
                if y.iter().any(|v| !(0.0..=1.0).contains(v)) || y.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::schema("dropout.y", "non-decreasing probabilities in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn h(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        match self {
            DropoutChannel::Bpsk { bits } => std_normal_cdf(x.sqrt()).powi(*bits as i32),
            DropoutChannel::Table { x: xs, y: ys } => {
                if x <= xs[0] {
                    return ys[0];
                }
                let last = xs.len() - 1;
                if x >= xs[last] {
                    return ys[last];
                }
                let i = xs.partition_point(|&v| v <= x) - 1;
                let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
                ys[i] + t * (ys[i + 1] - ys[i])
            }
        }
    }
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(gamma = 1 | g, u) = h(g u)`.
pub fn packet_success_prob(g: f64, u: f64, ch: &DropoutChannel) -> f64 {
    debug_assert!(g >= 0.0 && u >= 0.0);
    ch.h(g * u)
}

/// Law of the fading gain or harvested energy process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StochProcessSpec {
    IidExponential {
        mean: f64,
    },
    FiniteMarkov {
        states: Vec<f64>,
        transition: Vec<Vec<f64>>,
        initial: Vec<f64>,
    },
}

impl StochProcessSpec {
    pub fn constant(value: f64) -> Self {
        StochProcessSpec::FiniteMarkov {
            states: vec![value],
            transition: vec![vec![1.0]],
            initial: vec![1.0],
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        match self {
            StochProcessSpec::IidExponential { mean } => {
                if !(mean.is_finite() && *mean > 0.0) {
                    return Err(Error::schema(format!("{field}.mean"), "a positive real"));
                }
            }
            StochProcessSpec::FiniteMarkov {
                states,
                transition,
                initial,
            } => {
                let n = states.len();
                if n == 0 || states.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                    return Err(Error::schema(
                        format!("{field}.states"),
                        "non-empty finite non-negative values",
                    ));
                }
                if transition.len() != n || transition.iter().any(|row| row.len() != n) {
                    return Err(Error::schema(
                        format!("{field}.transition"),
                        format!("a {n} x {n} matrix"),
                    ));
                }
                if !is_stochastic(transition.iter().map(|r| r.as_slice())) {
                    return Err(Error::schema(
                        format!("{field}.transition"),
                        "non-negative rows summing to 1",
                    ));
                }
                if initial.len() != n || !is_stochastic(std::iter::once(initial.as_slice())) {
                    return Err(Error::schema(
                        format!("{field}.initial"),
                        format!("a probability vector of length {n}"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn is_iid(&self) -> bool {
        matches!(self, StochProcessSpec::IidExponential { .. })
    }
}

fn is_stochastic<'a>(mut rows: impl Iterator<Item = &'a [f64]>) -> bool {
    rows.all(|row| row.iter().all(|&p| p >= 0.0 && p.is_finite()) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-12)
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // round-off: fall back to the last state with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Draw the next value of a gain or harvest process.
pub fn sample_process<R: Rng + ?Sized>(spec: &StochProcessSpec, prev: Option<f64>, rng: &mut R) -> Result<f64> {
    match spec {
        StochProcessSpec::IidExponential { mean } => {
            let exp = Exp::new(1.0 / mean).map_err(|_| Error::schema("mean", "a positive real"))?;
            Ok(exp.sample(rng))
        }
        StochProcessSpec::FiniteMarkov {
            states,
            transition,
            initial,
        } => {
            let row = match prev {
                None => initial.as_slice(),
                Some(v) => {
                    let i = states
                        .iter()
                        .position(|&s| (s - v).abs() <= 1e-12 * (1.0 + s.abs()))
                        .ok_or(Error::UnknownState(v))?;
                    transition[i].as_slice()
                }
            };
            Ok(states[sample_index(row, rng)])
        }
    }
}

/// Battery with capacity `b_max` and initial charge `b0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Battery {
    pub b0: f64,
    pub b_max: f64,
}

impl Battery {
    pub fn new(b0: f64, b_max: f64) -> Result<Self> {
        if !(b_max.is_finite() && b_max >= 0.0) {
            return Err(Error::schema("battery.b_max", "a finite non-negative energy"));
        }
        if !(0.0..=b_max).contains(&b0) {
            return Err(Error::schema("battery.b0", format!("an energy in [0, {b_max}]")));
        }
        Ok(Battery { b0, b_max })
    }
}

/// `B+ = min(B - u + H+, B_max)`.
pub fn battery_step(b: f64, u: f64, h_next: f64, bat: &Battery) -> Result<f64> {
    if u > b + 1e-12 {
        return Err(Error::InfeasibleAction { u, battery: b });
    }
    Ok((b - u + h_next).min(bat.b_max).max(0.0))
}

/// Binary erasure channel with errors carrying the acknowledgments back to the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackChannel {
    pub epsilon: f64,
    pub eta: f64,
}

impl FeedbackChannel {
    pub const PERFECT: FeedbackChannel = FeedbackChannel { epsilon: 0.0, eta: 0.0 };

    pub fn new(epsilon: f64, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::schema("feedback.epsilon", "a probability in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::schema("feedback.eta", "a probability in [0, 1]"));
        }
        Ok(FeedbackChannel { epsilon, eta })
    }

    pub fn is_perfect(&self) -> bool {
        self.epsilon == 0.0 && self.eta == 0.0
    }

    /// Row `gamma` lists `P(gamma_hat = j | gamma)` for `j = 0, 1, 2`.
    pub fn matrix(&self) -> [[f64; 3]; 2] {
        let (e, n) = (self.epsilon, self.eta);
        [
            [(1.0 - e) * (1.0 - n), e * (1.0 - n), n],
            [e * (1.0 - n), (1.0 - e) * (1.0 - n), n],
        ]
    }

    pub fn prob(&self, gamma_hat: u8, gamma: bool) -> f64 {
        self.matrix()[gamma as usize][gamma_hat as usize]
    }

    /// `P(gamma_hat | g, u)` given the reception probability `p1 = h(g u)`.
    pub fn ack_prob(&self, gamma_hat: u8, p1: f64) -> f64 {
        self.prob(gamma_hat, false) * (1.0 - p1) + self.prob(gamma_hat, true) * p1
    }
}

/// Draw an acknowledgment for the true reception indicator.
pub fn sample_feedback<R: Rng + ?Sized>(gamma: bool, fb: &FeedbackChannel, rng: &mut R) -> u8 {
    let row = fb.matrix()[gamma as usize];
    sample_index(&row, rng) as u8
}

/// True reception and the acknowledgment seen by the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketOutcome {
    pub gamma: bool,
    pub gamma_hat: u8,
}

impl PacketOutcome {
    pub fn erased(&self) -> bool {
        self.gamma_hat == 2
    }
}
