//! Finite representations of the gain and harvest processes.

use crate::error::{Error, Result};
use crate::model::StochProcessSpec;

const ROW_TOL: f64 = 1e-10;

/// Representative values of a process together with their one-step transition rows.
///
/// For i.i.d. laws every row equals the bin probabilities; `edges` then holds the
/// quantile bin boundaries so that sampled values can be mapped back to a bin.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessAxis {
    values: Vec<f64>,
    rows: Vec<Vec<f64>>,
    initial: Vec<f64>,
    iid: bool,
    edges: Option<Vec<f64>>,
}

impl ProcessAxis {
    pub fn new(values: Vec<f64>, rows: Vec<Vec<f64>>, initial: Vec<f64>, iid: bool) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::InvalidModel("process axis needs at least one state".into()));
        }
        let stochastic = |row: &[f64]| {
            row.len() == n
                && row.iter().all(|&p| p >= 0.0 && p.is_finite())
                && (row.iter().sum::<f64>() - 1.0).abs() <= ROW_TOL
        };
        if rows.len() != n || !rows.iter().all(|r| stochastic(r)) || !stochastic(&initial) {
            return Err(Error::InvalidModel(
                "process axis rows must be probability vectors".into(),
            ));
        }
        if iid && rows.iter().any(|r| r != &initial) {
            return Err(Error::InvalidModel("i.i.d. process axis needs identical rows".into()));
        }
        Ok(ProcessAxis {
            values,
            rows,
            initial,
            iid,
            edges: None,
        })
    }

    /// A process that never leaves `value`.
    pub fn constant(value: f64) -> Self {
        ProcessAxis {
            values: vec![value],
            rows: vec![vec![1.0]],
            initial: vec![1.0],
            iid: true,
            edges: None,
        }
    }

    /// An i.i.d. law with the given support and probabilities.
    pub fn iid(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let rows = vec![probs.clone(); values.len()];
        Self::new(values, rows, probs, true)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn is_iid(&self) -> bool {
        self.iid
    }

    pub fn edges(&self) -> Option<&[f64]> {
        self.edges.as_deref()
    }

    /// Index of the representative standing in for a sampled value: the quantile bin
    /// for binned laws, otherwise the nearest state.
    pub fn lookup(&self, value: f64) -> usize {
        if let Some(edges) = &self.edges {
            let interior = &edges[1..edges.len() - 1];
            return interior.partition_point(|&e| e <= value);
        }
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if (v - value).abs() < (self.values[best] - value).abs() {
                best = i;
            }
        }
        best
    }

    /// Mean of the stationary-looking initial law, `sum_i initial_i * value_i`.
    pub fn initial_mean(&self) -> f64 {
        self.values.iter().zip(&self.initial).map(|(v, p)| v * p).sum()
    }
}

/// Quantile-bin quadrature of a process law.
///
/// Exponential laws are cut into `n_bins` equal-probability bins represented by their
/// conditional means; finite chains pass through unchanged.
pub fn discretize_process(spec: &StochProcessSpec, n_bins: usize) -> Result<ProcessAxis> {
    match spec {
        StochProcessSpec::IidExponential { mean } => {
            if n_bins == 0 {
                return Err(Error::InvalidModel("n_bins must be at least 1".into()));
            }
            let m = *mean;
            let n = n_bins as f64;
            let edges: Vec<f64> = (0..=n_bins)
                .map(|k| {
                    if k == n_bins {
                        f64::INFINITY
                    } else {
                        -m * (1.0 - k as f64 / n).ln()
                    }
                })
                .collect();
            let values = edges.windows(2).map(|w| exponential_bin_mean(m, w[0], w[1])).collect();
            let probs = vec![1.0 / n; n_bins];
            let mut axis = ProcessAxis::iid(values, probs)?;
            axis.edges = Some(edges);
            Ok(axis)
        }
        StochProcessSpec::FiniteMarkov {
            states,
            transition,
            initial,
        } => ProcessAxis::new(states.clone(), transition.clone(), initial.clone(), false),
    }
}

/// `E[X | a < X < b]` for `X ~ Exp(mean m)`.
fn exponential_bin_mean(m: f64, a: f64, b: f64) -> f64 {
    let ea = (-a / m).exp();
    if b.is_infinite() {
        return a + m;
    }
    let eb = (-b / m).exp();
    m + (a * ea - b * eb) / (ea - eb)
}
