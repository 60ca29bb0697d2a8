//! Sufficient stability condition for the expected error covariance and an empirical
//! check of the resulting exponential bound under full-harvest transmission.

use crate::dp::discretize_process;
use crate::error::{Error, Result};
use crate::model::{
    packet_success_prob, riccati_step, spectral_norm, Battery, DropoutChannel, StochProcessSpec, SystemModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Number of quantile bins used to integrate continuous laws.
pub const QUADRATURE_BINS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    /// Worst-case expected loss probability under full-harvest transmission.
    pub lhs_sup: f64,
    /// Supplied contraction factor.
    pub rho: f64,
    /// `rho / ||A||^2` with the spectral norm.
    pub rho_bound: f64,
    pub satisfied: bool,
    pub alpha_fit: f64,
    pub beta_fit: f64,
    /// Decay rate of the fitted curve shape.
    pub fit_rate: f64,
    /// Largest distance between `E||P_k||` and the fitted shape over the simulated horizon.
    pub max_residual: f64,
}

impl StabilityReport {
    /// `key = value` lines.
    pub fn to_key_value(&self) -> String {
        format!(
            "lhs_sup = {}\nrho = {}\nrho_bound = {}\nsatisfied = {}\nalpha_fit = {}\nbeta_fit = {}\nfit_rate = {}\nmax_residual = {}\n",
            self.lhs_sup,
            self.rho,
            self.rho_bound,
            self.satisfied,
            self.alpha_fit,
            self.beta_fit,
            self.fit_rate,
            self.max_residual
        )
    }

    /// Header and one data row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(self)?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Expected loss `E[1 - h(g' min(H', B_max))]` from every conditioning state `(g, H)`.
fn expected_losses(
    gain: &StochProcessSpec,
    harvest: &StochProcessSpec,
    b_max: f64,
    ch: &DropoutChannel,
) -> Result<Vec<f64>> {
    let g = discretize_process(gain, QUADRATURE_BINS)?;
    let h = discretize_process(harvest, QUADRATURE_BINS)?;
    // i.i.d. laws have identical rows, so a single conditioning state suffices
    let g_rows = if g.is_iid() { 1 } else { g.len() };
    let h_rows = if h.is_iid() { 1 } else { h.len() };
    let mut out = Vec::with_capacity(g_rows * h_rows);
    for i in 0..g_rows {
        for j in 0..h_rows {
            let mut total = 0.0;
            for (gn, &pg) in g.row(i).iter().enumerate() {
                if pg == 0.0 {
                    continue;
                }
                for (hn, &ph) in h.row(j).iter().enumerate() {
                    if ph == 0.0 {
                        continue;
                    }
                    let u = h.value(hn).min(b_max);
                    total += pg * ph * (1.0 - packet_success_prob(g.value(gn), u, ch));
                }
            }
            out.push(total);
        }
    }
    Ok(out)
}

/// Evaluate the sufficient condition `sup E[1 - h(g' min(H', B_max))] <= rho / ||A||^2`.
pub fn check_a2(
    gain: &StochProcessSpec,
    harvest: &StochProcessSpec,
    b_max: f64,
    ch: &DropoutChannel,
    rho: f64,
    model: &SystemModel,
) -> Result<StabilityReport> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::schema("rho", "a real in [0, 1)"));
    }
    let lhs_sup = expected_losses(gain, harvest, b_max, ch)?
        .into_iter()
        .fold(0.0, f64::max);
    let norm = model.a_norm();
    let rho_bound = rho / (norm * norm);
    Ok(StabilityReport {
        lhs_sup,
        rho,
        rho_bound,
        satisfied: lhs_sup <= rho_bound,
        alpha_fit: 0.0,
        beta_fit: 0.0,
        fit_rate: 0.0,
        max_residual: 0.0,
    })
}

/// Smallest `rho` satisfying the condition, `lhs_sup ||A||^2`, or `None` when it is not below 1.
pub fn minimal_rho(
    gain: &StochProcessSpec,
    harvest: &StochProcessSpec,
    b_max: f64,
    ch: &DropoutChannel,
    model: &SystemModel,
) -> Result<Option<f64>> {
    let lhs = expected_losses(gain, harvest, b_max, ch)?
        .into_iter()
        .fold(0.0, f64::max);
    let norm = model.a_norm();
    let rho = lhs * norm * norm;
    Ok((rho < 1.0).then_some(rho))
}

/// Monte Carlo `E||P_k||` (spectral norm) for `k = 0..=horizon` when every step spends the
/// whole battery, so that `u_k = min(H_k, B_max)` after the first step.
#[allow(clippy::too_many_arguments)]
pub fn full_harvest_norm_curve(
    model: &SystemModel,
    gain: &StochProcessSpec,
    harvest: &StochProcessSpec,
    battery: &Battery,
    ch: &DropoutChannel,
    n_runs: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let runs: Vec<Vec<f64>> = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut p = model.p0().clone();
            let mut b = battery.b0;
            let mut g = crate::model::sample_process(gain, None, &mut rng)?;
            let mut h = crate::model::sample_process(harvest, None, &mut rng)?;
            let mut norms = Vec::with_capacity(horizon + 1);
            norms.push(spectral_norm(&p));
            for _ in 0..horizon {
                let u = b;
                let gamma = rng.random::<f64>() < packet_success_prob(g, u, ch);
                p = riccati_step(&p, gamma, model)?;
                norms.push(spectral_norm(&p));
                g = crate::model::sample_process(gain, Some(g), &mut rng)?;
                h = crate::model::sample_process(harvest, Some(h), &mut rng)?;
                b = crate::model::battery_step(b, u, h, battery)?;
            }
            Ok(norms)
        })
        .collect::<Result<_>>()?;
    let mut mean = vec![0.0; horizon + 1];
    for run in &runs {
        for (m, x) in mean.iter_mut().zip(run) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n_runs as f64;
    }
    Ok(mean)
}

/// Least-squares fit of `y_k ~ alpha r^k + beta` at a fixed rate `r`, with `alpha` of either sign.
pub fn fit_at_rate(y: &[f64], r: f64) -> (f64, f64) {
    let x: Vec<f64> = (0..y.len()).map(|k| r.powi(k as i32)).collect();
    let n = y.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * sxx - sx * sx;
    if det.abs() <= 1e-12 * n * sxx {
        return (0.0, sy / n);
    }
    let alpha = (n * sxy - sx * sy) / det;
    (alpha, (sy - alpha * sx) / n)
}

/// Shape fit of an expected-norm curve and the bound it certifies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialFit {
    /// Coefficient of the certified bound `alpha rho^k + beta`, never negative.
    pub alpha: f64,
    pub beta: f64,
    /// Decay rate of the fitted shape.
    pub rate: f64,
    /// Largest `|y_k - fit_k|`.
    pub max_residual: f64,
}

/// Number of candidate rates scanned on `(0, 1)`.
const RATE_GRID: usize = 1000;

/// Fit `y_k ~ a r^k + beta` over rates `r` in `(0, 1)`, keeping the least squared error.
///
/// A decaying shape (`a >= 0`) is admissible only for `r <= rho`, since `a r^k <= a rho^k`
/// then makes it a bound at rate `rho`. A rising shape (`a < 0`) is bounded by `beta` alone
/// at any rate and certifies `alpha = 0`.
pub fn fit_exponential_bound(y: &[f64], rho: f64) -> ExponentialFit {
    let shape = |r: f64, a: f64, b: f64| y.iter().enumerate().map(move |(k, v)| v - a * r.powi(k as i32) - b);
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for i in 1..RATE_GRID {
        let r = i as f64 / RATE_GRID as f64;
        let (a, b) = fit_at_rate(y, r);
        if (a >= 0.0 && r > rho) || b < 0.0 {
            continue;
        }
        let sse: f64 = shape(r, a, b).map(|e| e * e).sum();
        if best.is_none_or(|(s, ..)| sse < s) {
            best = Some((sse, r, a, b));
        }
    }
    let (r, a, b) = match best {
        Some((_, r, a, b)) => (r, a, b),
        None => (rho, 0.0, y.iter().copied().fold(0.0, f64::max)),
    };
    ExponentialFit {
        alpha: a.max(0.0),
        beta: b,
        rate: r,
        max_residual: shape(r, a, b).map(f64::abs).fold(0.0, f64::max),
    }
}

/// Simulate the full-harvest policy, fit the exponential bound and check the fit.
///
/// Fails with `A2NotSatisfied` when the condition does not hold for `rho`, and with
/// `BoundViolated` when the largest residual exceeds 5% of `beta`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_bound_fit(
    model: &SystemModel,
    gain: &StochProcessSpec,
    harvest: &StochProcessSpec,
    battery: &Battery,
    ch: &DropoutChannel,
    rho: f64,
    n_runs: usize,
    horizon: usize,
    seed: u64,
) -> Result<StabilityReport> {
    let mut report = check_a2(gain, harvest, battery.b_max, ch, rho, model)?;
    if !report.satisfied {
        return Err(Error::A2NotSatisfied {
            lhs: report.lhs_sup,
            bound: report.rho_bound,
        });
    }
    let curve = full_harvest_norm_curve(model, gain, harvest, battery, ch, n_runs, horizon, seed)?;
    let fit = fit_exponential_bound(&curve, rho);
    report.alpha_fit = fit.alpha;
    report.beta_fit = fit.beta;
    report.fit_rate = fit.rate;
    report.max_residual = fit.max_residual;
    let limit = 0.05 * fit.beta;
    if fit.max_residual > limit {
        return Err(Error::BoundViolated {
            excess: fit.max_residual,
            limit,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model() -> SystemModel {
        SystemModel::scalar(1.2, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn perfect_channel_always_satisfies() {
        let exp = StochProcessSpec::IidExponential { mean: 1.0 };
        let r = check_a2(&exp, &exp, 2.0, &DropoutChannel::constant(1.0), 0.0, &model()).unwrap();
        assert_eq!(r.lhs_sup, 0.0);
        assert!(r.satisfied);
    }

    #[test]
    fn dead_channel_never_satisfies() {
        let exp = StochProcessSpec::IidExponential { mean: 1.0 };
        let r = check_a2(&exp, &exp, 2.0, &DropoutChannel::constant(0.0), 0.999, &model()).unwrap();
        assert_relative_eq!(r.lhs_sup, 1.0, max_relative = 1e-9);
        assert!(!r.satisfied);
    }

    #[test]
    fn rejects_rho_outside_unit_interval() {
        let exp = StochProcessSpec::IidExponential { mean: 1.0 };
        assert!(check_a2(&exp, &exp, 2.0, &DropoutChannel::constant(0.0), 1.0, &model()).is_err());
    }

    #[test]
    fn fit_recovers_exact_curve() {
        let y: Vec<f64> = (0..40).map(|k| 3.0 * 0.6f64.powi(k) + 2.0).collect();
        let fit = fit_exponential_bound(&y, 0.6);
        assert_relative_eq!(fit.alpha, 3.0, max_relative = 1e-9);
        assert_relative_eq!(fit.beta, 2.0, max_relative = 1e-9);
        assert!(fit.max_residual < 1e-9);
    }

    #[test]
    fn rising_curve_is_bounded_by_its_level() {
        let y: Vec<f64> = (0..40).map(|k| 2.0 - 1.5 * 0.8f64.powi(k)).collect();
        let fit = fit_exponential_bound(&y, 0.3);
        assert_eq!(fit.alpha, 0.0);
        assert_relative_eq!(fit.beta, 2.0, max_relative = 1e-9);
        assert_relative_eq!(fit.rate, 0.8, max_relative = 1e-9);
    }

    #[test]
    fn fast_decay_is_refit_within_the_supplied_rate() {
        let y: Vec<f64> = (0..40).map(|k| 5.0 * 0.9f64.powi(k) + 1.0).collect();
        let fit = fit_exponential_bound(&y, 0.5);
        assert!(fit.rate <= 0.5);
        assert!(fit.alpha >= 0.0);
    }
}
