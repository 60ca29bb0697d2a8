//! Suboptimal scheme: the sensor replaces the belief by a single covariance estimate
//! `P_hat` driven by the acknowledgments, and plans over `(P_hat, g, H, B)`.

use crate::belief::branch_weights;
use crate::dp::{solve_average, solve_finite, AverageSolution, InfoAxis, Policy, RviOptions, StateGrid, ValueTable};
use crate::error::{Error, Result};
use crate::model::{packet_success_prob, riccati_step, symmetrize, Cov, DropoutChannel, FeedbackChannel, SystemModel};

/// One step of the estimate recursion for acknowledgment `gamma_hat`.
pub fn p_hat_step(
    p_hat: &Cov,
    gamma_hat: u8,
    g: f64,
    u: f64,
    model: &SystemModel,
    ch: &DropoutChannel,
    fb: &FeedbackChannel,
) -> Result<Cov> {
    p_hat_step_with_prob(p_hat, gamma_hat, packet_success_prob(g, u, ch), model, fb)
}

/// [`p_hat_step`] with the reception probability `p1 = h(g u)` already evaluated.
pub fn p_hat_step_with_prob(
    p_hat: &Cov,
    gamma_hat: u8,
    p1: f64,
    model: &SystemModel,
    fb: &FeedbackChannel,
) -> Result<Cov> {
    let (c0, c1) = branch_weights(gamma_hat, p1, fb)?;
    if gamma_hat == 2 {
        return expected_with_prob(p_hat, p1, model);
    }
    let mut out = riccati_step(p_hat, false, model)? * c0;
    if c1 > 0.0 {
        out += riccati_step(p_hat, true, model)? * c1;
    }
    Ok(symmetrize(out))
}

/// `E[P_hat+ | P_hat, g, u] = A P_hat A^T + Q - h(g u) A P_hat C^T (C P_hat C^T + R)^{-1} C P_hat A^T`.
pub fn p_hat_expected_step(p_hat: &Cov, g: f64, u: f64, model: &SystemModel, ch: &DropoutChannel) -> Result<Cov> {
    expected_with_prob(p_hat, packet_success_prob(g, u, ch), model)
}

fn expected_with_prob(p_hat: &Cov, p1: f64, model: &SystemModel) -> Result<Cov> {
    let open = model.open_loop(p_hat);
    if p1 == 0.0 {
        return Ok(open);
    }
    Ok(symmetrize(open - model.correction(p_hat)? * p1))
}

fn require_estimate_axis(grid: &StateGrid) -> Result<()> {
    match grid.info {
        InfoAxis::Estimate { .. } => Ok(()),
        _ => Err(Error::InvalidModel(
            "the suboptimal solvers need an estimate axis".into(),
        )),
    }
}

/// Finite-horizon DP over `(P_hat, g, H, B)`.
pub fn solve_suboptimal_finite(
    horizon: usize,
    grid: &StateGrid,
    model: &SystemModel,
    ch: &DropoutChannel,
    fb: &FeedbackChannel,
) -> Result<(Vec<ValueTable>, Vec<Policy>)> {
    require_estimate_axis(grid)?;
    solve_finite(horizon, grid, model, ch, fb)
}

/// Average-cost relative value iteration over `(P_hat, g, H, B)`.
pub fn solve_suboptimal_average(
    grid: &StateGrid,
    model: &SystemModel,
    ch: &DropoutChannel,
    fb: &FeedbackChannel,
    opts: &RviOptions,
) -> Result<AverageSolution> {
    require_estimate_axis(grid)?;
    solve_average(grid, model, ch, fb, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn model() -> SystemModel {
        SystemModel::scalar(1.2, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    fn one() -> Cov {
        DMatrix::from_element(1, 1, 1.0)
    }

    fn half_channel() -> DropoutChannel {
        DropoutChannel::Table {
            x: vec![0.0, 2.0],
            y: vec![0.0, 1.0],
        }
    }

    #[test]
    fn perfect_feedback_is_riccati() {
        let m = model();
        let ch = DropoutChannel::Bpsk { bits: 4 };
        let out = p_hat_step(&one(), 1, 1.0, 1.0, &m, &ch, &FeedbackChannel::PERFECT).unwrap();
        assert_eq!(out, riccati_step(&one(), true, &m).unwrap());
        let out = p_hat_step(&one(), 0, 1.0, 1.0, &m, &ch, &FeedbackChannel::PERFECT).unwrap();
        assert_eq!(out, riccati_step(&one(), false, &m).unwrap());
    }

    #[test]
    fn erasure_without_reception_is_open_loop() {
        let m = model();
        let fb = FeedbackChannel::new(0.1, 0.3).unwrap();
        let out = p_hat_step(&one(), 2, 1.0, 0.0, &m, &half_channel(), &fb).unwrap();
        assert_relative_eq!(out[(0, 0)], 2.44, max_relative = 1e-14);
    }

    #[test]
    fn hand_computed_mixture() {
        let m = model();
        let fb = FeedbackChannel::new(0.2, 0.4).unwrap();
        let out = p_hat_step(&one(), 1, 1.0, 1.0, &m, &half_channel(), &fb).unwrap();
        assert_relative_eq!(out[(0, 0)], 0.2 * 2.44 + 0.8 * 1.72, max_relative = 1e-12);
    }

    #[test]
    fn expected_step_endpoints() {
        let m = model();
        let never = DropoutChannel::constant(0.0);
        let always = DropoutChannel::constant(1.0);
        assert_relative_eq!(p_hat_expected_step(&one(), 1.0, 1.0, &m, &never).unwrap()[(0, 0)], 2.44);
        assert_relative_eq!(
            p_hat_expected_step(&one(), 1.0, 1.0, &m, &always).unwrap()[(0, 0)],
            1.72,
            max_relative = 1e-14
        );
    }

    #[test]
    fn zero_likelihood_propagates() {
        let m = model();
        let err = p_hat_step(
            &one(),
            2,
            1.0,
            1.0,
            &m,
            &half_channel(),
            &FeedbackChannel::new(0.1, 0.0).unwrap(),
        );
        assert!(matches!(err, Err(Error::ZeroLikelihood { gamma_hat: 2 })));
    }
}
