mod common;

use approx::assert_relative_eq;
use common::{simpson_normal_cdf, two_state_oracle};
use harvest_core::model::{
    battery_step, packet_success_prob, riccati_step, sample_feedback, sample_process, std_normal_cdf,
};
use harvest_core::subopt::{p_hat_expected_step, p_hat_step};
use harvest_core::{Battery, DropoutChannel, FeedbackChannel, StochProcessSpec, SystemModel};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scalar_model() -> SystemModel {
    SystemModel::scalar(1.2, 1.0, 1.0, 1.0, 1.0).unwrap()
}

fn s(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

#[test]
fn riccati_scalar_hand_values() {
    let m = scalar_model();
    let lost = riccati_step(&s(1.0), false, &m).unwrap()[(0, 0)];
    let got = riccati_step(&s(1.0), true, &m).unwrap()[(0, 0)];
    assert_relative_eq!(lost, 1.44 + 1.0, max_relative = 1e-10);
    assert_relative_eq!(got, 2.44 - 1.44 / 2.0, max_relative = 1e-10);
}

#[test]
fn riccati_loss_is_open_loop_exactly() {
    let m = scalar_model();
    let p0 = m.p0().clone();
    let lost = riccati_step(&p0, false, &m).unwrap();
    assert_eq!(lost, m.a() * &p0 * m.a().transpose() + m.q());
}

#[test]
fn riccati_two_state_matches_entrywise_oracle() {
    let m = SystemModel::new(
        DMatrix::from_row_slice(2, 2, &[1.1, 0.3, 0.0, 0.9]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
        DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.4]),
        s(0.2),
        DMatrix::identity(2, 2),
    )
    .unwrap();
    let p = [[2.0, 0.3], [0.3, 1.5]];
    let pm = DMatrix::from_row_slice(2, 2, &[p[0][0], p[0][1], p[1][0], p[1][1]]);
    for gamma in [false, true] {
        let got = riccati_step(&pm, gamma, &m).unwrap();
        let want = two_state_oracle(p, gamma);
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(got[(i, j)], want[i][j], max_relative = 1e-10);
            }
        }
    }
}

#[test]
fn bpsk_matches_quadrature() {
    let ch = DropoutChannel::Bpsk { bits: 4 };
    assert_relative_eq!(packet_success_prob(0.0, 3.0, &ch), 0.0625, max_relative = 1e-12);
    assert!((packet_success_prob(1e3, 1e3, &ch) - 1.0).abs() < 1e-9);
    let oracle = simpson_normal_cdf(2.0).powi(4);
    assert_relative_eq!(packet_success_prob(2.0, 2.0, &ch), oracle, max_relative = 1e-10);
    assert!((oracle - 0.91204).abs() < 5e-5);
    for x in [0.1, 0.7, 1.3, 2.9, 4.4] {
        assert_relative_eq!(std_normal_cdf(x), simpson_normal_cdf(x), max_relative = 1e-10);
    }
}

#[test]
fn battery_examples() {
    let bat = Battery::new(0.0, 2.0).unwrap();
    assert_eq!(battery_step(2.0, 1.0, 5.0, &bat).unwrap(), 2.0);
    assert_eq!(battery_step(2.0, 2.0, 0.0, &bat).unwrap(), 0.0);
    assert_relative_eq!(battery_step(1.5, 0.5, 0.3, &bat).unwrap(), 1.3, max_relative = 1e-10);
    assert!(battery_step(1.0, 1.5, 0.0, &bat).is_err());
}

#[test]
fn p_hat_step_examples() {
    let m = scalar_model();
    let fb = FeedbackChannel::new(0.2, 0.4).unwrap();
    let ch = DropoutChannel::constant(0.5);
    let next = p_hat_step(&s(1.0), 1, 1.0, 1.0, &m, &ch, &fb).unwrap()[(0, 0)];
    assert_relative_eq!(next, 0.2 * 2.44 + 0.8 * 1.72, max_relative = 1e-10);

    let perfect = FeedbackChannel::new(0.0, 0.0).unwrap();
    let got = p_hat_step(&s(1.0), 1, 1.0, 1.0, &m, &ch, &perfect).unwrap()[(0, 0)];
    assert_relative_eq!(got, 1.72, max_relative = 1e-10);

    let dead = DropoutChannel::constant(0.0);
    let erased = p_hat_step(&s(1.0), 2, 1.0, 1.0, &m, &dead, &fb).unwrap()[(0, 0)];
    assert_relative_eq!(erased, 2.44, max_relative = 1e-10);
}

#[test]
fn p_hat_expected_step_is_the_acknowledgment_average() {
    let m = scalar_model();
    let fb = FeedbackChannel::new(0.2, 0.4).unwrap();
    let ch = DropoutChannel::Bpsk { bits: 4 };
    let (g, u, p) = (1.3, 0.8, 1.7);
    let p1 = packet_success_prob(g, u, &ch);
    let mut oracle = 0.0;
    for gamma_hat in 0..3u8 {
        let prob = fb.prob(gamma_hat, false) * (1.0 - p1) + fb.prob(gamma_hat, true) * p1;
        oracle += prob * p_hat_step(&s(p), gamma_hat, g, u, &m, &ch, &fb).unwrap()[(0, 0)];
    }
    let got = p_hat_expected_step(&s(p), g, u, &m, &ch).unwrap()[(0, 0)];
    assert_relative_eq!(got, oracle, max_relative = 1e-10);
}

/// `|freq - p| <= 3 sqrt(p (1 - p) / n)`.
fn within_three_sigma(count: usize, n: usize, p: f64) -> bool {
    let freq = count as f64 / n as f64;
    (freq - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

#[test]
fn feedback_sampling_frequencies() {
    let fb = FeedbackChannel::new(0.2, 0.4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1_000_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        counts[sample_feedback(true, &fb, &mut rng) as usize] += 1;
    }
    assert!(within_three_sigma(counts[0], n, 0.12));
    assert!(within_three_sigma(counts[1], n, 0.48));
    assert!(within_three_sigma(counts[2], n, 0.40));

    let perfect = FeedbackChannel::new(0.0, 0.0).unwrap();
    let erasing = FeedbackChannel::new(0.3, 1.0).unwrap();
    for _ in 0..1000 {
        assert_eq!(sample_feedback(true, &perfect, &mut rng), 1);
        assert_eq!(sample_feedback(false, &erasing, &mut rng), 2);
    }
}

#[test]
fn process_sampling_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 1_000_000;
    let exp = StochProcessSpec::IidExponential { mean: 1.0 };
    let mean = (0..n)
        .map(|_| sample_process(&exp, None, &mut rng).unwrap())
        .sum::<f64>()
        / n as f64;
    assert!((mean - 1.0).abs() < 0.01);

    let chain = StochProcessSpec::FiniteMarkov {
        states: vec![0.0, 1.0],
        transition: vec![vec![0.3, 0.7], vec![0.6, 0.4]],
        initial: vec![1.0, 0.0],
    };
    let ones = (0..n)
        .filter(|_| sample_process(&chain, Some(0.0), &mut rng).unwrap() == 1.0)
        .count();
    assert!(within_three_sigma(ones, n, 0.7));

    let absorbing = StochProcessSpec::FiniteMarkov {
        states: vec![2.0, 5.0],
        transition: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        initial: vec![0.5, 0.5],
    };
    for _ in 0..100 {
        assert_eq!(sample_process(&absorbing, Some(5.0), &mut rng).unwrap(), 5.0);
    }
}
