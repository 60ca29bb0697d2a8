use harvest_core::dp::{solve_average, solve_finite, uniform_actions, Policy, Solver, Stage, StateGrid};
use harvest_core::harness::config::ProcessKind;
use harvest_core::harness::sweep::rvi_options;
use harvest_core::harness::{build_grid, Experiment, ExperimentConfig, InfoKind};
use harvest_core::structural::{
    battery_convexity_gap, battery_monotonicity_gap, verify_monotone_policy, verify_submodular,
};
use harvest_core::DropoutChannel;

/// Samples of the concave reception curve `1 - exp(-x)`.
fn concave_channel() -> DropoutChannel {
    let x: Vec<f64> = (0..=40).map(|k| k as f64 * 0.25).collect();
    let y = x.iter().map(|v| 1.0 - (-v).exp()).collect();
    DropoutChannel::Table { x, y }
}

/// Concave-channel instance whose actions coincide with the battery grid.
fn setup(constant_gain: bool) -> (ExperimentConfig, Experiment, StateGrid) {
    let mut cfg = ExperimentConfig::default();
    if constant_gain {
        cfg.channel.kind = ProcessKind::FiniteMarkov;
        cfg.channel.states = vec![1.0];
        cfg.channel.transition = vec![vec![1.0]];
        cfg.channel.initial = vec![1.0];
    }
    cfg.dropout = concave_channel();
    cfg.grids.cov_points = 15;
    cfg.grids.gain_bins = 5;
    cfg.grids.harvest_bins = 5;
    cfg.grids.battery_points = 9;
    let exp = cfg.experiment().unwrap();
    let grid = build_grid(&cfg, &exp, InfoKind::Covariance, uniform_actions(2.0, 9)).unwrap();
    (cfg, exp, grid)
}

fn assert_monotone(grid: &StateGrid, actions: &[f64]) {
    let policy = Policy {
        stage: Stage::Stationary,
        actions: actions.to_vec(),
    };
    let violations = verify_monotone_policy(&policy, grid.battery().len());
    assert!(violations.is_empty(), "{:?}", violations[0]);
}

fn submodularity_violations(grid: &StateGrid, solver: &Solver, values_next: &[f64]) -> usize {
    let [ni, ng, nh, _] = grid.shape();
    let mut count = 0;
    for i in 0..ni {
        for g in 0..ng {
            for h in 0..nh {
                count += verify_submodular(&solver.stage_objective(values_next, i, g, h)).len();
            }
        }
    }
    count
}

fn assert_structure(grid: &StateGrid, solver: &Solver, values_next: &[f64], values: &[f64], actions: &[f64]) {
    let nb = grid.battery().len();
    assert_monotone(grid, actions);
    let gap = battery_convexity_gap(values, nb);
    assert!(gap <= 1e-6, "convexity gap {gap}");
    assert!(battery_monotonicity_gap(values, nb) <= 1e-9);
    assert_eq!(submodularity_violations(grid, solver, values_next), 0);
}

#[test]
fn constant_gain_finite_tables_have_the_threshold_structure() {
    let (_, exp, grid) = setup(true);
    let (tables, policies) = solve_finite(4, &grid, &exp.model, &exp.dropout, &exp.feedback).unwrap();
    let solver = Solver::new(&grid, &exp.model, &exp.dropout, &exp.feedback).unwrap();
    for k in 0..3 {
        assert_structure(
            &grid,
            &solver,
            &tables[k + 1].values,
            &tables[k].values,
            &policies[k].actions,
        );
    }
}

#[test]
fn constant_gain_average_solution_has_the_threshold_structure() {
    let (cfg, exp, grid) = setup(true);
    let sol = solve_average(&grid, &exp.model, &exp.dropout, &exp.feedback, &rvi_options(&cfg)).unwrap();
    let solver = Solver::new(&grid, &exp.model, &exp.dropout, &exp.feedback).unwrap();
    assert_structure(
        &grid,
        &solver,
        &sol.values.values,
        &sol.values.values,
        &sol.policy.actions,
    );
}

#[test]
fn random_gain_policies_stay_monotone_without_submodularity() {
    let (cfg, exp, grid) = setup(false);
    let sol = solve_average(&grid, &exp.model, &exp.dropout, &exp.feedback, &rvi_options(&cfg)).unwrap();
    let solver = Solver::new(&grid, &exp.model, &exp.dropout, &exp.feedback).unwrap();
    assert_monotone(&grid, &sol.policy.actions);
    assert!(submodularity_violations(&grid, &solver, &sol.values.values) > 0);
}
