mod common;

use approx::assert_relative_eq;
use common::Instance;
use harvest_core::belief::Projection;
use harvest_core::dp::{solve_finite, Solver};
use harvest_core::structural::verify_submodular;
use harvest_core::{DropoutChannel, FeedbackChannel};

fn perfect() -> FeedbackChannel {
    FeedbackChannel::new(0.0, 0.0).unwrap()
}

fn check_against_brute_force(inst: &Instance, horizon: usize) {
    let (grid, model) = inst.grid();
    let (tables, _) = solve_finite(horizon, &grid, &model, &inst.channel(), &perfect()).unwrap();
    for (k, table) in tables.iter().enumerate() {
        for s in 0..grid.len() {
            let (i, g, hv, b) = grid.coords(s);
            let oracle = inst.value(i, g, hv, b, k, horizon);
            assert_relative_eq!(table.values[s], oracle, max_relative = 1e-9);
        }
    }
}

#[test]
fn two_stage_micro_instance_matches_enumeration() {
    let inst = Instance::micro(Projection::Linear);
    assert_eq!(inst.grid().0.shape(), [3, 2, 2, 3]);
    check_against_brute_force(&inst, 2);
}

#[test]
fn two_stage_micro_instance_with_nearest_projection() {
    check_against_brute_force(&Instance::micro(Projection::Nearest), 2);
}

#[test]
fn three_stage_micro_instance_matches_enumeration() {
    check_against_brute_force(&Instance::micro(Projection::Linear), 3);
}

#[test]
fn single_stage_spends_the_battery() {
    let inst = Instance::micro(Projection::Linear);
    let (grid, model) = inst.grid();
    let (tables, policies) = solve_finite(1, &grid, &model, &inst.channel(), &perfect()).unwrap();
    for s in 0..grid.len() {
        let (i, g, hv, b) = grid.coords(s);
        assert_eq!(policies[0].actions[s], inst.battery[b]);
        assert_relative_eq!(tables[0].values[s], inst.value(i, g, hv, b, 0, 1), max_relative = 1e-12);
    }
}

#[test]
fn dead_channel_makes_energy_irrelevant() {
    let inst = Instance::micro(Projection::Linear);
    let (grid, model) = inst.grid();
    let (tables, policies) = solve_finite(3, &grid, &model, &DropoutChannel::constant(0.0), &perfect()).unwrap();
    for k in 0..2 {
        assert!(policies[k].actions.iter().all(|&u| u == 0.0));
        for s in 0..grid.len() {
            let (i, _, _, _) = grid.coords(s);
            let reference = tables[k].values[grid.index(i, 0, 0, 0)];
            assert_relative_eq!(tables[k].values[s], reference, max_relative = 1e-12);
        }
    }
}

#[test]
fn stage_objective_matches_enumeration() {
    let inst = Instance::micro(Projection::Linear);
    let (grid, model) = inst.grid();
    let (tables, _) = solve_finite(2, &grid, &model, &inst.channel(), &perfect()).unwrap();
    let solver = Solver::new(&grid, &model, &inst.channel(), &perfect()).unwrap();
    for s in (0..grid.len()).step_by(inst.battery.len()) {
        let (i, g, hv, _) = grid.coords(s);
        let l = solver.stage_objective(&tables[1].values, i, g, hv);
        for (b, row) in l.iter().enumerate() {
            for (a, &entry) in row.iter().enumerate() {
                let u = inst.battery[a];
                match entry {
                    Some(v) => assert_relative_eq!(v, inst.objective(i, g, hv, b, u, 0, 2), max_relative = 1e-9),
                    None => assert!(u > inst.battery[b]),
                }
            }
        }
    }
}

/// A random next-step gain couples the reception probability of the current step to the
/// curvature of the continuation, and the stage objective loses submodularity even though
/// the channel is concave.
#[test]
fn random_next_gain_breaks_submodularity_on_enumeration() {
    let x: Vec<f64> = (0..=200).map(|k| k as f64 * 0.0625).collect();
    let mut inst = Instance {
        cov: vec![1.0, 1.95, 2.68, 7.2, 19.3, 51.8],
        gains: vec![2.5],
        gain_rows: vec![vec![1.0]],
        harvests: vec![0.0, 0.25, 1.0],
        harvest_rows: vec![vec![0.4, 0.3, 0.3]; 3],
        battery: (0..9).map(|k| k as f64 * 0.25).collect(),
        h_table: x.iter().map(|&v| (v, 1.0 - (-v).exp())).collect(),
        projection: Projection::Linear,
    };
    let objective = |inst: &Instance, i: usize, g: usize| -> Vec<Vec<Option<f64>>> {
        (0..inst.battery.len())
            .map(|b| {
                inst.battery
                    .iter()
                    .map(|&u| (u <= inst.battery[b]).then(|| inst.objective(i, g, 0, b, u, 0, 2)))
                    .collect()
            })
            .collect()
    };
    for i in 0..inst.cov.len() {
        assert!(verify_submodular(&objective(&inst, i, 0)).is_empty());
    }
    inst.gains = vec![0.25, 2.5];
    inst.gain_rows = vec![vec![0.5, 0.5]; 2];
    let violation = verify_submodular(&objective(&inst, 4, 1))[0];
    assert!(violation.excess > 0.1, "{violation:?}");
}
