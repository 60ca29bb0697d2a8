//! Clairvoyant benchmark: the whole gain and harvest realization is known in advance.

use super::solver::StateGrid;
use crate::error::{Error, Result};
use crate::model::{packet_success_prob, DropoutChannel, FeedbackChannel, SystemModel};

/// Result of a clairvoyant DP over one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct NoncausalSolution {
    /// Optimal `sum_k E[tr P_{k+1}]` from `P0` and the initial charge.
    pub cost: f64,
    /// `E[tr P_{k+1}]` per step under the clairvoyant policy.
    pub expected_costs: Vec<f64>,
    /// `E[u_k]` per step under the clairvoyant policy.
    pub expected_energy: Vec<f64>,
}

/// Deterministic DP over `(info, B)` for a known sequence of `(g_k, H_k)`.
///
/// Step `k` transmits over gain `g_k`; the harvest `H_{k+1}` recharges the battery
/// afterwards, so `H_0` is not used. The gain and harvest axes of `grid` are ignored.
pub fn solve_noncausal(
    realization: &[(f64, f64)],
    grid: &StateGrid,
    model: &SystemModel,
    ch: &DropoutChannel,
    fb: &FeedbackChannel,
    b0: f64,
) -> Result<NoncausalSolution> {
    let horizon = realization.len();
    if horizon == 0 {
        return Err(Error::InvalidModel("realization is empty".into()));
    }
    let info = &grid.info;
    let battery = grid.battery();
    let actions = grid.actions();
    let (ni, nb, na) = (info.len(), battery.len(), actions.len());
    let feasible = |b: usize| actions.iter().take_while(|&&u| u <= battery[b] + 1e-12).count();

    // policies[k][(i, b)] = action index, or `na` for "spend everything" at the last step
    let mut policies: Vec<Vec<usize>> = vec![Vec::new(); horizon];
    let mut succ_cache: Vec<Vec<Vec<(f64, usize)>>> = vec![Vec::new(); horizon];
    let mut v: Vec<f64> = (0..ni * nb)
        .map(|k| {
            let (i, b) = (k / nb, k % nb);
            info.stage_cost(i, packet_success_prob(realization[horizon - 1].0, battery[b], ch))
        })
        .collect();
    policies[horizon - 1] = vec![na; ni * nb];
    for k in (0..horizon - 1).rev() {
        let (g, h_next) = (realization[k].0, realization[k + 1].1);
        let succ: Vec<Vec<(f64, usize)>> = (0..ni * na)
            .map(|x| info.successors(x / na, packet_success_prob(g, actions[x % na], ch), model, fb))
            .collect::<Result<_>>()?;
        let next_pos: Vec<(usize, f64)> = (0..nb * na)
            .map(|x| {
                let (b, a) = (x / na, x % na);
                if actions[a] > battery[b] + 1e-12 {
                    return Ok((0, 0.0));
                }
                grid.battery_position((battery[b] - actions[a] + h_next).min(grid.b_max()))
            })
            .collect::<Result<_>>()?;
        let mut nv = vec![0.0; ni * nb];
        let mut pol = vec![0; ni * nb];
        for i in 0..ni {
            for b in 0..nb {
                let q_value = |a: usize| {
                    let p1 = packet_success_prob(g, actions[a], ch);
                    let (lo, f) = next_pos[b * na + a];
                    let mut q = info.stage_cost(i, p1);
                    for &(w, j) in &succ[i * na + a] {
                        let row = &v[j * nb..(j + 1) * nb];
                        q += w * interp(row, lo, f);
                    }
                    q
                };
                let mut best = (0, q_value(0));
                for a in 1..feasible(b) {
                    let q = q_value(a);
                    if q < best.1 - 1e-12 * best.1.abs().max(1.0) {
                        best = (a, q);
                    }
                }
                nv[i * nb + b] = best.1;
                pol[i * nb + b] = best.0;
            }
        }
        v = nv;
        policies[k] = pol;
        succ_cache[k] = succ;
    }

    let i0 = info.initial_index(model);
    let cost = {
        let (lo, f) = grid.battery_position(b0)?;
        interp(&v[i0 * nb..(i0 + 1) * nb], lo, f)
    };

    // forward pass over the state distribution, splitting battery mass between grid neighbors
    let mut mass = vec![0.0; ni * nb];
    let (lo, f) = grid.battery_position(b0)?;
    mass[i0 * nb + lo] += 1.0 - f;
    if f > 0.0 {
        mass[i0 * nb + lo + 1] += f;
    }
    let mut expected_costs = Vec::with_capacity(horizon);
    let mut expected_energy = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let g = realization[k].0;
        let mut next = vec![0.0; ni * nb];
        let (mut c, mut e) = (0.0, 0.0);
        for (x, &m) in mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let (i, b) = (x / nb, x % nb);
            let a = policies[k][x];
            let u = if a == na { battery[b] } else { actions[a] };
            let p1 = packet_success_prob(g, u, ch);
            c += m * info.stage_cost(i, p1);
            e += m * u;
            if k + 1 < horizon {
                let (lo, f) = grid.battery_position((battery[b] - u + realization[k + 1].1).min(grid.b_max()))?;
                for &(w, j) in &succ_cache[k][i * na + a] {
                    next[j * nb + lo] += m * w * (1.0 - f);
                    if f > 0.0 {
                        next[j * nb + lo + 1] += m * w * f;
                    }
                }
            }
        }
        expected_costs.push(c);
        expected_energy.push(e);
        mass = next;
    }
    Ok(NoncausalSolution {
        cost,
        expected_costs,
        expected_energy,
    })
}

fn interp(row: &[f64], lo: usize, f: f64) -> f64 {
    if f == 0.0 {
        row[lo]
    } else {
        row[lo] * (1.0 - f) + row[lo + 1] * f
    }
}
