//! Grid-based dynamic programming over `(info, g, H, B)`.

mod axis;
mod io;
mod noncausal;
mod process;
mod solver;

pub use axis::{sample_belief_set, BeliefSampling, BeliefSet, InfoAxis};
pub use io::{read_policies_csv, write_table_csv, write_tables_csv};
pub use noncausal::{solve_noncausal, NoncausalSolution};
pub use process::{discretize_process, ProcessAxis};
pub use solver::{
    bellman_backup_finite, evaluate_average, relative_value_iteration, solve_average, solve_average_with, solve_finite,
    uniform_actions, AverageSolution, ExpectedNext, Policy, RviOptions, RviOutcome, Solver, Stage, StateGrid,
    ValueTable,
};
