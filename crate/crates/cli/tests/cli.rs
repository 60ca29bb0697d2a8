use harvest_core::harness::{run_solver, ExperimentConfig, SolverKind};
use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

const SMALL: &str = "seed = 3
[grids]
cov_points = 10
gain_bins = 4
harvest_bins = 4
battery_points = 7
action_points = 7
[simulation]
n_runs = 20
steps = 200
";

fn harvest(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harvest"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("the binary runs")
}

fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn key_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in {text}"))
        .parse()
        .unwrap()
}

#[test]
fn sweep_csv_is_byte_identical_across_invocations() {
    let dir = workspace();
    let args = |out: &'static str| {
        [
            "--config",
            "small.toml",
            "--out",
            out,
            "sweep",
            "--axis",
            "b_max",
            "--values",
            "1,2",
            "--solvers",
            "optimal,suboptimal",
        ]
    };
    assert!(harvest(dir.path(), &args("a.csv")).status.success());
    assert!(harvest(dir.path(), &args("b.csv")).status.success());
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("axis_name,axis_value,solver,mean_cost,ci_half_width,mean_energy,n_runs,seed,error\n"));
}

#[test]
fn solved_table_simulates_to_the_library_result() {
    let dir = workspace();
    let solve = harvest(
        dir.path(),
        &["--config", "small.toml", "--out", "t.csv", "solve", "--average"],
    );
    assert!(solve.status.success(), "{}", String::from_utf8_lossy(&solve.stderr));
    let sim = harvest(dir.path(), &["--config", "small.toml", "simulate", "--policy", "t.csv"]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));

    let cfg = ExperimentConfig::from_toml_str(SMALL).unwrap();
    let expected = run_solver(&cfg, SolverKind::Optimal).unwrap();
    let text = stdout(&sim);
    assert_eq!(key_value(&text, "mean_cost"), expected.mean_cost);
    assert_eq!(key_value(&text, "mean_energy"), expected.mean_energy);
}

#[test]
fn finite_horizon_tables_carry_one_block_per_stage() {
    let dir = workspace();
    let out = harvest(
        dir.path(),
        &["--config", "small.toml", "--out", "f.csv", "solve", "--horizon", "3"],
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let n_info = rows.iter().map(|r| r[1].parse::<usize>().unwrap()).max().unwrap() + 1;
    // 4 gain bins and 7 battery points per information point
    let per_stage = n_info * 4 * 7;
    assert_eq!(rows.len(), 3 * per_stage);
    for (k, chunk) in rows.chunks(per_stage).enumerate() {
        assert!(chunk.iter().all(|r| r[0] == k.to_string()));
    }
    let sim = harvest(dir.path(), &["--config", "small.toml", "simulate", "--policy", "f.csv"]);
    assert!(sim.status.success());
}

#[test]
fn stability_report_scales_the_bound_by_the_dynamics() {
    let dir = workspace();
    let out = harvest(dir.path(), &["stability", "--rho", "0.5"]);
    assert!(out.status.success());
    let text = stdout(&out);
    // default dynamics A = 1.2
    assert!((key_value(&text, "rho_bound") - 0.5 / 1.44).abs() < 1e-12);
    assert!(text.contains("satisfied = false"));
}

#[test]
fn schema_errors_exit_with_code_two() {
    let dir = workspace();
    std::fs::write(dir.path().join("bad.toml"), "[grids]\ncov_points = \"many\"\n").unwrap();
    let out = harvest(dir.path(), &["--config", "bad.toml", "stability"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grids.cov_points"));

    let out = harvest(
        dir.path(),
        &["--config", "small.toml", "--grid-points", "1", "solve", "--average"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn policy_for_another_grid_is_rejected() {
    let dir = workspace();
    assert!(harvest(
        dir.path(),
        &["--config", "small.toml", "--out", "t.csv", "solve", "--average"]
    )
    .status
    .success());
    let out = harvest(
        dir.path(),
        &[
            "--config",
            "small.toml",
            "--grid-points",
            "8",
            "simulate",
            "--policy",
            "t.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exhausted_iterations_exit_with_code_three() {
    let dir = workspace();
    std::fs::write(
        dir.path().join("short.toml"),
        format!("{SMALL}[solver]\nmax_iters = 2\n"),
    )
    .unwrap();
    let out = harvest(dir.path(), &["--config", "short.toml", "solve", "--average"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_flags_are_usage_errors() {
    let dir = workspace();
    for args in [
        &["--feedback", "eta=0.4", "stability"][..],
        &["--feedback", "eta=0.4,eps=x", "stability"],
        &["solve"],
        &["solve", "--horizon", "3", "--average"],
        &["sweep", "--axis", "temperature"],
    ] {
        assert_eq!(harvest(dir.path(), args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn feedback_flag_selects_the_belief_solver() {
    let dir = workspace();
    let out = harvest(
        dir.path(),
        &[
            "--config",
            "small.toml",
            "--feedback",
            "eta=0.4,eps=0.2",
            "--out",
            "b.csv",
            "solve",
            "--average",
        ],
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("info = belief"));
}
