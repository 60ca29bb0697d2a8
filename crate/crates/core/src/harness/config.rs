//! Experiment configuration: a TOML document whose missing entries take the
//! numerical-section defaults (A = 1.2, C = Q = R = 1, BPSK with 4 bits, unit-mean
//! exponential gain and harvest, B_max = 2).

use crate::belief::Projection;
use crate::error::{Error, Result};
use crate::model::{Battery, DropoutChannel, FeedbackChannel, StochProcessSpec, SystemModel};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// A scalar or a row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    fn to_matrix(&self, field: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixSpec::Scalar(v) => Ok(DMatrix::from_element(1, 1, *v)),
            MatrixSpec::Rows(rows) => {
                let n = rows.len();
                let m = rows.first().map_or(0, Vec::len);
                if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
                    return Err(Error::schema(
                        field,
                        "a number or a non-empty rectangular array of rows",
                    ));
                }
                Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub a: MatrixSpec,
    pub c: MatrixSpec,
    pub q: MatrixSpec,
    pub r: MatrixSpec,
    pub p0: MatrixSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            a: MatrixSpec::Scalar(1.2),
            c: MatrixSpec::Scalar(1.0),
            q: MatrixSpec::Scalar(1.0),
            r: MatrixSpec::Scalar(1.0),
            p0: MatrixSpec::Scalar(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    IidExponential,
    FiniteMarkov,
}

/// Law of the gain or harvest process. Exponential means may be given in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessConfig {
    pub kind: ProcessKind,
    pub mean: f64,
    pub mean_in_db: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub transition: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub initial: Vec<f64>,
}

impl Default for ProcessConfig {
    fn default() -> Self {
        ProcessConfig {
            kind: ProcessKind::IidExponential,
            mean: 1.0,
            mean_in_db: false,
            states: Vec::new(),
            transition: Vec::new(),
            initial: Vec::new(),
        }
    }
}

impl ProcessConfig {
    pub fn to_spec(&self, field: &str) -> Result<StochProcessSpec> {
        let spec = match self.kind {
            ProcessKind::IidExponential => {
                let mean = if self.mean_in_db {
                    10f64.powf(self.mean / 10.0)
                } else {
                    self.mean
                };
                StochProcessSpec::IidExponential { mean }
            }
            ProcessKind::FiniteMarkov => StochProcessSpec::FiniteMarkov {
                states: self.states.clone(),
                transition: self.transition.clone(),
                initial: self.initial.clone(),
            },
        };
        spec.validate(field)?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryConfig {
    /// Initial charge; a full battery when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b0: Option<f64>,
    pub b_max: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        BatteryConfig { b0: None, b_max: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackConfig {
    pub epsilon: f64,
    pub eta: f64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig { epsilon: 0.0, eta: 0.0 }
    }
}

/// DP grid sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub cov_points: usize,
    pub gain_bins: usize,
    pub harvest_bins: usize,
    pub battery_points: usize,
    pub action_points: usize,
    /// Mapping of successor covariances onto the covariance grid.
    pub projection: Projection,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            cov_points: 50,
            gain_bins: 10,
            harvest_bins: 10,
            battery_points: 21,
            action_points: 21,
            projection: Projection::default(),
        }
    }
}

/// Finite horizon `T` or the long-run average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "HorizonRepr", into = "HorizonRepr")]
pub enum Horizon {
    Average,
    Finite(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum HorizonRepr {
    Steps(u64),
    Name(String),
}

impl TryFrom<HorizonRepr> for Horizon {
    type Error = String;

    fn try_from(r: HorizonRepr) -> std::result::Result<Self, String> {
        match r {
            HorizonRepr::Steps(0) => Err("a horizon of at least 1 step".into()),
            HorizonRepr::Steps(t) => Ok(Horizon::Finite(t as usize)),
            HorizonRepr::Name(s) if s == "average" => Ok(Horizon::Average),
            HorizonRepr::Name(s) => Err(format!("a positive integer or \"average\", found \"{s}\"")),
        }
    }
}

impl From<Horizon> for HorizonRepr {
    fn from(h: Horizon) -> Self {
        match h {
            Horizon::Average => HorizonRepr::Name("average".into()),
            Horizon::Finite(t) => HorizonRepr::Steps(t as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_runs: usize,
    /// Steps per run in the average-cost mode.
    pub steps: usize,
    pub burn_in_fraction: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_runs: 2000,
            steps: 10_000,
            burn_in_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-6,
            max_iters: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub e0: f64,
    pub e1: f64,
    pub omega: f64,
    pub sigma: f64,
    pub kappa: f64,
    /// Gradient iterations per relative value iteration sweep.
    pub inner_steps: usize,
    pub restarts: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            e0: 0.0,
            e1: 1.0,
            omega: 0.1,
            sigma: 0.5,
            kappa: 1.0,
            inner_steps: 50,
            restarts: 5,
        }
    }
}

/// Reachable-belief sampling for the imperfect-acknowledgment DP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeliefConfig {
    pub trajectories: usize,
    pub steps: usize,
    pub max_beliefs: usize,
}

impl Default for BeliefConfig {
    fn default() -> Self {
        BeliefConfig {
            trajectories: 500,
            steps: 60,
            max_beliefs: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    BMax,
    GainMean,
    Horizon,
    Feedback,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::BMax => "b_max",
            SweepAxis::GainMean => "gain_mean",
            SweepAxis::Horizon => "horizon",
            SweepAxis::Feedback => "feedback",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "b_max" => Some(SweepAxis::BMax),
            "gain_mean" => Some(SweepAxis::GainMean),
            "horizon" => Some(SweepAxis::Horizon),
            "feedback" => Some(SweepAxis::Feedback),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Causal optimal policy (covariance axis with perfect acknowledgments, beliefs otherwise).
    Optimal,
    Suboptimal,
    Noncausal,
    Threshold,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Optimal => "optimal",
            SolverKind::Suboptimal => "suboptimal",
            SolverKind::Noncausal => "noncausal",
            SolverKind::Threshold => "threshold",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<SweepAxis>,
    /// Axis values; `(eta, epsilon)` pairs go in `feedback_pairs`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub feedback_pairs: Vec<[f64; 2]>,
    pub solvers: Vec<SolverKind>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            axis: None,
            values: Vec::new(),
            feedback_pairs: Vec::new(),
            solvers: vec![SolverKind::Optimal],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub horizon: Horizon,
    pub model: ModelConfig,
    /// Fading gain process.
    pub channel: ProcessConfig,
    pub harvest: ProcessConfig,
    pub battery: BatteryConfig,
    pub feedback: FeedbackConfig,
    pub dropout: DropoutChannel,
    pub grids: GridConfig,
    pub simulation: SimulationConfig,
    pub solver: SolverConfig,
    pub threshold: ThresholdConfig,
    pub belief: BeliefConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            horizon: Horizon::Average,
            model: ModelConfig::default(),
            channel: ProcessConfig::default(),
            harvest: ProcessConfig::default(),
            battery: BatteryConfig::default(),
            feedback: FeedbackConfig::default(),
            dropout: DropoutChannel::Bpsk { bits: 4 },
            grids: GridConfig::default(),
            simulation: SimulationConfig::default(),
            solver: SolverConfig::default(),
            threshold: ThresholdConfig::default(),
            belief: BeliefConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Validated model objects derived from a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub model: SystemModel,
    pub gain: StochProcessSpec,
    pub harvest: StochProcessSpec,
    pub battery: Battery,
    pub feedback: FeedbackChannel,
    pub dropout: DropoutChannel,
}

impl ExperimentConfig {
    pub fn experiment(&self) -> Result<Experiment> {
        let m = &self.model;
        let model = SystemModel::new(
            m.a.to_matrix("model.a")?,
            m.c.to_matrix("model.c")?,
            m.q.to_matrix("model.q")?,
            m.r.to_matrix("model.r")?,
            m.p0.to_matrix("model.p0")?,
        )?;
        let gain = self.channel.to_spec("channel")?;
        let harvest = self.harvest.to_spec("harvest")?;
        let b_max = self.battery.b_max;
        let battery = Battery::new(self.battery.b0.unwrap_or(b_max), b_max)?;
        let feedback = FeedbackChannel::new(self.feedback.epsilon, self.feedback.eta)?;
        self.dropout.validate()?;
        Ok(Experiment {
            model,
            gain,
            harvest,
            battery,
            feedback,
            dropout: self.dropout.clone(),
        })
    }

    /// Check every field, including the cross-field invariants.
    pub fn validate(&self) -> Result<()> {
        self.experiment()?;
        let g = &self.grids;
        for (name, v, min) in [
            ("grids.cov_points", g.cov_points, 2),
            ("grids.gain_bins", g.gain_bins, 1),
            ("grids.harvest_bins", g.harvest_bins, 1),
            ("grids.battery_points", g.battery_points, 2),
            ("grids.action_points", g.action_points, 2),
        ] {
            if v < min {
                return Err(Error::schema(name, format!("an integer >= {min}")));
            }
        }
        if self.simulation.n_runs == 0 {
            return Err(Error::schema("simulation.n_runs", "a positive integer"));
        }
        if self.simulation.steps == 0 {
            return Err(Error::schema("simulation.steps", "a positive integer"));
        }
        if !(0.0..1.0).contains(&self.simulation.burn_in_fraction) {
            return Err(Error::schema("simulation.burn_in_fraction", "a real in [0, 1)"));
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::schema("solver.tol", "a positive real"));
        }
        if self.battery.b_max <= 0.0 {
            return Err(Error::schema("battery.b_max", "a positive energy"));
        }
        crate::structural::GradientSchedule::new(self.threshold.omega, self.threshold.sigma, self.threshold.kappa)?;
        Ok(())
    }

    /// Parse a TOML document, filling defaults, and validate it.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::schema("<document>", e.message().to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::schema(field, e.into_inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }
}

/// Read and validate a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_toml_str(&text)
}

/// Write a configuration as TOML.
pub fn emit_config(cfg: &ExperimentConfig, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, cfg.to_toml_string())?;
    Ok(())
}
