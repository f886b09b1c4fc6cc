//! JSON experiment configuration: problem, solver and experiment blocks.

use serde::{Deserialize, Serialize};

use crate::bellman::{Control, ProblemData, StationaryOptions, StationarySolver};
use crate::cell::{default_ladder, CellOptions};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, TorusGrid, Vec2};
use crate::homog::{epsilon_frequency, reference_initial, reference_instance, PropertySuiteOptions, StudyOptions};
use crate::kernels::{KernelSpec, LevyKernel};
use crate::nonlocal::QuadratureScheme;
use crate::trig::TrigSeries;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    /// One series per axis.
    pub drift: Vec<TrigSeries>,
    pub cost: TrigSeries,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// `"reference"` builds the default two-control instance; controls and
    /// kernel are then ignored.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default = "default_drift_amp")]
    pub drift_amp: f64,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default = "default_slow_n")]
    pub slow_n: usize,
    #[serde(default = "default_fast_n")]
    pub fast_n: usize,
    #[serde(default)]
    pub controls: Vec<ControlConfig>,
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    #[serde(default)]
    pub quadrature: Option<QuadratureScheme>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub ladder: Vec<f64>,
    /// Cauchy tolerance of the discount ladder.
    pub tol: f64,
    pub stationary_tol: f64,
    pub stationary: StationarySolver,
    pub max_iters: usize,
    /// Explicit time step; chosen from the CFL bound when absent.
    pub tau: Option<f64>,
    /// Discount for `solve-stationary`.
    pub delta: f64,
    pub p_step: f64,
    pub cache: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = StationaryOptions::default();
        Self {
            ladder: default_ladder(),
            tol: 1e-6,
            stationary_tol: s.tol,
            stationary: s.solver,
            max_iters: s.max_iters,
            tau: None,
            delta: 0.01,
            p_step: 1e-3,
            cache: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteToggles {
    pub effective: bool,
    pub comparison: bool,
}

impl Default for SuiteToggles {
    fn default() -> Self {
        Self { effective: true, comparison: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentBlock {
    pub epsilons: Vec<f64>,
    /// `ε` for `solve-eps`.
    pub epsilon: f64,
    pub t_end: f64,
    /// Initial datum as a series in `x`; `½ sin 2πx` when absent.
    pub u0: Option<TrigSeries>,
    pub snapshot_times: Vec<f64>,
    /// Slow nodes for `solve-cell` / `tabulate-heff`.
    pub nodes: Vec<usize>,
    pub p_list: Vec<Vec2>,
    pub points_per_period: usize,
    pub lattice_per_axis: usize,
    pub trials: usize,
    pub suites: SuiteToggles,
    /// Aperture of the kernel-check ellipticity cones.
    pub cone_eta: f64,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        Self {
            epsilons: vec![0.25, 0.125, 0.0625],
            epsilon: 0.25,
            t_end: 0.25,
            u0: None,
            snapshot_times: Vec::new(),
            nodes: vec![0],
            p_list: [-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|v| [*v, 0.0]).collect(),
            points_per_period: 64,
            lattice_per_axis: 16,
            trials: 10,
            suites: SuiteToggles::default(),
            cone_eta: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}
fn default_drift_amp() -> f64 {
    0.5
}
fn default_slow_n() -> usize {
    64
}
fn default_fast_n() -> usize {
    128
}

/// What a command needs validated beyond the problem itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Kernel,
    Stationary,
    Cell,
    Epsilon,
    Effective,
    Convergence,
    Properties,
}

impl ExperimentConfig {
    /// Parses JSON; syntax errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("malformed config at line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn kernel(&self) -> Result<LevyKernel> {
        Ok(self.problem_data()?.kernel)
    }

    /// Builds the problem, checking grids and the control list.
    pub fn problem_data(&self) -> Result<ProblemData> {
        let p = &self.problem;
        let mut data = match p.preset.as_deref() {
            Some("reference") => {
                if p.dim != 1 {
                    return Err(Error::Config("the reference preset is one-dimensional".into()));
                }
                reference_instance(p.slow_n, p.fast_n, p.drift_amp)?
            }
            Some(other) => return Err(Error::Config(format!("unknown preset \"{other}\""))),
            None => {
                if p.controls.is_empty() {
                    return Err(Error::Config("the control list is empty".into()));
                }
                let spec = p.kernel.as_ref().ok_or_else(|| Error::Config("missing kernel block".into()))?;
                let kernel = LevyKernel::from_spec(p.dim, spec)?;
                let controls = p.controls.iter().map(|c| Control::new(c.drift.clone(), c.cost.clone())).collect();
                ProblemData::new(controls, kernel, TorusGrid::new(p.dim, p.slow_n)?, TorusGrid::new(p.dim, p.fast_n)?)?
            }
        };
        if let Some(q) = p.quadrature {
            data.scheme = q;
        }
        Ok(data)
    }

    /// Problem plus command-specific checks.
    pub fn validate(&self, purpose: Purpose) -> Result<ProblemData> {
        let data = self.problem_data()?;
        let needs_cell = matches!(purpose, Purpose::Cell | Purpose::Effective | Purpose::Convergence | Purpose::Properties);
        if needs_cell && !(data.kernel.gamma() > 0.5 && data.kernel.gamma() <= 1.0) {
            return Err(Error::Config(format!(
                "cell and effective commands need γ in (1/2, 1], got {}",
                data.kernel.gamma()
            )));
        }
        let e = &self.experiment;
        if matches!(purpose, Purpose::Convergence) {
            if e.epsilons.is_empty() {
                return Err(Error::Config("the ε list is empty".into()));
            }
            for eps in &e.epsilons {
                epsilon_frequency(*eps, data.slow.n())?;
            }
        }
        if matches!(purpose, Purpose::Epsilon) {
            epsilon_frequency(e.epsilon, data.slow.n())?;
        }
        if matches!(purpose, Purpose::Epsilon | Purpose::Effective | Purpose::Convergence) && !(e.t_end > 0.0) {
            return Err(Error::Config(format!("final time must be positive, got {}", e.t_end)));
        }
        if matches!(purpose, Purpose::Cell) && e.nodes.iter().any(|n| *n >= data.slow.len()) {
            return Err(Error::Config("a requested node lies outside the slow grid".into()));
        }
        if !(self.solver.delta > 0.0) {
            return Err(Error::Config("the discount must be positive".into()));
        }
        Ok(data)
    }

    pub fn cell_options(&self) -> CellOptions {
        CellOptions { ladder: self.solver.ladder.clone(), stationary: self.stationary_options(), anchor: 0, tol: self.solver.tol }
    }

    pub fn stationary_options(&self) -> StationaryOptions {
        StationaryOptions {
            solver: self.solver.stationary,
            tol: self.solver.stationary_tol,
            max_iters: self.solver.max_iters,
            ..StationaryOptions::default()
        }
    }

    pub fn study_options(&self) -> StudyOptions {
        StudyOptions {
            points_per_period: self.experiment.points_per_period,
            lattice_per_axis: self.experiment.lattice_per_axis,
            cell: self.cell_options(),
            ..StudyOptions::default()
        }
    }

    pub fn property_options(&self) -> PropertySuiteOptions {
        PropertySuiteOptions {
            node: self.experiment.nodes.first().copied().unwrap_or(0),
            p_list: self.experiment.p_list.clone(),
            seed: self.seed,
            ..PropertySuiteOptions::default()
        }
    }

    /// The initial datum as a function of `x`.
    pub fn initial(&self) -> impl Fn(Vec2) -> f64 + Sync + '_ {
        move |x| match &self.experiment.u0 {
            Some(s) => s.eval(&x, &[0.0, 0.0]),
            None => reference_initial(x),
        }
    }

    pub fn initial_on(&self, grid: TorusGrid) -> Result<GridFunction> {
        GridFunction::from_fn(grid, self.initial())
    }

    /// Snapshot times, `{T/4, T/2, T}` by default.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let t = self.experiment.t_end;
        if self.experiment.snapshot_times.is_empty() {
            vec![t / 4.0, t / 2.0, t]
        } else {
            self.experiment.snapshot_times.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_preset_parses() {
        let c = ExperimentConfig::from_json(r#"{"problem": {"preset": "reference", "slow_n": 16, "fast_n": 32}}"#).unwrap();
        let d = c.validate(Purpose::Convergence).unwrap();
        assert_eq!(d.m(), 2);
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = ExperimentConfig::from_json("{\n  \"problem\": {,}\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn validation_rules() {
        let low_gamma = r#"{"problem": {"slow_n": 16, "fast_n": 16,
            "controls": [{"drift": [{"constant": 0.1}], "cost": {"constant": 1.0}}],
            "kernel": {"family": "separable", "controls": 1, "params": {"factors": [{"constant": 1.0}]},
                       "symmetric": true, "C_K": 4.0, "gamma": 0.4}}}"#;
        let c = ExperimentConfig::from_json(low_gamma).unwrap();
        assert!(c.validate(Purpose::Stationary).is_ok());
        assert!(matches!(c.validate(Purpose::Cell), Err(Error::Config(_))));

        let empty = r#"{"problem": {"controls": [], "kernel": {"family": "separable", "controls": 0,
            "symmetric": true, "C_K": 1.0, "gamma": 1.0}}}"#;
        let c = ExperimentConfig::from_json(empty).unwrap();
        assert!(matches!(c.validate(Purpose::Stationary), Err(Error::Config(_))));

        let bad_eps = r#"{"problem": {"preset": "reference", "slow_n": 16}, "experiment": {"epsilons": [0.25, 0.2]}}"#;
        let c = ExperimentConfig::from_json(bad_eps).unwrap();
        assert!(matches!(c.validate(Purpose::Convergence), Err(Error::Config(_))));
    }
}
