//! Python bindings: problems, the effective Hamiltonian, cell problems and the
//! parabolic solvers, with plain lists for grid functions and JSON strings for
//! structured reports.

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use levy_homog::bellman::{DiscreteBellman, ProblemData, StationaryOptions};
use levy_homog::cell::{solve_cell as solve_cell_core, CellAssembler, CellOptions};
use levy_homog::config::{ExperimentConfig, Purpose};
use levy_homog::effective::{solve_effective_parabolic, EffectiveSolver};
use levy_homog::grid::{GridFunction, TorusGrid, Vec2};
use levy_homog::homog::{reference_instance, run_convergence_study};
use levy_homog::kernels::{drift_correction as drift_correction_core, CheckOptions, KernelSpec, LevyKernel};
use levy_homog::Error;

create_exception!(levy_homog, SolverError, PyRuntimeError);

fn to_py(e: Error) -> PyErr {
    if e.is_solver_failure() {
        SolverError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn vec2(p: &[f64]) -> PyResult<Vec2> {
    match p {
        [a] => Ok([*a, 0.0]),
        [a, b] => Ok([*a, *b]),
        _ => Err(PyValueError::new_err("gradients have one or two components")),
    }
}

fn grid_function(grid: TorusGrid, values: Vec<f64>) -> PyResult<GridFunction> {
    GridFunction::new(grid, values).map_err(to_py)
}

/// Periodic grid on the unit torus.
#[pyclass(name = "TorusGrid", frozen)]
struct PyTorusGrid(TorusGrid);

#[pymethods]
impl PyTorusGrid {
    #[new]
    fn new(dim: usize, n: usize) -> PyResult<Self> {
        TorusGrid::new(dim, n).map(Self).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.0.h()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// Coordinates of node `i`.
    fn point(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.0.len() {
            return Err(PyValueError::new_err("node index out of range"));
        }
        Ok(self.0.point(i)[..self.0.dim()].to_vec())
    }

    fn __repr__(&self) -> String {
        format!("TorusGrid(dim={}, n={})", self.0.dim(), self.0.n())
    }
}

/// A homogenization problem with a memoizing effective-Hamiltonian evaluator.
#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    data: ProblemData,
    effective: Option<EffectiveSolver>,
}

impl PyProblem {
    fn wrap(data: ProblemData, cell: CellOptions) -> Self {
        let effective = EffectiveSolver::new(&data, cell).ok();
        Self { data, effective }
    }

    fn solver(&self) -> PyResult<&EffectiveSolver> {
        self.effective.as_ref().ok_or_else(|| PyValueError::new_err("the kernel admits no cell problem"))
    }
}

#[pymethods]
impl PyProblem {
    /// The default two-control one-dimensional instance.
    #[staticmethod]
    #[pyo3(signature = (slow_n=64, fast_n=128, drift_amp=0.5))]
    fn reference(slow_n: usize, fast_n: usize, drift_amp: f64) -> PyResult<Self> {
        Ok(Self::wrap(reference_instance(slow_n, fast_n, drift_amp).map_err(to_py)?, CellOptions::default()))
    }

    /// Builds the problem block of an experiment config given as JSON text.
    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        let cfg = ExperimentConfig::from_json(text).map_err(to_py)?;
        let data = cfg.validate(Purpose::Stationary).map_err(to_py)?;
        Ok(Self::wrap(data, cfg.cell_options()))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.data.dim
    }

    #[getter]
    fn controls(&self) -> usize {
        self.data.m()
    }

    #[getter]
    fn slow_grid(&self) -> PyTorusGrid {
        PyTorusGrid(self.data.slow)
    }

    #[getter]
    fn fast_grid(&self) -> PyTorusGrid {
        PyTorusGrid(self.data.fast)
    }

    #[getter]
    fn drift_bound(&self) -> f64 {
        self.data.drift_bound()
    }

    /// `H̄(x_node, p, u)` for `u` sampled on the slow grid.
    fn effective_hamiltonian(&self, node: usize, p: Vec<f64>, u: Vec<f64>) -> PyResult<f64> {
        let u = grid_function(self.data.slow, u)?;
        self.solver()?.eval(node, vec2(&p)?, &u).map_err(to_py)
    }

    /// `(hits, misses)` of the cell-solve cache.
    fn cache_stats(&self) -> PyResult<(usize, usize)> {
        let s = self.solver()?;
        Ok((s.cache.hits(), s.cache.misses()))
    }

    /// Cell problem at a slow node: JSON with `lambda`, the discount sequence and
    /// the corrector on the fast grid.
    fn solve_cell(&self, node: usize, p: Vec<f64>, u: Vec<f64>) -> PyResult<String> {
        let u = grid_function(self.data.slow, u)?;
        let solver = self.solver()?;
        let p = vec2(&p)?;
        let cp = CellAssembler::new(&self.data).and_then(|a| a.build(node, p, &u, 0.5)).map_err(to_py)?;
        let ev = solve_cell_core(&cp, &solver.options).map_err(to_py)?;
        Ok(serde_json::json!({
            "lambda": ev.lambda,
            "deltas": ev.deltas,
            "lambda_sequence": ev.lambdas,
            "residuals": ev.residuals,
            "lip_measured": ev.lip_measured,
            "corrector": ev.corrector.values(),
        })
        .to_string())
    }

    /// Discounted stationary solution on the slow grid with `ξ = x`.
    fn solve_stationary(&self, delta: f64) -> PyResult<Vec<f64>> {
        let op = DiscreteBellman::oscillatory(&self.data, self.data.slow, 1).map_err(to_py)?;
        let r = op.solve_stationary(delta, &StationaryOptions::default(), None).map_err(to_py)?;
        Ok(r.psi.into_values())
    }

    /// Effective parabolic solution at `times`, one list per snapshot.
    #[pyo3(signature = (u0, t_end, times, tau=None))]
    fn solve_effective(&self, u0: Vec<f64>, t_end: f64, times: Vec<f64>, tau: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
        let u0 = grid_function(self.data.slow, u0)?;
        let sol = solve_effective_parabolic(self.solver()?, &u0, t_end, tau, &times).map_err(to_py)?;
        Ok(sol.snapshots.into_iter().map(GridFunction::into_values).collect())
    }

    /// Oscillatory parabolic solution with `ε = 1/k` on an `n`-point grid.
    #[pyo3(signature = (k, n, u0, t_end, times, tau=None))]
    fn solve_oscillatory(
        &self,
        k: usize,
        n: usize,
        u0: Vec<f64>,
        t_end: f64,
        times: Vec<f64>,
        tau: Option<f64>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let grid = TorusGrid::new(self.data.dim, n).map_err(to_py)?;
        let op = DiscreteBellman::oscillatory(&self.data, grid, k).map_err(to_py)?;
        let sol = op.solve_parabolic(&grid_function(grid, u0)?, t_end, tau, &times).map_err(to_py)?;
        Ok(sol.snapshots.into_iter().map(GridFunction::into_values).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(dim={}, controls={}, slow_n={}, fast_n={}, kernel={})",
            self.data.dim,
            self.data.m(),
            self.data.slow.n(),
            self.data.fast.n(),
            self.data.kernel.family().tag()
        )
    }
}

/// `(−Δ)^{1/2}` of periodic samples on a one-dimensional grid, spectrally.
#[pyfunction]
fn fractional_laplacian_half(values: Vec<f64>) -> PyResult<Vec<f64>> {
    let grid = TorusGrid::new(1, values.len()).map_err(to_py)?;
    let f = grid_function(grid, values)?;
    Ok(levy_homog::nonlocal::fractional_laplacian_half(&f).into_values())
}

/// Drift correction `b_K` of a separable kernel given as a JSON kernel block.
#[pyfunction]
#[pyo3(signature = (kernel_json, dim, control=0, xi=vec![0.0]))]
fn drift_correction(kernel_json: &str, dim: usize, control: usize, xi: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
    let spec: KernelSpec = serde_json::from_str(kernel_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let kernel = LevyKernel::from_spec(dim, &spec).map_err(to_py)?;
    let c = drift_correction_core(&kernel, control, &xi, &CheckOptions::default()).map_err(to_py)?;
    Ok((c.value[..dim].to_vec(), c.error_bound))
}

/// Convergence study for a JSON experiment config; returns the study as JSON.
#[pyfunction]
fn convergence_study(config_json: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(to_py)?;
    let data = cfg.validate(Purpose::Convergence).map_err(to_py)?;
    let study = run_convergence_study(&data, cfg.initial(), cfg.experiment.t_end, &cfg.experiment.epsilons, &cfg.study_options())
        .map_err(|a| to_py(a.error))?;
    serde_json::to_string(&study).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Runs the command-line interface with `argv` (without the program name).
#[pyfunction]
fn run_cli(argv: Vec<String>) -> i32 {
    levy_homog::cli::run(std::iter::once("levy-homog".to_string()).chain(argv))
}

#[pymodule(name = "levy_homog")]
fn levy_homog_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTorusGrid>()?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(fractional_laplacian_half, m)?)?;
    m.add_function(wrap_pyfunction!(drift_correction, m)?)?;
    m.add_function(wrap_pyfunction!(convergence_study, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    Ok(())
}
