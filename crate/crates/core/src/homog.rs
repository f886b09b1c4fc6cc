//! End-to-end homogenization experiment: the ε-family on fine grids, the
//! effective problem on the slow grid, and sup-lattice errors between them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bellman::{Control, DiscreteBellman, ProblemData, StationaryOptions};
use crate::cell::{sigma_cap, CellOptions};
use crate::effective::{
    check_convexity_in_u, check_global_comparison, check_holder_in_x, check_lipschitz_in_p, effective_growth_bound,
    solve_effective_parabolic, EffectiveSolver, GrowthInstance, PropertyReport,
};
use crate::error::{Error, Result};
use crate::grid::{sample_lattice, sup_norm_diff, GridFunction, TorusGrid, Vec2};
use crate::kernels::LevyKernel;
use crate::nonlocal::half_laplacian_constant;
use crate::trig::TrigSeries;

/// The default two-control instance in `d = 1`: kernel factors `2 + sin 2πξ` and
/// `2 + cos 2πξ` on the calibrated `|z|^{-2}` density, drifts
/// `±amp·cos 2π(x+ξ)`, costs `sin 2πx (1 + ½ sin 2πξ)` and its shift in `ξ`
/// by a quarter period, `sin 2πx (1 + ½ cos 2πξ)`.
pub fn reference_instance(slow_n: usize, fast_n: usize, drift_amp: f64) -> Result<ProblemData> {
    let factors = vec![
        TrigSeries::constant(2.0).with_sin(1.0, &[], &[1]),
        TrigSeries::constant(2.0).with_cos(1.0, &[], &[1], 0.0),
    ];
    let kernel = LevyKernel::separable(1, factors, 1.0 / half_laplacian_constant(1))?.with_lower_constant(0.5)?;
    let drift = |s: f64| vec![TrigSeries::default().with_cos(s * drift_amp, &[1], &[1], 0.0)];
    let cost1 = TrigSeries::default().with_sin(1.0, &[1], &[]).with_product(
        0.5,
        vec![crate::trig::TrigFactor::sin(&[1], &[]), crate::trig::TrigFactor::sin(&[], &[1])],
    );
    let cost2 = TrigSeries::default().with_sin(1.0, &[1], &[]).with_product(
        0.5,
        vec![crate::trig::TrigFactor::sin(&[1], &[]), crate::trig::TrigFactor::cos(&[], &[1])],
    );
    ProblemData::new(
        vec![Control::new(drift(1.0), cost1), Control::new(drift(-1.0), cost2)],
        kernel,
        TorusGrid::new(1, slow_n)?,
        TorusGrid::new(1, fast_n)?,
    )
}

/// `u0(x) = ½ sin 2πx`.
pub fn reference_initial(x: Vec2) -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * x[0]).sin()
}

/// Final time of the reference experiment.
pub const REFERENCE_T: f64 = 0.25;

/// Knobs of a convergence study.
#[derive(Debug, Clone, Serialize)]
pub struct StudyOptions {
    /// Grid points per fast period for the ε-problems.
    pub points_per_period: usize,
    /// Lattice points per axis for the sup error.
    pub lattice_per_axis: usize,
    pub cell: CellOptions,
    /// Relative slack of the monotonicity verdict.
    pub slack: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self { points_per_period: 64, lattice_per_axis: 16, cell: CellOptions::default(), slack: 0.1 }
    }
}

/// One ε-solve of the study.
#[derive(Debug, Clone, Serialize)]
pub struct EpsilonRun {
    pub epsilon: f64,
    pub grid_n: usize,
    pub steps: usize,
    pub tau: f64,
    /// Sup error per sample time.
    pub errors: Vec<f64>,
    pub max_error: f64,
}

/// Result of [`run_convergence_study`].
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStudy {
    pub epsilons: Vec<f64>,
    pub times: Vec<f64>,
    pub slow_n: usize,
    pub fast_n: usize,
    pub lattice_per_axis: usize,
    pub effective_steps: usize,
    pub effective_tau: f64,
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub runs: Vec<EpsilonRun>,
    /// `None` for a single ε.
    pub monotone: Option<bool>,
    /// `max_error(last) / max_error(first)`.
    pub reduction: Option<f64>,
    pub failure: Option<String>,
}

impl ConvergenceStudy {
    /// `(epsilon, time, sup_error)` rows.
    pub fn error_rows(&self) -> Vec<(f64, f64, f64)> {
        self.runs
            .iter()
            .flat_map(|r| self.times.iter().zip(&r.errors).map(move |(t, e)| (r.epsilon, *t, *e)))
            .collect()
    }

    /// Writes the `epsilon,time,sup_error` table.
    pub fn write_errors_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["epsilon", "time", "sup_error"])?;
        for (e, t, err) in self.error_rows() {
            wr.write_record([format!("{e:.17e}"), format!("{t:.17e}"), format!("{err:.17e}")])?;
        }
        wr.flush()?;
        Ok(())
    }

    fn finish(&mut self, slack: f64) {
        if self.runs.len() >= 2 {
            let m: Vec<f64> = self.runs.iter().map(|r| r.max_error).collect();
            self.monotone = Some(m.windows(2).all(|w| w[1] <= (1.0 + slack) * w[0]));
            self.reduction = Some(if m[0] > 0.0 { m[m.len() - 1] / m[0] } else { 0.0 });
        }
    }
}

/// A study aborted by a failing sub-solve, with what was completed.
#[derive(Debug)]
pub struct StudyAbort {
    pub error: Error,
    pub partial: ConvergenceStudy,
}

impl std::fmt::Display for StudyAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "convergence study aborted: {}", self.error)
    }
}

/// `1/ε` as an integer dividing the slow grid size.
pub fn epsilon_frequency(eps: f64, slow_n: usize) -> Result<usize> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Config(format!("ε = {eps} must lie in (0,1]")));
    }
    let k = (1.0 / eps).round();
    if ((1.0 / eps) - k).abs() > 1e-9 * k || slow_n % (k as usize) != 0 {
        return Err(Error::Config(format!("ε = {eps} is not 1/k with k dividing the slow grid size {slow_n}")));
    }
    Ok(k as usize)
}

/// Solves `u^ε` for every ε and `ū` once, and compares them at `{T/4, T/2, T}`
/// on a lattice.
pub fn run_convergence_study(
    data: &ProblemData,
    u0: impl Fn(Vec2) -> f64 + Sync,
    t_end: f64,
    eps_list: &[f64],
    opts: &StudyOptions,
) -> std::result::Result<ConvergenceStudy, Box<StudyAbort>> {
    let times = vec![t_end / 4.0, t_end / 2.0, t_end];
    let mut study = ConvergenceStudy {
        epsilons: eps_list.to_vec(),
        times: times.clone(),
        slow_n: data.slow.n(),
        fast_n: data.fast.n(),
        lattice_per_axis: opts.lattice_per_axis,
        effective_steps: 0,
        effective_tau: 0.0,
        cache_hits: 0,
        cache_misses: 0,
        runs: Vec::new(),
        monotone: None,
        reduction: None,
        failure: None,
    };
    macro_rules! abort {
        ($e:expr) => {{
            let error: Error = $e;
            study.failure = Some(error.to_string());
            study.finish(opts.slack);
            return Err(Box::new(StudyAbort { error, partial: study }));
        }};
    }
    if eps_list.is_empty() || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        abort!(Error::Config("the ε list must be nonempty and strictly decreasing".into()));
    }
    let mut ks = Vec::new();
    for e in eps_list {
        match epsilon_frequency(*e, data.slow.n()) {
            Ok(k) => ks.push(k),
            Err(err) => abort!(err),
        }
    }
    let points = sample_lattice(data.dim, opts.lattice_per_axis);

    let solver = match EffectiveSolver::new(data, opts.cell.clone()) {
        Ok(s) => s,
        Err(e) => abort!(e),
    };
    let ubar0 = match GridFunction::from_fn(data.slow, &u0) {
        Ok(u) => u,
        Err(e) => abort!(e),
    };
    let ubar = match solve_effective_parabolic(&solver, &ubar0, t_end, None, &times) {
        Ok(s) => s,
        Err(e) => abort!(e),
    };
    study.effective_steps = ubar.steps;
    study.effective_tau = ubar.tau;
    study.cache_hits = solver.cache.hits();
    study.cache_misses = solver.cache.misses();

    let results: Vec<Result<EpsilonRun>> = ks
        .par_iter()
        .zip(eps_list.par_iter())
        .map(|(k, eps)| {
            let n = (opts.points_per_period * k).max(data.slow.n());
            let grid = TorusGrid::new(data.dim, n)?;
            let scheme = DiscreteBellman::oscillatory(data, grid, *k)?;
            let init = GridFunction::from_fn(grid, &u0)?;
            let sol = scheme.solve_parabolic(&init, t_end, None, &times)?;
            let errors = sol
                .snapshots
                .iter()
                .zip(&ubar.snapshots)
                .map(|(ue, ub)| sup_norm_diff(ue, ub, &points))
                .collect::<Result<Vec<_>>>()?;
            let max_error = errors.iter().cloned().fold(0.0, f64::max);
            Ok(EpsilonRun { epsilon: *eps, grid_n: n, steps: sol.steps, tau: sol.tau, errors, max_error })
        })
        .collect();
    for r in results {
        match r {
            Ok(run) => study.runs.push(run),
            Err(e) => abort!(e),
        }
    }
    study.finish(opts.slack);
    Ok(study)
}

/// One randomized ordered trial of [`discrete_comparison_suite`].
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTrial {
    pub trial: usize,
    /// `min (v − u)` over snapshots, oscillatory scheme.
    pub eps_min_gap: f64,
    /// `max (v − u)` over snapshots minus the initial sup gap.
    pub eps_expansion: f64,
    pub eff_min_gap: f64,
    pub eff_expansion: f64,
    /// `min (ψ_{f'} − ψ_f)` for sources `f ≤ f'`.
    pub stationary_min_gap: f64,
    pub pass: bool,
}

/// Order preservation of both parabolic schemes and the stationary solver.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub trials: Vec<ComparisonTrial>,
    pub tolerance: f64,
    pub pass: bool,
}

fn random_smooth(rng: &mut ChaCha8Rng, grid: TorusGrid, amp: f64) -> Result<GridFunction> {
    let modes: Vec<(f64, f64, i32, i32)> = (0..3)
        .map(|_| (rng.random_range(-amp..amp), rng.random_range(0.0..1.0), rng.random_range(1..4), rng.random_range(0..3)))
        .collect();
    GridFunction::from_fn(grid, |x| {
        modes
            .iter()
            .map(|(a, ph, kx, ky)| a * (2.0 * std::f64::consts::PI * (*kx as f64 * x[0] + *ky as f64 * x[1] + ph)).sin())
            .sum()
    })
}

fn random_bump(rng: &mut ChaCha8Rng, grid: TorusGrid, max_height: f64) -> Result<GridFunction> {
    let c: Vec2 = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
    let width = rng.random_range(0.1..0.4);
    let height = rng.random_range(0.0..max_height);
    GridFunction::from_fn(grid, |x| {
        let r = crate::grid::torus_distance(&x, &c, grid.dim()) / width;
        if r < 1.0 {
            height * (1.0 - r * r).powi(2)
        } else {
            0.0
        }
    })
}

/// Randomized ordered pairs through the oscillatory and effective parabolic
/// schemes and the stationary solver, seeded for reproducibility.
pub fn discrete_comparison_suite(data: &ProblemData, trials: usize, seed: u64, t_end: f64) -> Result<ComparisonReport> {
    if trials < 10 {
        return Err(Error::Config(format!("the comparison suite needs at least 10 trials, got {trials}")));
    }
    let tol = 1e-8;
    let grid = data.slow;
    let k = (1..=grid.n()).rev().find(|k| grid.n() % k == 0 && *k <= 4).unwrap_or(1);
    let eps_scheme = DiscreteBellman::oscillatory(data, grid, k)?;
    let solver = EffectiveSolver::new(data, CellOptions::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trials);
    for trial in 0..trials {
        let u = random_smooth(&mut rng, grid, 0.5)?;
        let bump = random_bump(&mut rng, grid, 0.5)?;
        let v = u.axpby(1.0, &bump, 1.0)?;
        let gap0 = bump.sup_norm();
        let gaps = |a: &[GridFunction], b: &[GridFunction]| -> (f64, f64) {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (x, y) in a.iter().zip(b) {
                for (p, q) in x.values().iter().zip(y.values()) {
                    lo = lo.min(q - p);
                    hi = hi.max(q - p);
                }
            }
            (lo, hi - gap0)
        };
        let times = [t_end / 2.0, t_end];
        let su = eps_scheme.solve_parabolic(&u, t_end, None, &times)?;
        let sv = eps_scheme.solve_parabolic(&v, t_end, None, &times)?;
        let (eps_min_gap, eps_expansion) = gaps(&su.snapshots, &sv.snapshots);
        let eu = solve_effective_parabolic(&solver, &u, t_end, None, &times)?;
        let ev = solve_effective_parabolic(&solver, &v, t_end, None, &times)?;
        let (eff_min_gap, eff_expansion) = gaps(&eu.snapshots, &ev.snapshots);

        // stationary: sources f ≤ f' give ψ_f ≤ ψ_{f'}
        let lift = random_bump(&mut rng, grid, 1.0)?;
        let mut lower = eps_scheme.clone();
        let mut upper = eps_scheme.clone();
        for (lo, up) in lower.controls.iter_mut().zip(upper.controls.iter_mut()) {
            for (i, (a, b)) in lo.source.iter_mut().zip(up.source.iter_mut()).enumerate() {
                *b = *a + lift.at(i);
            }
        }
        let opts = StationaryOptions { tol: 1e-10, ..StationaryOptions::default() };
        let pl = lower.solve_stationary(0.5, &opts, None)?;
        let pu = upper.solve_stationary(0.5, &opts, None)?;
        let stationary_min_gap = pl.psi.values().iter().zip(pu.psi.values()).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);

        let pass = eps_min_gap >= -tol
            && eff_min_gap >= -tol
            && eps_expansion <= tol
            && eff_expansion <= tol
            && stationary_min_gap >= -tol;
        out.push(ComparisonTrial { trial, eps_min_gap, eps_expansion, eff_min_gap, eff_expansion, stationary_min_gap, pass });
    }
    let pass = out.iter().all(|t| t.pass);
    Ok(ComparisonReport { trials: out, tolerance: tol, pass })
}

/// Knobs of [`run_property_suite`].
#[derive(Debug, Clone, Serialize)]
pub struct PropertySuiteOptions {
    pub node: usize,
    pub p: Vec2,
    pub comparison_pairs: usize,
    pub convexity_pairs: usize,
    pub s_list: Vec<f64>,
    pub p_list: Vec<Vec2>,
    /// Distances of the Hölder pairs from `node`, snapped to whole slow cells.
    pub holder_distances: Vec<f64>,
    pub growth_instances: usize,
    pub seed: u64,
}

impl Default for PropertySuiteOptions {
    fn default() -> Self {
        Self {
            node: 0,
            p: [0.5, 0.0],
            comparison_pairs: 10,
            convexity_pairs: 5,
            s_list: vec![0.25, 0.5, 0.75],
            p_list: [-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|v| [*v, 0.0]).collect(),
            holder_distances: vec![1.0 / 64.0, 1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0],
            growth_instances: 5,
            seed: 0,
        }
    }
}

/// All property reports of one suite run.
#[derive(Debug, Clone, Serialize)]
pub struct PropertySuite {
    pub reports: Vec<PropertyReport>,
    pub growth_constant: f64,
    pub pass: bool,
}

/// Global comparison, convexity (and single-control linearity), Lipschitz
/// continuity in `p`, Hölder continuity in `x` and the growth estimate, on
/// seeded random data around `u0`.
pub fn run_property_suite(
    data: &ProblemData,
    u0: &GridFunction,
    cell: &CellOptions,
    opts: &PropertySuiteOptions,
) -> Result<PropertySuite> {
    let grid = data.slow;
    grid.ensure_same(u0.grid())?;
    if opts.node >= grid.len() {
        return Err(Error::Config(format!("property node {} out of range", opts.node)));
    }
    let solver = EffectiveSolver::new(data, cell.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let node = opts.node;
    let mut reports = Vec::new();

    let mut pairs = Vec::with_capacity(opts.comparison_pairs);
    for _ in 0..opts.comparison_pairs {
        let mut bump = random_bump(&mut rng, grid, 0.5)?.into_values();
        bump[node] = 0.0;
        let bump = GridFunction::new(grid, bump)?;
        pairs.push((u0.clone(), u0.axpby(1.0, &bump, 1.0)?));
    }
    reports.push(check_global_comparison(&solver, node, opts.p, &pairs)?);

    let mut conv = PropertyReport { property: "convexity_in_u".into(), pass: true, entries: Vec::new() };
    let mut lin_pairs = Vec::with_capacity(opts.convexity_pairs);
    for _ in 0..opts.convexity_pairs {
        let u1 = u0.axpby(1.0, &random_smooth(&mut rng, grid, 0.5)?, 1.0)?;
        let u2 = u0.axpby(1.0, &random_smooth(&mut rng, grid, 0.5)?, 1.0)?;
        let r = check_convexity_in_u(&solver, node, opts.p, &u1, &u2, &opts.s_list)?;
        conv.pass &= r.pass;
        conv.entries.extend(r.entries);
        lin_pairs.push((u1, u2));
    }
    reports.push(conv);

    // one control: H̄ is affine in u, so convexity holds with equality
    let single = data.select_controls(&[0])?;
    let single_solver = EffectiveSolver::new(&single, cell.clone())?;
    let mut lin = PropertyReport { property: "single_control_linearity".into(), pass: true, entries: Vec::new() };
    for (u1, u2) in &lin_pairs {
        let r = check_convexity_in_u(&single_solver, node, opts.p, u1, u2, &opts.s_list)?;
        for e in r.entries {
            let gap = e["gap"].as_f64().unwrap_or(f64::INFINITY);
            let ok = gap.abs() <= 2.0 * cell.tol;
            lin.pass &= ok;
            lin.entries.push(serde_json::json!({"s": e["s"], "gap": gap, "pass": ok}));
        }
    }
    reports.push(lin);

    reports.push(check_lipschitz_in_p(&solver, node, u0, &opts.p_list)?);

    let mut offsets: Vec<i64> = opts.holder_distances.iter().map(|d| (d * grid.n() as f64).round() as i64).collect();
    offsets.retain(|o| *o > 0 && 2 * *o < grid.n() as i64);
    offsets.dedup();
    let holder_pairs: Vec<(usize, usize)> = offsets.iter().map(|o| (node, grid.shift(node, [*o, 0]))).collect();
    let sigma = data.holder.alpha.min(data.holder.beta);
    reports.push(check_holder_in_x(&solver, opts.p, u0, &holder_pairs, sigma)?);

    let instance = |rng: &mut ChaCha8Rng| -> Result<GrowthInstance> {
        let x1 = rng.random_range(0..grid.len());
        let x2 = rng.random_range(0..grid.len());
        let p1 = [rng.random_range(-2.0..2.0), 0.0];
        let p2 = [rng.random_range(-2.0..2.0), 0.0];
        let u1 = u0.axpby(1.0, &random_smooth(rng, grid, 0.3)?, 1.0)?;
        let u2 = u0.axpby(1.0, &random_smooth(rng, grid, 0.3)?, 1.0)?;
        Ok(GrowthInstance { x1, x2, p1, p2, u1, u2 })
    };
    let calibration = (0..opts.growth_instances).map(|_| instance(&mut rng)).collect::<Result<Vec<_>>>()?;
    let validation = (0..opts.growth_instances).map(|_| instance(&mut rng)).collect::<Result<Vec<_>>>()?;
    let (growth_constant, growth) = effective_growth_bound(&solver, &calibration, &validation, sigma_cap(data).min(1.0) * 0.5)?;
    reports.push(growth);

    let pass = reports.iter().all(|r| r.pass);
    Ok(PropertySuite { reports, growth_constant, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_instance_shape() {
        let d = reference_instance(16, 32, 0.5).unwrap();
        assert_eq!(d.m(), 2);
        assert!((d.drift_bound() - 0.5).abs() < 1e-12);
        assert!(d.kernel.is_separable() && d.kernel.is_symmetric());
        let x = [0.25, 0.0];
        assert!((d.controls[0].cost_at(&x, &[0.25, 0.0]) - 1.5).abs() < 1e-12);
        assert!((d.controls[1].cost_at(&x, &[0.0, 0.0]) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn epsilon_validation() {
        assert_eq!(epsilon_frequency(0.25, 64).unwrap(), 4);
        assert!(epsilon_frequency(1.0 / 3.0, 64).is_err());
        assert!(epsilon_frequency(0.3, 64).is_err());
    }

    #[test]
    fn single_epsilon_has_no_verdict() {
        let d = reference_instance(16, 32, 0.5).unwrap();
        let opts = StudyOptions { points_per_period: 8, ..StudyOptions::default() };
        let s = run_convergence_study(&d, reference_initial, 0.05, &[0.25], &opts).unwrap();
        assert_eq!(s.runs.len(), 1);
        assert!(s.monotone.is_none());
        assert!(s.runs[0].errors.iter().all(|e| *e >= 0.0));
    }

    #[test]
    fn increasing_epsilon_list_aborts() {
        let d = reference_instance(16, 32, 0.5).unwrap();
        let err = run_convergence_study(&d, reference_initial, 0.05, &[0.125, 0.25], &StudyOptions::default()).unwrap_err();
        assert!(matches!(err.error, Error::Config(_)));
        assert!(err.partial.runs.is_empty());
    }

    #[test]
    fn property_suite_on_small_reference() {
        let d = reference_instance(16, 32, 2.0).unwrap();
        let u0 = GridFunction::from_fn(d.slow, reference_initial).unwrap();
        let suite = run_property_suite(&d, &u0, &CellOptions::default(), &PropertySuiteOptions::default()).unwrap();
        for r in &suite.reports {
            assert!(r.pass, "{}: {:?}", r.property, r.entries);
        }
    }

    #[test]
    fn comparison_suite_small() {
        let d = reference_instance(16, 32, 0.5).unwrap();
        let r = discrete_comparison_suite(&d, 10, 7, 0.05).unwrap();
        assert!(r.pass, "{:?}", r.trials);
    }
}
