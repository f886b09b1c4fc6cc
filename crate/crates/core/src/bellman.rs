//! The Bellman Hamiltonian
//! `H(x, ξ, p, u) = max_a { −𝓛^a(x,ξ,u) − b^a(x,ξ)·p − f^a(x,ξ) }`,
//! its monotone discretization on a torus grid, the discounted stationary
//! solvers and the explicit parabolic solver.
//!
//! A discretized problem is a [`DiscreteBellman`]: one affine operator
//! `A^a u − f^a` per control, with `A^a` an M-matrix generator made of the
//! folded Lévy stencil and upwind drift differences. Upwinding is taken against
//! the effective velocity `v = b − m1`, where `m1` is the first moment of the
//! kernel that multiplies the compensator gradient, so that the compensator and
//! the drift share one monotone gradient per node.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, TorusGrid, Vec2};
use crate::kernels::LevyKernel;
use crate::nonlocal::{apply_levy, LevyStencil, QuadratureScheme};
use crate::trig::TrigSeries;

/// Drift and running cost of one control, as analytic functions of `(x, ξ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    /// One series per axis.
    pub drift: Vec<TrigSeries>,
    pub cost: TrigSeries,
}

impl Control {
    pub fn new(drift: Vec<TrigSeries>, cost: TrigSeries) -> Self {
        Self { drift, cost }
    }

    #[inline]
    pub fn drift_at(&self, x: &Vec2, xi: &Vec2) -> Vec2 {
        let mut b = [0.0; 2];
        for (k, s) in self.drift.iter().enumerate() {
            b[k] = s.eval(x, xi);
        }
        b
    }

    #[inline]
    pub fn cost_at(&self, x: &Vec2, xi: &Vec2) -> f64 {
        self.cost.eval(x, xi)
    }
}

/// Hölder exponents and constants of the data in `(x, ξ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderData {
    pub alpha: f64,
    pub beta: f64,
    pub c_f: f64,
    pub c_b: f64,
}

/// Controls, kernel, grids and quadrature of one problem.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub dim: usize,
    pub controls: Vec<Control>,
    pub kernel: LevyKernel,
    pub holder: HolderData,
    pub slow: TorusGrid,
    pub fast: TorusGrid,
    pub scheme: QuadratureScheme,
}

impl ProblemData {
    pub fn new(controls: Vec<Control>, kernel: LevyKernel, slow: TorusGrid, fast: TorusGrid) -> Result<Self> {
        let dim = kernel.dim();
        if controls.is_empty() {
            return Err(Error::Config("the control list is empty".into()));
        }
        if controls.len() != kernel.controls() {
            return Err(Error::Config(format!(
                "{} controls but the kernel has {} densities",
                controls.len(),
                kernel.controls()
            )));
        }
        for (a, c) in controls.iter().enumerate() {
            if c.drift.len() != dim {
                return Err(Error::Config(format!("drift of control {a} has {} components, need {dim}", c.drift.len())));
            }
        }
        if slow.dim() != dim || fast.dim() != dim {
            return Err(Error::GridMismatch("slow and fast grids must match the kernel dimension".into()));
        }
        // Lipschitz data: exponents 1 with the analytic Lipschitz bounds
        let c_f = controls.iter().map(|c| c.cost.lipschitz_x().max(c.cost.lipschitz_xi())).fold(0.0, f64::max);
        let c_b = controls
            .iter()
            .flat_map(|c| c.drift.iter())
            .map(|s| s.lipschitz_x().max(s.lipschitz_xi()))
            .fold(0.0, f64::max);
        let holder = HolderData { alpha: 1.0, beta: 1.0, c_f, c_b };
        Ok(Self { dim, controls, kernel, holder, slow, fast, scheme: QuadratureScheme::default() })
    }

    pub fn m(&self) -> usize {
        self.controls.len()
    }

    /// `sup_a ‖b^a‖_∞` from the analytic bounds.
    pub fn drift_bound(&self) -> f64 {
        self.controls
            .iter()
            .map(|c| c.drift.iter().map(|s| s.sup_bound().powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// `sup_a ‖f^a‖_∞` from the analytic bounds.
    pub fn cost_bound(&self) -> f64 {
        self.controls.iter().map(|c| c.cost.sup_bound()).fold(0.0, f64::max)
    }

    /// True when no control datum nor the kernel depends on `ξ`.
    pub fn is_xi_independent(&self) -> bool {
        self.kernel.is_xi_independent()
            && self.controls.iter().all(|c| c.cost.is_xi_independent() && c.drift.iter().all(|s| s.is_xi_independent()))
    }

    /// Copy with every cost multiplied by `s`.
    pub fn with_scaled_cost(&self, s: f64) -> Self {
        let mut out = self.clone();
        for c in out.controls.iter_mut() {
            c.cost = c.cost.scaled(s);
        }
        out
    }

    /// Copy with every cost shifted by `c`.
    pub fn with_shifted_cost(&self, c: f64) -> Self {
        let mut out = self.clone();
        for ctl in out.controls.iter_mut() {
            ctl.cost = ctl.cost.shifted(c);
        }
        out
    }

    /// The problem restricted to the listed controls.
    pub fn select_controls(&self, idx: &[usize]) -> Result<Self> {
        let kernel = self.kernel.select_controls(idx)?;
        let controls = idx.iter().map(|a| self.controls[*a].clone()).collect();
        let mut out = Self::new(controls, kernel, self.slow, self.fast)?;
        out.scheme = self.scheme;
        Ok(out)
    }

    pub fn with_grids(&self, slow: TorusGrid, fast: TorusGrid) -> Self {
        Self { slow, fast, ..self.clone() }
    }
}

/// Pointwise Hamiltonian with the quadrature route for `𝓛`.
pub fn hamiltonian(data: &ProblemData, x: &Vec2, xi: &Vec2, p: Vec2, u: &GridFunction, grad_used: Vec2) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for (a, c) in data.controls.iter().enumerate() {
        let l = if data.kernel.is_zero() { 0.0 } else { apply_levy(&data.kernel, a, xi, u, x, grad_used, &data.scheme)? };
        let b = c.drift_at(x, xi);
        let v = -l - b[0] * p[0] - b[1] * p[1] - c.cost_at(x, xi);
        best = best.max(v);
    }
    Ok(best)
}

/// How the nonlocal part of one control acts on a grid.
#[derive(Debug, Clone)]
pub enum LevyPart {
    Zero,
    /// `factor_i · (base stencil)` at node `i`.
    Shared { stencil: Arc<LevyStencil>, factor: Vec<f64> },
    /// `stencils[index[i]]` at node `i`.
    PerNode { stencils: Vec<Arc<LevyStencil>>, index: Vec<usize> },
}

impl LevyPart {
    #[inline]
    fn first_moment(&self, i: usize) -> Vec2 {
        match self {
            LevyPart::Zero => [0.0, 0.0],
            LevyPart::Shared { stencil, factor } => {
                let m = stencil.first_moment();
                [factor[i] * m[0], factor[i] * m[1]]
            }
            LevyPart::PerNode { stencils, index } => stencils[index[i]].first_moment(),
        }
    }

    #[inline]
    fn diagonal(&self, i: usize) -> f64 {
        match self {
            LevyPart::Zero => 0.0,
            LevyPart::Shared { stencil, factor } => factor[i] * stencil.diagonal(),
            LevyPart::PerNode { stencils, index } => stencils[index[i]].diagonal(),
        }
    }

    /// Jump part at every node.
    fn jump_all(&self, u: &[f64]) -> Vec<f64> {
        match self {
            LevyPart::Zero => vec![0.0; u.len()],
            LevyPart::Shared { stencil, factor } => {
                let mut j = stencil.jump_all(u);
                for (v, f) in j.iter_mut().zip(factor) {
                    *v *= f;
                }
                j
            }
            LevyPart::PerNode { stencils, index } => {
                (0..u.len()).map(|i| stencils[index[i]].jump_at(u, i)).collect()
            }
        }
    }

    fn row(&self, i: usize, coef: f64, out: &mut [f64]) {
        match self {
            LevyPart::Zero => {}
            LevyPart::Shared { stencil, factor } => stencil.row(i, coef * factor[i], out),
            LevyPart::PerNode { stencils, index } => stencils[index[i]].row(i, coef, out),
        }
    }

    /// Jump stencils shared by the monotone check.
    pub fn is_monotone(&self) -> bool {
        match self {
            LevyPart::Zero => true,
            LevyPart::Shared { stencil, factor } => stencil.report().monotone && factor.iter().all(|f| *f >= 0.0),
            LevyPart::PerNode { stencils, .. } => stencils.iter().all(|s| s.report().monotone),
        }
    }
}

/// One control of a discretized problem: `H^a_i(u) = −𝓛^a_i u − b_i·g_i − f_i`.
#[derive(Debug, Clone)]
pub struct ControlOperator {
    pub levy: LevyPart,
    pub drift: Vec<Vec2>,
    pub source: Vec<f64>,
}

impl ControlOperator {
    /// Effective velocity `b − m1` that the gradient is upwinded against.
    #[inline]
    pub fn velocity(&self, i: usize) -> Vec2 {
        let m = self.levy.first_moment(i);
        [self.drift[i][0] - m[0], self.drift[i][1] - m[1]]
    }

    /// `A u` at every node (source excluded).
    pub fn apply_all(&self, u: &GridFunction) -> Vec<f64> {
        let jump = self.levy.jump_all(u.values());
        (0..jump.len())
            .map(|i| {
                let v = self.velocity(i);
                let g = u.upwind_gradient_at(i, [-v[0], -v[1]]);
                -jump[i] - v[0] * g[0] - v[1] * g[1]
            })
            .collect()
    }

    /// Coefficient of `u_i` in row `i` of `A`.
    pub fn diagonal(&self, i: usize, grid: &TorusGrid) -> f64 {
        let v = self.velocity(i);
        self.levy.diagonal(i) + (v[0].abs() + v[1].abs()) / grid.h()
    }

    /// Dense row `i` of `A`, added into `out`.
    pub fn row(&self, i: usize, grid: &TorusGrid, out: &mut [f64]) {
        self.levy.row(i, -1.0, out);
        let v = self.velocity(i);
        let h = grid.h();
        for k in 0..grid.dim() {
            let mut e = [0i64; 2];
            if v[k] > 0.0 {
                // −v (u_{i+1} − u_i)/h
                e[k] = 1;
                out[grid.shift(i, e)] -= v[k] / h;
                out[i] += v[k] / h;
            } else if v[k] < 0.0 {
                // −v (u_i − u_{i−1})/h
                e[k] = -1;
                out[grid.shift(i, e)] += v[k] / h;
                out[i] -= v[k] / h;
            }
        }
    }

    fn dense(&self, grid: &TorusGrid) -> DMatrix<f64> {
        let n = grid.len();
        let mut m = DMatrix::zeros(n, n);
        let mut row = vec![0.0; n];
        for i in 0..n {
            row.iter_mut().for_each(|v| *v = 0.0);
            self.row(i, grid, &mut row);
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }
}

/// Assembled monotone problem on one grid.
#[derive(Debug, Clone)]
pub struct DiscreteBellman {
    pub grid: TorusGrid,
    pub controls: Vec<ControlOperator>,
}

/// Solver choice for the discounted stationary problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StationarySolver {
    /// Policy iteration with dense LU solves.
    #[default]
    Howard,
    /// Explicit monotone pseudo-time iteration.
    PseudoTime,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StationaryOptions {
    pub solver: StationarySolver,
    pub tol: f64,
    pub max_iters: usize,
    /// Fraction of the monotone time-step bound used by pseudo-time.
    pub cfl_fraction: f64,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self { solver: StationarySolver::Howard, tol: 1e-7, max_iters: 200_000, cfl_fraction: 0.9 }
    }
}

/// Discounted solution with its convergence record.
#[derive(Debug, Clone, Serialize)]
pub struct StationaryReport {
    #[serde(skip)]
    pub psi: GridFunction,
    pub delta: f64,
    pub iterations: usize,
    pub residual: f64,
    pub solver: StationarySolver,
    /// Final policy, one control index per node.
    #[serde(skip)]
    pub policy: Vec<usize>,
}

/// Time-step bound bookkeeping of an explicit solve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CflReport {
    pub tau: f64,
    pub bound: f64,
    pub ratio: f64,
}

/// Explicit parabolic solution.
#[derive(Debug, Clone, Serialize)]
pub struct ParabolicSolution {
    pub tau: f64,
    pub steps: usize,
    pub times: Vec<f64>,
    #[serde(skip)]
    pub snapshots: Vec<GridFunction>,
    pub cfl: CflReport,
    /// `(t, ‖u(t)‖_∞)` at every snapshot.
    pub sup_trace: Vec<(f64, f64)>,
}

impl DiscreteBellman {
    pub fn new(grid: TorusGrid, controls: Vec<ControlOperator>) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::Config("a discrete problem needs at least one control".into()));
        }
        for c in &controls {
            if c.drift.len() != grid.len() || c.source.len() != grid.len() {
                return Err(Error::GridMismatch(format!(
                    "control tables of length {}/{} on a grid of {} nodes",
                    c.drift.len(),
                    c.source.len(),
                    grid.len()
                )));
            }
        }
        Ok(Self { grid, controls })
    }

    /// The oscillatory problem with `ξ = x/ε`, `ε = 1/k`, sampled exactly at the nodes.
    pub fn oscillatory(data: &ProblemData, grid: TorusGrid, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("oscillation frequency must be positive".into()));
        }
        let n = grid.n();
        let len = grid.len();
        let fast_of = |i: usize| -> (usize, Vec2) {
            let m = grid.multi_index(i);
            let r = [(m[0] * k) % n, (m[1] * k) % n];
            (grid.linear_index(r), [r[0] as f64 / n as f64, if grid.dim() == 2 { r[1] as f64 / n as f64 } else { 0.0 }])
        };
        let mut controls = Vec::with_capacity(data.m());
        for (a, c) in data.controls.iter().enumerate() {
            let mut drift = Vec::with_capacity(len);
            let mut source = Vec::with_capacity(len);
            for i in 0..len {
                let x = grid.point(i);
                let (_, xi) = fast_of(i);
                drift.push(c.drift_at(&x, &xi));
                source.push(c.cost_at(&x, &xi));
            }
            let levy = if data.kernel.is_zero() {
                LevyPart::Zero
            } else if data.kernel.is_separable() {
                let stencil = Arc::new(LevyStencil::build_base(&data.kernel, a, grid, &data.scheme)?);
                let factor = (0..len).map(|i| data.kernel.xi_factor(a, &fast_of(i).1)).collect();
                LevyPart::Shared { stencil, factor }
            } else {
                let mut slot: HashMap<usize, usize> = HashMap::new();
                let mut stencils = Vec::new();
                let mut index = Vec::with_capacity(len);
                for i in 0..len {
                    let (key, xi) = fast_of(i);
                    let s = match slot.get(&key) {
                        Some(s) => *s,
                        None => {
                            stencils.push(Arc::new(LevyStencil::build(&data.kernel, a, &xi, grid, &data.scheme)?));
                            slot.insert(key, stencils.len() - 1);
                            stencils.len() - 1
                        }
                    };
                    index.push(s);
                }
                LevyPart::PerNode { stencils, index }
            };
            controls.push(ControlOperator { levy, drift, source });
        }
        Self::new(grid, controls)
    }

    pub fn m(&self) -> usize {
        self.controls.len()
    }

    /// `max_a ‖f^a‖_∞` over the tables.
    pub fn source_bound(&self) -> f64 {
        self.controls.iter().flat_map(|c| c.source.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max_i max_a` coefficient of `u_i`; the explicit step is monotone for `τ (δ + this) ≤ 1`.
    pub fn max_diagonal(&self) -> f64 {
        let mut best: f64 = 0.0;
        for c in &self.controls {
            for i in 0..self.grid.len() {
                best = best.max(c.diagonal(i, &self.grid));
            }
        }
        best
    }

    /// `H_i(u) = max_a (A^a u − f^a)_i` and the maximizing control per node
    /// (lowest index on ties).
    pub fn hamiltonian_all(&self, u: &GridFunction) -> (Vec<f64>, Vec<usize>) {
        let n = self.grid.len();
        let mut best = vec![f64::NEG_INFINITY; n];
        let mut arg = vec![0; n];
        for (a, c) in self.controls.iter().enumerate() {
            let au = c.apply_all(u);
            for i in 0..n {
                let v = au[i] - c.source[i];
                if v > best[i] {
                    best[i] = v;
                    arg[i] = a;
                }
            }
        }
        (best, arg)
    }

    /// `δψ + H(ψ)` at every node.
    pub fn residual(&self, psi: &GridFunction, delta: f64) -> Vec<f64> {
        let (h, _) = self.hamiltonian_all(psi);
        h.iter().zip(psi.values()).map(|(h, p)| delta * p + h).collect()
    }

    /// Solves `δψ + H(ψ) = 0`, optionally warm-started.
    pub fn solve_stationary(&self, delta: f64, opts: &StationaryOptions, warm: Option<&GridFunction>) -> Result<StationaryReport> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Domain(format!("discount must be positive, got {delta}")));
        }
        let report = match opts.solver {
            StationarySolver::Howard => self.howard(delta, opts, warm)?,
            StationarySolver::PseudoTime => self.pseudo_time(delta, opts, warm)?,
        };
        let m = self.source_bound();
        let sup = report.psi.sup_norm();
        if sup > m / delta * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::BoundViolation(format!("‖ψ‖ = {sup:.6e} exceeds M/δ = {:.6e}", m / delta)));
        }
        Ok(report)
    }

    fn pseudo_time(&self, delta: f64, opts: &StationaryOptions, warm: Option<&GridFunction>) -> Result<StationaryReport> {
        let bound = 1.0 / (delta + self.max_diagonal());
        let tau = opts.cfl_fraction * bound;
        if !(opts.cfl_fraction > 0.0 && opts.cfl_fraction <= 1.0) {
            return Err(Error::Cfl { tau, bound });
        }
        let mut psi = match warm {
            Some(w) => w.clone(),
            None => GridFunction::constant(self.grid, 0.0),
        };
        let mut res = f64::INFINITY;
        for it in 0..opts.max_iters {
            let r = self.residual(&psi, delta);
            res = r.iter().fold(0.0, |m, v| m.max(v.abs()));
            if res < opts.tol {
                let (_, policy) = self.hamiltonian_all(&psi);
                return Ok(StationaryReport { psi, delta, iterations: it, residual: res, solver: StationarySolver::PseudoTime, policy });
            }
            let next: Vec<f64> = psi.values().iter().zip(&r).map(|(p, r)| p - tau * r).collect();
            psi = GridFunction::new(self.grid, next)?;
        }
        Err(Error::NonConvergence { iters: opts.max_iters, residual: res })
    }

    fn howard(&self, delta: f64, opts: &StationaryOptions, warm: Option<&GridFunction>) -> Result<StationaryReport> {
        let n = self.grid.len();
        if n > 4096 {
            return Err(Error::Domain(format!("dense policy iteration limited to 4096 nodes, got {n}")));
        }
        let mats: Vec<DMatrix<f64>> = self.controls.iter().map(|c| c.dense(&self.grid)).collect();
        let eval = |psi: &DVector<f64>| -> Vec<DVector<f64>> {
            mats.iter().zip(&self.controls).map(|(m, c)| m * psi - DVector::from_column_slice(&c.source)).collect()
        };
        let mut policy = match warm {
            Some(w) => {
                let v = DVector::from_column_slice(w.values());
                pick_policy(&eval(&v), None)
            }
            None => vec![0; n],
        };
        let max_iters = opts.max_iters.min(500);
        let mut res = f64::INFINITY;
        for it in 1..=max_iters {
            let mut sys = DMatrix::zeros(n, n);
            let mut rhs = DVector::zeros(n);
            for i in 0..n {
                let a = policy[i];
                for j in 0..n {
                    sys[(i, j)] = mats[a][(i, j)];
                }
                sys[(i, i)] += delta;
                rhs[i] = self.controls[a].source[i];
            }
            let psi = sys
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::NonConvergence { iters: it, residual: f64::INFINITY })?;
            let values = eval(&psi);
            let next = pick_policy(&values, Some(&policy));
            res = (0..n)
                .map(|i| (delta * psi[i] + values.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max)).abs())
                .fold(0.0, f64::max);
            // near-ties can make the policy flip at roundoff level; a tiny residual settles it
            if next == policy || res < 1e-2 * opts.tol {
                if res >= opts.tol {
                    return Err(Error::NonConvergence { iters: it, residual: res });
                }
                let psi = GridFunction::new(self.grid, psi.as_slice().to_vec())?;
                return Ok(StationaryReport { psi, delta, iterations: it, residual: res, solver: StationarySolver::Howard, policy });
            }
            policy = next;
        }
        Err(Error::NonConvergence { iters: max_iters, residual: res })
    }

    /// Explicit Euler `u ← u − τ H(u)` up to `t_end`, with snapshots.
    pub fn solve_parabolic(
        &self,
        u0: &GridFunction,
        t_end: f64,
        tau: Option<f64>,
        snapshot_times: &[f64],
    ) -> Result<ParabolicSolution> {
        self.grid.ensure_same(u0.grid())?;
        if !(t_end > 0.0) {
            return Err(Error::Domain(format!("final time must be positive, got {t_end}")));
        }
        if snapshot_times.iter().any(|t| *t < 0.0 || *t > t_end * (1.0 + 1e-12)) {
            return Err(Error::Domain("snapshot times must lie in [0, T]".into()));
        }
        let diag = self.max_diagonal();
        let bound = if diag > 0.0 { 1.0 / diag } else { f64::INFINITY };
        let tau0 = match tau {
            Some(t) => {
                if !(t > 0.0) || t > bound * (1.0 + 1e-12) {
                    return Err(Error::Cfl { tau: t, bound });
                }
                t
            }
            None => (0.9 * bound).min(t_end / 4.0),
        };
        let steps = aligned_steps(t_end, tau0, snapshot_times);
        let tau = t_end / steps as f64;
        let marks: Vec<usize> = snapshot_times.iter().map(|t| (t / t_end * steps as f64).round() as usize).collect();
        let m = self.source_bound();
        let u0_sup = u0.sup_norm();
        let mut u = u0.clone();
        let mut snapshots = vec![None; snapshot_times.len()];
        for (s, mark) in marks.iter().enumerate() {
            if *mark == 0 {
                snapshots[s] = Some(u.clone());
            }
        }
        for step in 1..=steps {
            let (h, _) = self.hamiltonian_all(&u);
            let next: Vec<f64> = u.values().iter().zip(&h).map(|(v, h)| v - tau * h).collect();
            u = GridFunction::new(self.grid, next).map_err(|_| Error::BoundViolation(format!("non-finite values at step {step}")))?;
            let t = step as f64 * tau;
            let barrier = u0_sup + m * t;
            let sup = u.sup_norm();
            if sup > barrier + 1e-8 * (1.0 + barrier) {
                return Err(Error::BoundViolation(format!("‖u(t={t:.4})‖ = {sup:.6e} exceeds ‖u0‖ + Mt = {barrier:.6e}")));
            }
            for (s, mark) in marks.iter().enumerate() {
                if *mark == step {
                    snapshots[s] = Some(u.clone());
                }
            }
        }
        let snapshots: Vec<GridFunction> = snapshots.into_iter().map(|s| s.expect("every mark is reached")).collect();
        let times: Vec<f64> = marks.iter().map(|k| *k as f64 * tau).collect();
        let sup_trace = times.iter().zip(&snapshots).map(|(t, s)| (*t, s.sup_norm())).collect();
        Ok(ParabolicSolution {
            tau,
            steps,
            times,
            snapshots,
            cfl: CflReport { tau, bound, ratio: if bound.is_finite() { tau / bound } else { 0.0 } },
            sup_trace,
        })
    }
}

fn pick_policy(values: &[DVector<f64>], old: Option<&[usize]>) -> Vec<usize> {
    let n = values[0].len();
    (0..n)
        .map(|i| {
            let mut arg = 0;
            let mut best = values[0][i];
            for (a, v) in values.iter().enumerate().skip(1) {
                if v[i] > best {
                    best = v[i];
                    arg = a;
                }
            }
            if let Some(old) = old {
                let keep = values[old[i]][i];
                // ties keep the previous control
                if keep >= best - 1e-12 * (1.0 + best.abs()) {
                    return old[i];
                }
            }
            arg
        })
        .collect()
}

/// Smallest step count at least `T/τ` that lands on every snapshot time.
pub(crate) fn aligned_steps(t_end: f64, tau: f64, snapshot_times: &[f64]) -> usize {
    let base = ((t_end / tau) - 1e-9).ceil().max(1.0) as usize;
    for steps in base..base + 4096 {
        let ok = snapshot_times.iter().all(|t| {
            let k = t / t_end * steps as f64;
            (k - k.round()).abs() < 1e-9
        });
        if ok {
            return steps;
        }
    }
    base
}

/// Measured Lipschitz seminorm of the discounted stationary solution with the
/// cost scaled by each `s`.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzProbe {
    pub scales: Vec<f64>,
    pub lipschitz: Vec<f64>,
    pub delta: f64,
    pub n: usize,
}

impl LipschitzProbe {
    /// `Lip(u_s) / Lip(u_1)`, `None` when the baseline seminorm vanishes.
    pub fn ratios(&self) -> Option<Vec<f64>> {
        let base = self
            .scales
            .iter()
            .position(|s| *s == 1.0)
            .map(|k| self.lipschitz[k])?;
        if base == 0.0 {
            return None;
        }
        Some(self.lipschitz.iter().map(|l| l / base).collect())
    }
}

/// Solves `δu + H(x, x, Du, u) = 0` on the slow grid for costs `s·f`.
pub fn lipschitz_scaling_probe(data: &ProblemData, scales: &[f64], delta: f64, opts: &StationaryOptions) -> Result<LipschitzProbe> {
    if scales.iter().any(|s| *s < 1.0) {
        return Err(Error::Domain("scaling factors must be at least 1".into()));
    }
    let mut lipschitz = Vec::with_capacity(scales.len());
    for s in scales {
        let op = DiscreteBellman::oscillatory(&data.with_scaled_cost(*s), data.slow, 1)?;
        let r = op.solve_stationary(delta, opts, None)?;
        lipschitz.push(r.psi.lipschitz_seminorm());
    }
    Ok(LipschitzProbe { scales: scales.to_vec(), lipschitz, delta, n: data.slow.n() })
}
