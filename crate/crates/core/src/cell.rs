//! Cell problems `max_a { −𝓘^a(ξ,ψ) − b̃^a·Dψ − f̃^a } = λ` on the fast torus.
//!
//! The source is `f̃^a(ξ) = f^a(x,ξ) + b^a(x,ξ)·p + 𝓛^a(x,ξ,u)`, with the slow
//! operator evaluated on the snapshot `u` at the slow node `x` and compensator
//! gradient `p`. Two branches:
//!
//! * symmetric kernels keep the full kernel `K^a(ξ,·)` and `b̃ = b`;
//! * kernels `k(ξ,z)/|z|^{d+1}` with a non-symmetric jump factor use
//!   `k(ξ,0)/|z|^{d+1}` and `b̃ = b − b_K`. Rescaling the compensated operator by
//!   `z = εy` leaves `−Dψ·∫_{ε≤|z|<1} z k(ξ,z)|z|^{-(d+1)} dz → −b_K·Dψ` behind,
//!   which enters the Hamiltonian with a minus sign next to `−b·Dψ`.
//!
//! `λ` is obtained by vanishing discount: `λ_k = −δ_k ψ^{δ_k}(0)` along a ladder
//! of discounts, then first-order Richardson extrapolation on the last pair.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bellman::{ControlOperator, DiscreteBellman, LevyPart, ProblemData, StationaryOptions};
use crate::error::{Error, Result};
use crate::grid::{torus_distance, GridFunction, TorusGrid, Vec2};
use crate::kernels::{drift_correction, CheckOptions, KernelClass, LevyKernel};
use crate::nonlocal::LevyStencil;

/// Which form of the cell operator is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Symmetric,
    NonSymmetric,
}

/// Discrete second-order data of the snapshot around `x`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LocalC2 {
    pub value: f64,
    pub gradient: Vec2,
    /// `max` over nodes of `B_ρ(x)` of the largest absolute second difference.
    pub hessian_sup: f64,
    pub rho: f64,
    pub u_sup: f64,
}

impl LocalC2 {
    pub fn measure(u: &GridFunction, node: usize, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::Domain(format!("locality radius must lie in (0,1], got {rho}")));
        }
        let grid = u.grid();
        let x = grid.point(node);
        let mut hessian_sup: f64 = 0.0;
        for j in 0..grid.len() {
            if torus_distance(&grid.point(j), &x, grid.dim()) <= rho + 1e-12 {
                let m = u.second_differences(j);
                hessian_sup = hessian_sup.max(m.iter().flatten().fold(0.0, |a, v| a.max(v.abs())));
            }
        }
        Ok(Self { value: u.at(node), gradient: u.centered_gradient(node), hessian_sup, rho, u_sup: u.sup_norm() })
    }
}

/// Precomputed operators shared by every cell problem of one [`ProblemData`].
#[derive(Debug, Clone)]
pub struct CellAssembler {
    data: ProblemData,
    branch: Branch,
    /// Slow-grid stencils: one base stencil per control (separable), else one per `(a, ξ_j)`.
    slow: SlowLevy,
    /// Nonlocal part of the cell operator per control.
    fast_levy: Vec<LevyPart>,
    /// `b_K^a(ξ_j)`, nonsymmetric branch only.
    correction: Option<Vec<Vec<Vec2>>>,
    /// `k^a(ξ_j, 0)`, nonsymmetric branch only.
    jump_at_zero: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
enum SlowLevy {
    Zero,
    Separable { base: Vec<Arc<LevyStencil>>, factor: Vec<Vec<f64>> },
    General { stencils: Vec<Vec<Arc<LevyStencil>>> },
}

impl CellAssembler {
    /// Uses the branch matching the kernel class.
    pub fn new(data: &ProblemData) -> Result<Self> {
        let branch = match data.kernel.class() {
            KernelClass::Ks => Branch::Symmetric,
            KernelClass::Kns => Branch::NonSymmetric,
            KernelClass::Degenerate => {
                return Err(Error::Domain(format!(
                    "the {} kernel is neither symmetric-homogeneous nor of jump-factor form; no cell problem",
                    data.kernel.family().tag()
                )))
            }
        };
        Self::with_branch(data, branch)
    }

    pub fn with_branch(data: &ProblemData, branch: Branch) -> Result<Self> {
        let kernel = &data.kernel;
        let class = kernel.class();
        if class == KernelClass::Degenerate {
            return Err(Error::Domain(format!("no cell problem for the {} kernel", kernel.family().tag())));
        }
        if branch == Branch::Symmetric && class != KernelClass::Ks {
            return Err(Error::Domain("symmetric cell branch requested for a non-symmetric kernel".into()));
        }
        let fast = data.fast;
        let xis: Vec<Vec2> = (0..fast.len()).map(|j| fast.point(j)).collect();
        let m = data.m();
        let slow = if kernel.is_zero() {
            SlowLevy::Zero
        } else if kernel.is_separable() {
            let base = (0..m)
                .map(|a| LevyStencil::build_base(kernel, a, data.slow, &data.scheme).map(Arc::new))
                .collect::<Result<Vec<_>>>()?;
            let factor = (0..m).map(|a| xis.iter().map(|xi| kernel.xi_factor(a, xi)).collect()).collect();
            SlowLevy::Separable { base, factor }
        } else {
            let stencils = (0..m)
                .map(|a| {
                    xis.iter()
                        .map(|xi| LevyStencil::build(kernel, a, xi, data.slow, &data.scheme).map(Arc::new))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            SlowLevy::General { stencils }
        };
        let (fast_levy, correction, jump_at_zero) = match branch {
            Branch::Symmetric => {
                let parts = (0..m).map(|a| cell_levy(kernel, a, fast, &xis, data)).collect::<Result<Vec<_>>>()?;
                (parts, None, None)
            }
            Branch::NonSymmetric => {
                let opts = CheckOptions::default();
                let unit = LevyKernel::fractional(data.dim, 1, 1.0)?;
                let unit_stencil = Arc::new(LevyStencil::build_base(&unit, 0, fast, &data.scheme)?);
                let mut parts = Vec::with_capacity(m);
                let mut corr = Vec::with_capacity(m);
                let mut k0 = Vec::with_capacity(m);
                for a in 0..m {
                    let ka: Vec<f64> = xis.iter().map(|xi| kernel.jump_factor(a, xi, &[0.0, 0.0])).collect::<Result<_>>()?;
                    let ca: Vec<Vec2> =
                        xis.iter().map(|xi| drift_correction(kernel, a, xi, &opts).map(|c| c.value)).collect::<Result<_>>()?;
                    parts.push(LevyPart::Shared { stencil: unit_stencil.clone(), factor: ka.clone() });
                    corr.push(ca);
                    k0.push(ka);
                }
                (parts, Some(corr), Some(k0))
            }
        };
        Ok(Self { data: data.clone(), branch, slow, fast_levy, correction, jump_at_zero })
    }

    pub fn data(&self) -> &ProblemData {
        &self.data
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    /// Per-control slow scalars `ℓ^a` with `𝓛^a(x,ξ,u) = k^a(ξ) ℓ^a` (separable kernels).
    pub fn separable_features(&self, node: usize, p: Vec2, u: &GridFunction) -> Option<Vec<f64>> {
        match &self.slow {
            SlowLevy::Zero => Some(vec![0.0; self.data.m()]),
            SlowLevy::Separable { base, .. } => Some(base.iter().map(|s| s.apply_at(u, node, p)).collect()),
            SlowLevy::General { .. } => None,
        }
    }

    /// `𝓛^a(x, ξ_j, u)` for every control and fast node.
    pub fn slow_levy(&self, node: usize, p: Vec2, u: &GridFunction) -> Vec<Vec<f64>> {
        let nf = self.data.fast.len();
        match &self.slow {
            SlowLevy::Zero => vec![vec![0.0; nf]; self.data.m()],
            SlowLevy::Separable { base, factor } => base
                .iter()
                .zip(factor)
                .map(|(s, f)| {
                    let l = s.apply_at(u, node, p);
                    f.iter().map(|k| k * l).collect()
                })
                .collect(),
            SlowLevy::General { stencils } => {
                stencils.iter().map(|per_xi| per_xi.iter().map(|s| s.apply_at(u, node, p)).collect()).collect()
            }
        }
    }

    /// Nodes whose values enter `𝓛^a(x,·,u)` with nonzero weight, plus `x` itself.
    pub fn stencil_support(&self) -> Option<Vec<usize>> {
        let w: &[f64] = match &self.slow {
            SlowLevy::Zero => return Some(vec![0]),
            SlowLevy::Separable { base, .. } => base[0].weights(),
            SlowLevy::General { stencils } => stencils[0][0].weights(),
        };
        Some(w.iter().enumerate().filter(|(o, v)| *o == 0 || **v != 0.0).map(|(o, _)| o).collect())
    }

    /// Cell problem at slow node `node` with gradient `p` and snapshot `u`.
    pub fn build(&self, node: usize, p: Vec2, u: &GridFunction, rho: f64) -> Result<CellProblem> {
        self.data.slow.ensure_same(u.grid())?;
        if node >= self.data.slow.len() {
            return Err(Error::Domain(format!("slow node {node} out of range")));
        }
        let local = LocalC2::measure(u, node, rho)?;
        let levy = self.slow_levy(node, p, u);
        self.build_with_levy(node, p, local, levy)
    }

    /// Cell problem from precomputed slow operator values.
    pub fn build_with_levy(&self, node: usize, p: Vec2, local: LocalC2, levy: Vec<Vec<f64>>) -> Result<CellProblem> {
        let fast = self.data.fast;
        let x = self.data.slow.point(node);
        let nf = fast.len();
        let mut sources = Vec::with_capacity(self.data.m());
        let mut drifts = Vec::with_capacity(self.data.m());
        for (a, c) in self.data.controls.iter().enumerate() {
            let mut src = Vec::with_capacity(nf);
            let mut drf = Vec::with_capacity(nf);
            for j in 0..nf {
                let xi = fast.point(j);
                let b = c.drift_at(&x, &xi);
                src.push(c.cost_at(&x, &xi) + b[0] * p[0] + b[1] * p[1] + levy[a][j]);
                let bt = match &self.correction {
                    Some(corr) => [b[0] - corr[a][j][0], b[1] - corr[a][j][1]],
                    None => b,
                };
                drf.push(bt);
            }
            if src.iter().any(|v| !v.is_finite()) {
                return Err(Error::Quadrature(format!("non-finite cell source for control {a} at slow node {node}")));
            }
            sources.push(src);
            drifts.push(drf);
        }
        let controls = self
            .fast_levy
            .iter()
            .zip(sources.iter().zip(&drifts))
            .map(|(levy, (s, d))| ControlOperator { levy: levy.clone(), drift: d.clone(), source: s.clone() })
            .collect();
        let op = DiscreteBellman::new(fast, controls)?;
        Ok(CellProblem {
            x,
            node,
            p,
            local,
            branch: self.branch,
            sources,
            drifts,
            levy_values: levy,
            jump_at_zero: self.jump_at_zero.clone(),
            op,
        })
    }
}

fn cell_levy(kernel: &LevyKernel, a: usize, fast: TorusGrid, xis: &[Vec2], data: &ProblemData) -> Result<LevyPart> {
    if kernel.is_zero() {
        return Ok(LevyPart::Zero);
    }
    if kernel.is_separable() {
        let stencil = Arc::new(LevyStencil::build_base(kernel, a, fast, &data.scheme)?);
        let factor = xis.iter().map(|xi| kernel.xi_factor(a, xi)).collect();
        Ok(LevyPart::Shared { stencil, factor })
    } else {
        let stencils =
            xis.iter().map(|xi| LevyStencil::build(kernel, a, xi, fast, &data.scheme).map(Arc::new)).collect::<Result<Vec<_>>>()?;
        Ok(LevyPart::PerNode { stencils, index: (0..xis.len()).collect() })
    }
}

/// An assembled cell problem.
#[derive(Debug, Clone)]
pub struct CellProblem {
    pub x: Vec2,
    pub node: usize,
    pub p: Vec2,
    pub local: LocalC2,
    pub branch: Branch,
    /// `f̃^a(ξ_j)`.
    pub sources: Vec<Vec<f64>>,
    /// `b̃^a(ξ_j)`.
    pub drifts: Vec<Vec<Vec2>>,
    /// `𝓛^a(x, ξ_j, u)`.
    pub levy_values: Vec<Vec<f64>>,
    pub jump_at_zero: Option<Vec<Vec<f64>>>,
    pub op: DiscreteBellman,
}

/// Convenience wrapper: assembles and builds in one call.
pub fn build_cell_problem(data: &ProblemData, node: usize, p: Vec2, u: &GridFunction, rho: f64) -> Result<CellProblem> {
    CellAssembler::new(data)?.build(node, p, u, rho)
}

impl CellProblem {
    /// Cell problem with arbitrary source tables on the fast grid.
    pub fn from_sources(assembler: &CellAssembler, sources: Vec<Vec<f64>>) -> Result<Self> {
        let fast = assembler.data.fast;
        let m = assembler.data.m();
        if sources.len() != m || sources.iter().any(|s| s.len() != fast.len()) {
            return Err(Error::GridMismatch("source tables must be m × (fast nodes)".into()));
        }
        let zero_u = GridFunction::constant(assembler.data.slow, 0.0);
        let local = LocalC2::measure(&zero_u, 0, 1.0)?;
        let mut cp = assembler.build_with_levy(0, [0.0, 0.0], local, vec![vec![0.0; fast.len()]; m])?;
        for (c, s) in cp.op.controls.iter_mut().zip(&sources) {
            c.source = s.clone();
        }
        cp.sources = sources;
        Ok(cp)
    }

    /// Copy with every source shifted by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        for s in out.sources.iter_mut() {
            s.iter_mut().for_each(|v| *v += c);
        }
        for ctl in out.op.controls.iter_mut() {
            ctl.source.iter_mut().for_each(|v| *v += c);
        }
        out
    }

    pub fn source_bound(&self) -> f64 {
        self.op.source_bound()
    }
}

/// Vanishing-discount controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellOptions {
    /// Strictly decreasing discounts; the last two must differ by a factor 2.
    pub ladder: Vec<f64>,
    pub stationary: StationaryOptions,
    /// Fast node where `λ_k = −δ_k ψ^{δ_k}` is read and the corrector anchored.
    pub anchor: usize,
    /// Tolerance of the Cauchy check and of the reported `λ`.
    pub tol: f64,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self { ladder: default_ladder(), stationary: StationaryOptions::default(), anchor: 0, tol: 1e-6 }
    }
}

/// `0.5, 0.25, …, 2^{-8}`.
pub fn default_ladder() -> Vec<f64> {
    (1..=8).map(|k| 0.5f64.powi(k)).collect()
}

/// Outcome of a cell solve.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveEvaluation {
    pub lambda: f64,
    #[serde(skip)]
    pub corrector: GridFunction,
    pub deltas: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// `−δ_k ⟨ψ^{δ_k}⟩`, the fast-grid average diagnostic.
    pub mean_lambdas: Vec<f64>,
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    pub lip_measured: f64,
}

/// Runs the discount ladder and extrapolates `λ`.
pub fn solve_cell(cp: &CellProblem, opts: &CellOptions) -> Result<EffectiveEvaluation> {
    let mut ladder: Vec<f64> = Vec::with_capacity(opts.ladder.len());
    for d in &opts.ladder {
        if ladder.last() != Some(d) {
            ladder.push(*d);
        }
    }
    if ladder.len() < 2 {
        return Err(Error::Config("the discount ladder needs at least two distinct values".into()));
    }
    if ladder.iter().any(|d| !(*d > 0.0)) || ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config(format!("discounts must be positive and strictly decreasing: {ladder:?}")));
    }
    let k = ladder.len();
    if (ladder[k - 2] / ladder[k - 1] - 2.0).abs() > 1e-12 {
        return Err(Error::Config("the last two discounts must differ by a factor of 2".into()));
    }
    let anchor = opts.anchor;
    if anchor >= cp.op.grid.len() {
        return Err(Error::Domain(format!("anchor node {anchor} out of range")));
    }
    let mut warm: Option<GridFunction> = None;
    let mut lambdas = Vec::with_capacity(k);
    let mut mean_lambdas = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    let mut iterations = Vec::with_capacity(k);
    for d in &ladder {
        let r = cp.op.solve_stationary(*d, &opts.stationary, warm.as_ref())?;
        lambdas.push(-d * r.psi.at(anchor));
        mean_lambdas.push(-d * r.psi.mean());
        residuals.push(r.residual);
        iterations.push(r.iterations);
        warm = Some(r.psi);
    }
    if k >= 3 {
        let d1 = (lambdas[k - 3] - lambdas[k - 2]).abs();
        let d2 = (lambdas[k - 2] - lambdas[k - 1]).abs();
        if d2 > d1 + opts.tol {
            return Err(Error::NonCauchy(format!(
                "|λ_k − λ_k+1| grew from {d1:.3e} to {d2:.3e} over the last three discounts"
            )));
        }
    }
    let lambda = 2.0 * lambdas[k - 1] - lambdas[k - 2];
    let last = warm.expect("ladder is nonempty");
    let a = last.at(anchor);
    let corrector = last.map(|v| v - a)?;
    let lip_measured = corrector.lipschitz_seminorm();
    Ok(EffectiveEvaluation { lambda, corrector, deltas: ladder, lambdas, mean_lambdas, residuals, iterations, lip_measured })
}

/// `C_ρ^{x,u} = ‖D²u‖_{B_ρ(x)} ρ + |Du(x)| |ln ρ| + ‖u‖_∞/ρ`; the symmetric
/// branch needs no compensator and drops the middle term.
pub fn c_rho_constant(cp: &CellProblem) -> f64 {
    let l = &cp.local;
    let grad = l.gradient[0].hypot(l.gradient[1]);
    let middle = match cp.branch {
        Branch::Symmetric => 0.0,
        Branch::NonSymmetric => grad * l.rho.ln().abs(),
    };
    l.hessian_sup * l.rho + middle + l.u_sup / l.rho
}

/// Measured corrector Lipschitz constant against the growth factor
/// `(1 + |p| + C_ρ)^{1/(1+σ)}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LipschitzReport {
    pub lip_measured: f64,
    pub growth_factor: f64,
    pub implied_constant: f64,
    pub sigma: f64,
    pub p_norm: f64,
    pub c_rho: f64,
}

pub fn corrector_lipschitz_report(ev: &EffectiveEvaluation, cp: &CellProblem, sigma: f64, exponent_cap: f64) -> Result<LipschitzReport> {
    if !(sigma > 0.0 && sigma < exponent_cap) {
        return Err(Error::Domain(format!("σ={sigma} must lie in (0, {exponent_cap})")));
    }
    let c_rho = c_rho_constant(cp);
    let p_norm = cp.p[0].hypot(cp.p[1]);
    let growth_factor = (1.0 + p_norm + c_rho).powf(1.0 / (1.0 + sigma));
    Ok(LipschitzReport {
        lip_measured: ev.lip_measured,
        growth_factor,
        implied_constant: ev.lip_measured / growth_factor,
        sigma,
        p_norm,
        c_rho,
    })
}

/// Largest admissible `σ`: `min(α, β, γ)`.
pub fn sigma_cap(data: &ProblemData) -> f64 {
    data.holder.alpha.min(data.holder.beta).min(data.kernel.gamma())
}
