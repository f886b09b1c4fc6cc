//! The compensated Lévy operator
//! `𝓛f(x) = ∫ (f(x+z) − f(x) − 1_B(z) Df(x)·z) K(z) dz`
//! on periodic grid functions, the spectral half Laplacian, and the Pucci
//! extremal operators.
//!
//! The integral is split into three parts:
//!
//! * the singular cell `|z| < ρ_sing`, replaced by `½ M₂ : D²f` with `M₂` the
//!   second-moment matrix of the kernel on the cell and `D²f` centered second
//!   differences;
//! * shells `ρ_sing ≤ |z| ≤ R_max`, sampled by multilinear interpolation of `f`
//!   with the compensator applied on the unit ball;
//! * the tail `|z| > R_max`, where the periodic extension of `f` averages out:
//!   `∫_{|z|>R} f(x+z) K dz ≈ mean(f) · tail mass`.
//!
//! Because interpolation weights are nonnegative, the sampled part folds into a
//! periodic stencil [`LevyStencil`] with nonnegative weights, which is what the
//! monotone schemes use. [`apply_levy`] evaluates the same quadrature at an
//! arbitrary point through [`GridFunction::sample_at`].

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{wrap_unit, GridFunction, TorusGrid, Vec2};
use crate::kernels::{norm, LevyKernel};
use crate::quadrature::{gauss_legendre, integrate_ball, ShellRule};

/// Constant `c_d` with `∫(f(x+z)−f(x)−1_B Df·z)|z|^{-(d+1)} dz = −c_d (−Δ)^{1/2} f`.
pub fn half_laplacian_constant(dim: usize) -> f64 {
    if dim == 1 {
        PI
    } else {
        2.0 * PI
    }
}

/// The kernel `|z|^{-(d+1)} / c_d`, whose operator is exactly `−(−Δ)^{1/2}`.
pub fn calibrated_kernel(dim: usize, controls: usize) -> Result<LevyKernel> {
    LevyKernel::fractional(dim, controls, 1.0 / half_laplacian_constant(dim))
}

/// Parameters of the radial quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct QuadratureScheme {
    /// Singular-cell radius in units of the grid spacing; must give `h/2 ≤ ρ ≤ 1`.
    pub rho_sing_cells: f64,
    /// Truncation radius of the sampled shells.
    pub r_max: f64,
    /// Gauss-Legendre nodes per grid cell inside the unit ball (one dimension).
    pub inner_nodes: usize,
    /// Gauss-Legendre nodes per grid cell outside the unit ball (one dimension).
    pub outer_nodes: usize,
}

impl Default for QuadratureScheme {
    fn default() -> Self {
        Self { rho_sing_cells: 1.0, r_max: 8.0, inner_nodes: 8, outer_nodes: 4 }
    }
}

impl QuadratureScheme {
    pub fn rho_sing(&self, h: f64) -> Result<f64> {
        let rho = self.rho_sing_cells * h;
        if !(rho >= 0.5 * h && rho <= 1.0) {
            return Err(Error::Domain(format!("singular radius {rho:.3e} outside [h/2, 1] for h={h:.3e}")));
        }
        if !(self.r_max >= 1.0) {
            return Err(Error::Domain(format!("R_max must be at least 1, got {}", self.r_max)));
        }
        Ok(rho)
    }
}

/// Weighted quadrature points for one density, plus singular and tail data.
#[derive(Debug, Clone)]
struct LevyPoints {
    /// `(z, weight · K(z))` over `ρ_sing ≤ |z| ≤ R_max`.
    points: Vec<(Vec2, f64)>,
    /// `∫_{|z|<ρ_sing} z_i z_j K dz`.
    m2: [[f64; 2]; 2],
    /// `∫_{ρ_sing ≤ |z| < 1} z K dz`.
    m1: Vec2,
    /// `∫_{|z|>R_max} K dz`.
    tail: f64,
    /// Sampled shell mass.
    shell_mass: f64,
}

fn levy_points(dim: usize, h: f64, scheme: &QuadratureScheme, density: &dyn Fn(&Vec2) -> f64, tail: f64) -> Result<LevyPoints> {
    let rho = scheme.rho_sing(h)?;
    let r_max = scheme.r_max;
    let mut points = Vec::new();
    let push = |z: Vec2, w: f64, points: &mut Vec<(Vec2, f64)>| {
        let k = density(&z);
        if k != 0.0 {
            points.push((z, w * k));
        }
    };
    if dim == 1 {
        // cells aligned with the grid so the piecewise-linear interpolant is integrated exactly
        let (gi, wi) = gauss_legendre(scheme.inner_nodes);
        let (go, wo) = gauss_legendre(scheme.outer_nodes);
        let mut r0 = rho;
        while r0 < r_max - 1e-12 {
            let next_grid = ((r0 / h) + 1e-9).floor() * h + h;
            let r1 = next_grid.min(r_max);
            let (g, w) = if r1 <= 1.0 + 1e-12 { (&gi, &wi) } else { (&go, &wo) };
            let half = 0.5 * (r1 - r0);
            let mid = 0.5 * (r1 + r0);
            for (t, wt) in g.iter().zip(w) {
                let r = mid + half * t;
                push([r, 0.0], wt * half, &mut points);
                push([-r, 0.0], wt * half, &mut points);
            }
            r0 = r1;
        }
    } else {
        let (g, w) = gauss_legendre(2);
        let mut r0 = rho;
        while r0 < r_max - 1e-12 {
            let spacing = 0.5 * h * r0.max(1.0);
            let mut r1 = (r0 + spacing).min(r_max);
            if r0 < 1.0 && r1 > 1.0 {
                r1 = 1.0;
            }
            let half = 0.5 * (r1 - r0);
            let mid = 0.5 * (r1 + r0);
            let angles = ((2.0 * PI * mid / spacing).ceil() as usize).max(16);
            let dth = 2.0 * PI / angles as f64;
            for (t, wt) in g.iter().zip(&w) {
                let r = mid + half * t;
                for j in 0..angles {
                    let th = (j as f64 + 0.5) * dth;
                    push([r * th.cos(), r * th.sin()], wt * half * r * dth, &mut points);
                }
            }
            r0 = r1;
        }
    }
    let mut m1 = [0.0; 2];
    let mut shell_mass = 0.0;
    for (z, w) in &points {
        shell_mass += w;
        if norm(z, dim) < 1.0 {
            m1[0] += w * z[0];
            m1[1] += w * z[1];
        }
    }
    let rule = ShellRule::new(dim, 16, 128);
    let mut m2 = [[0.0; 2]; 2];
    for i in 0..dim {
        for j in i..dim {
            let v = integrate_ball(&rule, rho, rho * 1e-3, &|z: Vec2| z[i] * z[j] * density(&z))?.value();
            m2[i][j] = v;
            m2[j][i] = v;
        }
    }
    if !(shell_mass.is_finite() && tail.is_finite() && m2.iter().flatten().all(|v| v.is_finite())) {
        return Err(Error::Quadrature(format!(
            "non-finite kernel moments: shell mass {shell_mass}, tail {tail}, second moments {m2:?}"
        )));
    }
    Ok(LevyPoints { points, m2, m1, tail, shell_mass })
}

/// Diagnostic breakdown of one stencil, serializable for run reports.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ShellReport {
    pub rho_sing: f64,
    pub r_max: f64,
    pub shell_mass: f64,
    pub tail_mass: f64,
    pub second_moment: [[f64; 2]; 2],
    pub first_moment: Vec2,
    pub monotone: bool,
}

/// Periodic stencil of the compensated operator on one grid:
/// `𝓛f(x_i) = Σ_o w_o f(x_i + o h) − mass·f(x_i) − m1·g_i`, with `g_i` the
/// caller's gradient at `x_i`.
#[derive(Debug, Clone)]
pub struct LevyStencil {
    grid: TorusGrid,
    /// Dense weights indexed by the linear index of the offset.
    weights: Vec<f64>,
    mass: f64,
    m1: Vec2,
    report: ShellReport,
    /// Conjugated DFT of the weights, for whole-grid application.
    spectrum: Vec<Complex<f64>>,
}

impl LevyStencil {
    /// Stencil of `K^a(ξ, ·)` on `grid`.
    pub fn build(kernel: &LevyKernel, a: usize, xi: &Vec2, grid: TorusGrid, scheme: &QuadratureScheme) -> Result<Self> {
        let rule = ShellRule::new(grid.dim(), 1, 256);
        let tail = kernel.tail_mass(a, xi, scheme.r_max, &rule);
        Self::from_density(grid, scheme, &|z| kernel.density(a, xi, z), tail)
    }

    /// Stencil of the `ξ`-free part of a separable kernel.
    pub fn build_base(kernel: &LevyKernel, a: usize, grid: TorusGrid, scheme: &QuadratureScheme) -> Result<Self> {
        let rule = ShellRule::new(grid.dim(), 1, 256);
        let tail = kernel.tail_integral(scheme.r_max, &rule, |z| kernel.base_density(a, &z));
        Self::from_density(grid, scheme, &|z| kernel.base_density(a, z), tail)
    }

    fn from_density(grid: TorusGrid, scheme: &QuadratureScheme, density: &dyn Fn(&Vec2) -> f64, tail: f64) -> Result<Self> {
        let dim = grid.dim();
        let h = grid.h();
        let n = grid.n();
        let pts = levy_points(dim, h, scheme, density, tail)?;
        let mut weights = vec![0.0; grid.len()];
        let off = |a: i64, b: i64| grid.shift(0, [a, b]);
        for (z, w) in &pts.points {
            let s0 = z[0] / h;
            let f0 = s0.floor();
            let t = s0 - f0;
            let a0 = f0 as i64;
            if dim == 1 {
                weights[off(a0, 0)] += w * (1.0 - t);
                weights[off(a0 + 1, 0)] += w * t;
            } else {
                let s1 = z[1] / h;
                let f1 = s1.floor();
                let u = s1 - f1;
                let b0 = f1 as i64;
                weights[off(a0, b0)] += w * (1.0 - t) * (1.0 - u);
                weights[off(a0 + 1, b0)] += w * t * (1.0 - u);
                weights[off(a0, b0 + 1)] += w * (1.0 - t) * u;
                weights[off(a0 + 1, b0 + 1)] += w * t * u;
            }
        }
        // the tail sees the periodic mean
        let share = pts.tail / grid.len() as f64;
        for w in weights.iter_mut() {
            *w += share;
        }
        // singular cell: ½ M₂ : D²f with zero row sum
        let h2 = h * h;
        let m2 = pts.m2;
        for k in 0..dim {
            let mut e = [0i64; 2];
            e[k] = 1;
            let c = 0.5 * m2[k][k] / h2;
            weights[off(e[0], e[1])] += c;
            weights[off(-e[0], -e[1])] += c;
            weights[0] -= 2.0 * c;
        }
        if dim == 2 && m2[0][1] != 0.0 {
            let c = m2[0][1].abs() / (2.0 * h2);
            let s = if m2[0][1] > 0.0 { 1 } else { -1 };
            weights[off(1, s)] += c;
            weights[off(-1, -s)] += c;
            weights[off(1, 0)] -= c;
            weights[off(-1, 0)] -= c;
            weights[off(0, 1)] -= c;
            weights[off(0, -1)] -= c;
            weights[0] += 2.0 * c;
        }
        let mass: f64 = weights.iter().sum();
        let monotone = weights.iter().skip(1).all(|w| *w >= 0.0);
        let report = ShellReport {
            rho_sing: scheme.rho_sing(h)?,
            r_max: scheme.r_max,
            shell_mass: pts.shell_mass,
            tail_mass: pts.tail,
            second_moment: m2,
            first_moment: pts.m1,
            monotone,
        };
        let mut spectrum: Vec<Complex<f64>> = weights.iter().map(|w| Complex::new(*w, 0.0)).collect();
        fft_nd(&mut spectrum, n, dim, false);
        for c in spectrum.iter_mut() {
            *c = c.conj();
        }
        Ok(Self { grid, weights, mass, m1: pts.m1, report, spectrum })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// Weight on the node at linear offset index `o` (offset 0 included).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sum of all weights: the coefficient of `−f(x)`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Net coefficient of `f(x_i)` with the sign flipped: `mass − w_0 ≥ 0`.
    pub fn diagonal(&self) -> f64 {
        self.mass - self.weights[0]
    }

    /// First moment `∫_{ρ ≤ |z| < 1} z K dz` multiplying the compensator gradient.
    pub fn first_moment(&self) -> Vec2 {
        self.m1
    }

    pub fn report(&self) -> &ShellReport {
        &self.report
    }

    /// Jump part `Σ_o w_o f(x_i + o) − mass f(x_i)` at one node (no compensator).
    pub fn jump_at(&self, f: &[f64], i: usize) -> f64 {
        let mut s = 0.0;
        if self.grid.dim() == 1 {
            let n = self.grid.n();
            for (o, w) in self.weights.iter().enumerate() {
                s += w * f[(i + o) % n];
            }
        } else {
            let n = self.grid.n();
            let [i0, i1] = self.grid.multi_index(i);
            for (o, w) in self.weights.iter().enumerate() {
                let (o0, o1) = (o / n, o % n);
                s += w * f[((i0 + o0) % n) * n + (i1 + o1) % n];
            }
        }
        s - self.mass * f[i]
    }

    /// Full operator at node `i` with compensator gradient `grad`.
    pub fn apply_at(&self, f: &GridFunction, i: usize, grad: Vec2) -> f64 {
        self.jump_at(f.values(), i) - self.m1[0] * grad[0] - self.m1[1] * grad[1]
    }

    /// Jump part on every node at once, by FFT correlation.
    pub fn jump_all(&self, f: &[f64]) -> Vec<f64> {
        let n = self.grid.n();
        let dim = self.grid.dim();
        let mut buf: Vec<Complex<f64>> = f.iter().map(|v| Complex::new(*v, 0.0)).collect();
        fft_nd(&mut buf, n, dim, false);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        fft_nd(&mut buf, n, dim, true);
        let scale = 1.0 / f.len() as f64;
        buf.iter().zip(f).map(|(c, v)| c.re * scale - self.mass * v).collect()
    }

    /// Columns and coefficients of row `i` of the jump part, diagonal merged.
    pub fn row(&self, i: usize, coef: f64, out: &mut [f64]) {
        let n = self.grid.n();
        if self.grid.dim() == 1 {
            for (o, w) in self.weights.iter().enumerate() {
                out[(i + o) % n] += coef * w;
            }
        } else {
            let [i0, i1] = self.grid.multi_index(i);
            for (o, w) in self.weights.iter().enumerate() {
                let (o0, o1) = (o / n, o % n);
                out[((i0 + o0) % n) * n + (i1 + o1) % n] += coef * w;
            }
        }
        out[i] -= coef * self.mass;
    }
}

/// In-place DFT over a row-major `n^dim` array.
pub(crate) fn fft_nd(buf: &mut [Complex<f64>], n: usize, dim: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    if dim == 1 {
        fft.process(buf);
    } else {
        // rows are contiguous
        fft.process(buf);
        let mut col = vec![Complex::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = buf[i * n + j];
            }
            fft.process(&mut col);
            for i in 0..n {
                buf[i * n + j] = col[i];
            }
        }
    }
}

/// Signed integer frequency of DFT bin `k`.
#[inline]
fn frequency(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Applies a radial Fourier multiplier `m(2π|k|)` to `f`.
pub fn spectral_multiplier(f: &GridFunction, m: impl Fn(f64) -> f64) -> GridFunction {
    let grid = *f.grid();
    let n = grid.n();
    let dim = grid.dim();
    let mut buf: Vec<Complex<f64>> = f.values().iter().map(|v| Complex::new(*v, 0.0)).collect();
    fft_nd(&mut buf, n, dim, false);
    for (idx, c) in buf.iter_mut().enumerate() {
        let [a, b] = grid.multi_index(idx);
        let k0 = frequency(a, n);
        let k1 = if dim == 2 { frequency(b, n) } else { 0.0 };
        *c *= m(2.0 * PI * k0.hypot(k1));
    }
    fft_nd(&mut buf, n, dim, true);
    let scale = 1.0 / grid.len() as f64;
    let values = buf.iter().map(|c| c.re * scale).collect();
    GridFunction::new(grid, values).expect("finite spectral output")
}

/// `(−Δ)^{1/2} f` as the Fourier multiplier `|2πk|`.
pub fn fractional_laplacian_half(f: &GridFunction) -> GridFunction {
    spectral_multiplier(f, |w| w)
}

/// Quadrature evaluation of `𝓛^a(ξ) f` at an arbitrary torus point `x`.
pub fn apply_levy(
    kernel: &LevyKernel,
    a: usize,
    xi: &Vec2,
    f: &GridFunction,
    x: &Vec2,
    grad_x: Vec2,
    scheme: &QuadratureScheme,
) -> Result<f64> {
    let rule = ShellRule::new(f.grid().dim(), 1, 256);
    let tail = kernel.tail_mass(a, xi, scheme.r_max, &rule);
    apply_density(f, x, grad_x, scheme, &|z| kernel.density(a, xi, z), tail)
}

fn apply_density(
    f: &GridFunction,
    x: &Vec2,
    grad_x: Vec2,
    scheme: &QuadratureScheme,
    density: &dyn Fn(&Vec2) -> f64,
    tail: f64,
) -> Result<f64> {
    let grid = *f.grid();
    let dim = grid.dim();
    let h = grid.h();
    let pts = levy_points(dim, h, scheme, density, tail)?;
    let fx = f.sample_at(x);
    let at = |dz: [f64; 2]| f.sample_at(&[wrap_unit(x[0] + dz[0]), wrap_unit(x[1] + dz[1])]);
    let mut shells = 0.0;
    for (z, w) in &pts.points {
        shells += w * (at(*z) - fx);
    }
    let compensator = pts.m1[0] * grad_x[0] + pts.m1[1] * grad_x[1];
    let mut singular = 0.0;
    for k in 0..dim {
        let mut e = [0.0; 2];
        e[k] = h;
        let d2 = (at(e) - 2.0 * fx + at([-e[0], -e[1]])) / (h * h);
        singular += 0.5 * pts.m2[k][k] * d2;
    }
    if dim == 2 && pts.m2[0][1] != 0.0 {
        let s = pts.m2[0][1].signum();
        let d = (2.0 * fx + at([h, s * h]) + at([-h, -s * h]) - at([h, 0.0]) - at([-h, 0.0]) - at([0.0, h]) - at([0.0, -h]))
            / (2.0 * h * h);
        singular += pts.m2[0][1].abs() * d;
    }
    let tail_part = pts.tail * (f.mean() - fx);
    let v = shells - compensator + singular + tail_part;
    if !v.is_finite() {
        return Err(Error::Quadrature(format!(
            "non-finite operator value: shells {shells:.3e}, compensator {compensator:.3e}, singular {singular:.3e}, tail {tail_part:.3e} (shell mass {:.3e})",
            pts.shell_mass
        )));
    }
    Ok(v)
}

/// `sup_a sup_ξ 𝓛^a(ξ) f(x)` over the given `ξ` samples.
pub fn pucci_plus(
    kernel: &LevyKernel,
    xis: &[Vec2],
    f: &GridFunction,
    x: &Vec2,
    grad_x: Vec2,
    scheme: &QuadratureScheme,
) -> Result<f64> {
    pucci(kernel, xis, f, x, grad_x, scheme, true)
}

/// `sup_a inf_ξ 𝓛^a(ξ) f(x)` over the given `ξ` samples.
pub fn pucci_minus(
    kernel: &LevyKernel,
    xis: &[Vec2],
    f: &GridFunction,
    x: &Vec2,
    grad_x: Vec2,
    scheme: &QuadratureScheme,
) -> Result<f64> {
    pucci(kernel, xis, f, x, grad_x, scheme, false)
}

fn pucci(
    kernel: &LevyKernel,
    xis: &[Vec2],
    f: &GridFunction,
    x: &Vec2,
    grad_x: Vec2,
    scheme: &QuadratureScheme,
    upper: bool,
) -> Result<f64> {
    if xis.is_empty() {
        return Err(Error::Domain("Pucci operators need at least one ξ sample".into()));
    }
    let mut best = f64::NEG_INFINITY;
    for a in 0..kernel.controls() {
        let values: Vec<f64> = if kernel.is_separable() {
            // one quadrature, scaled by the factor
            let unit = apply_levy_base(kernel, a, f, x, grad_x, scheme)?;
            xis.iter().map(|xi| kernel.xi_factor(a, xi) * unit).collect()
        } else {
            xis.iter().map(|xi| apply_levy(kernel, a, xi, f, x, grad_x, scheme)).collect::<Result<_>>()?
        };
        let v = if upper {
            values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        } else {
            values.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        best = best.max(v);
    }
    Ok(best)
}

/// Operator of the `ξ`-free part of a separable kernel at `x`.
fn apply_levy_base(
    kernel: &LevyKernel,
    a: usize,
    f: &GridFunction,
    x: &Vec2,
    grad_x: Vec2,
    scheme: &QuadratureScheme,
) -> Result<f64> {
    let rule = ShellRule::new(f.grid().dim(), 1, 256);
    let tail = kernel.tail_integral(scheme.r_max, &rule, |z| kernel.base_density(a, &z));
    apply_density(f, x, grad_x, scheme, &|z| kernel.base_density(a, z), tail)
}

/// Shared handle to a stencil.
pub type SharedStencil = Arc<LevyStencil>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trig::TrigSeries;

    fn cosine(n: usize, k: f64) -> GridFunction {
        let g = TorusGrid::new(1, n).unwrap();
        GridFunction::from_fn(g, |x| (2.0 * PI * k * x[0]).cos()).unwrap()
    }

    #[test]
    fn constants_are_annihilated() {
        let g = TorusGrid::new(1, 64).unwrap();
        let f = GridFunction::constant(g, 3.5);
        let k = calibrated_kernel(1, 1).unwrap();
        let v = apply_levy(&k, 0, &[0.0, 0.0], &f, &[0.3, 0.0], [0.0, 0.0], &QuadratureScheme::default()).unwrap();
        assert!(v.abs() < 1e-10, "{v}");
    }

    #[test]
    fn calibrated_kernel_matches_multiplier() {
        let k = calibrated_kernel(1, 1).unwrap();
        let scheme = QuadratureScheme::default();
        for mode in [1.0, 2.0, 4.0] {
            let f = cosine(256, mode);
            let spec = fractional_laplacian_half(&f);
            let s = LevyStencil::build(&k, 0, &[0.0, 0.0], *f.grid(), &scheme).unwrap();
            let mut err: f64 = 0.0;
            for i in 0..256 {
                let g = f.centered_gradient(i);
                err = err.max((s.apply_at(&f, i, g) + spec.at(i)).abs());
            }
            assert!(err / (2.0 * PI * mode) < 0.02, "mode {mode}: {err}");
        }
    }

    #[test]
    fn raw_kernel_constant_in_1d() {
        // |z|^{-2} gives -π·2π·cos at x = 0
        let k = LevyKernel::fractional(1, 1, 1.0).unwrap();
        let f = cosine(256, 1.0);
        let v = apply_levy(&k, 0, &[0.0, 0.0], &f, &[0.0, 0.0], [0.0, 0.0], &QuadratureScheme::default()).unwrap();
        let want = -half_laplacian_constant(1) * 2.0 * PI;
        assert!((v / want - 1.0).abs() < 0.02, "{v} vs {want}");
    }

    #[test]
    fn calibrated_kernel_2d() {
        let k = calibrated_kernel(2, 1).unwrap();
        let g = TorusGrid::new(2, 32).unwrap();
        let f = GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).cos()).unwrap();
        let s = LevyStencil::build(&k, 0, &[0.0, 0.0], g, &QuadratureScheme::default()).unwrap();
        let want = 2.0 * PI * 2f64.sqrt();
        let v = s.apply_at(&f, 0, [0.0, 0.0]);
        assert!((v / -want - 1.0).abs() < 0.03, "{v} vs {}", -want);
        assert!(s.report().monotone);
    }

    #[test]
    fn spectral_examples() {
        let f = cosine(64, 1.0);
        let r = fractional_laplacian_half(&f);
        for i in 0..64 {
            assert!((r.at(i) - 2.0 * PI * f.at(i)).abs() < 1e-12);
        }
        let g = TorusGrid::new(1, 64).unwrap();
        let s = GridFunction::from_fn(g, |x| (4.0 * PI * x[0]).sin()).unwrap();
        let r = fractional_laplacian_half(&s);
        for i in 0..64 {
            assert!((r.at(i) - 4.0 * PI * s.at(i)).abs() < 1e-11);
        }
        let c = fractional_laplacian_half(&GridFunction::constant(g, 2.0));
        assert!(c.sup_norm() < 1e-12);
    }

    #[test]
    fn stencil_and_general_routes_agree() {
        let kernel = LevyKernel::separable(1, vec![TrigSeries::constant(2.0).with_sin(1.0, &[], &[1])], 1.0).unwrap();
        let g = TorusGrid::new(1, 64).unwrap();
        let f = GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).sin() + 0.3 * (6.0 * PI * x[0]).cos()).unwrap();
        let xi = [0.37, 0.0];
        let scheme = QuadratureScheme::default();
        let s = LevyStencil::build(&kernel, 0, &xi, g, &scheme).unwrap();
        for i in [0, 5, 31, 63] {
            let grad = f.centered_gradient(i);
            let a = s.apply_at(&f, i, grad);
            let b = apply_levy(&kernel, 0, &xi, &f, &g.point(i), grad, &scheme).unwrap();
            assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
        }
        let all = s.jump_all(f.values());
        for i in 0..64 {
            assert!((all[i] - s.jump_at(f.values(), i)).abs() < 1e-9);
        }
    }

    #[test]
    fn pucci_separable_example() {
        let kernel = LevyKernel::separable(1, vec![TrigSeries::constant(2.0).with_sin(1.0, &[], &[1])], 1.0).unwrap();
        let f = cosine(128, 1.0);
        let xis: Vec<Vec2> = (0..128).map(|j| [j as f64 / 128.0, 0.0]).collect();
        let scheme = QuadratureScheme::default();
        let x = [0.0, 0.0];
        let plus = pucci_plus(&kernel, &xis, &f, &x, [0.0, 0.0], &scheme).unwrap();
        let minus = pucci_minus(&kernel, &xis, &f, &x, [0.0, 0.0], &scheme).unwrap();
        let unit = LevyKernel::fractional(1, 1, 1.0).unwrap();
        let l0 = apply_levy(&unit, 0, &x, &f, &x, [0.0, 0.0], &scheme).unwrap();
        assert!(l0 < 0.0);
        assert!((plus - l0).abs() < 1e-8 * l0.abs());
        assert!((minus - 3.0 * l0).abs() < 1e-8 * l0.abs());
        // direct enumeration
        let direct: Vec<f64> =
            xis.iter().map(|xi| apply_levy(&kernel, 0, xi, &f, &x, [0.0, 0.0], &scheme).unwrap()).collect();
        let dmax = direct.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dmin = direct.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((plus - dmax).abs() < 1e-8 * dmax.abs());
        assert!((minus - dmin).abs() < 1e-8 * dmin.abs());
        assert!(minus <= plus);
    }
}
