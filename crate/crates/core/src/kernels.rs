//! Lévy jump kernels `K^a(ξ, z)` of order one, one per control.
//!
//! Four families are provided: anisotropic matrix kernels, angular kernels,
//! separable kernels `k^a(ξ) g(z) / |z|^{d+1}` with a real jump factor `g`, and
//! kernels supported in a half space. Every family decays like `|z|^{-(d+1)}`
//! outside the unit ball, so tails beyond any radius `R ≥ 1` are computed in
//! closed form.
//!
//! The module also checks the standing kernel assumptions numerically (Lévy
//! bound, cone ellipticity, Hölder continuity in `ξ`, integrability of the jump
//! factor modulus) and computes the drift correction `b_K` produced by a
//! non-symmetric jump factor.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::f64::consts::{E, PI};

use crate::error::{Error, Result};
use crate::grid::{sample_lattice, torus_distance, Vec2};
use crate::quadrature::{integrate_ball, ShellRule};
use crate::trig::TrigSeries;

/// Jump factor `g(z)` of a separable kernel. Equal to 1 at the origin and
/// constant in `|z|` outside the unit ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ZFactor {
    /// `g ≡ 1`.
    Unit,
    /// `g(z) = 1 + c·min(|z|, 1)`.
    Radial { c: f64 },
    /// `g(z) = 1 + c·z_axis` on the unit ball, 1 outside.
    Linear { axis: usize, c: f64 },
    /// `g(z) = 1 + 1/|ln|z||` for `|z| < 1/e`, 2 outside. Its modulus is not Dini.
    LogModulus,
}

impl ZFactor {
    #[inline]
    pub fn value(&self, z: &Vec2, r: f64) -> f64 {
        match *self {
            ZFactor::Unit => 1.0,
            ZFactor::Radial { c } => 1.0 + c * r.min(1.0),
            ZFactor::Linear { axis, c } => {
                if r < 1.0 {
                    1.0 + c * z[axis]
                } else {
                    1.0
                }
            }
            ZFactor::LogModulus => {
                if r == 0.0 {
                    1.0
                } else if r < 1.0 / E {
                    1.0 + 1.0 / r.ln().abs()
                } else {
                    2.0
                }
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            ZFactor::Radial { c } if c < -1.0 => Err(Error::Config(format!("radial factor c={c} makes g negative"))),
            ZFactor::Linear { axis, c } => {
                if axis >= dim {
                    Err(Error::Config(format!("linear factor axis {axis} out of range")))
                } else if c.abs() > 1.0 {
                    Err(Error::Config(format!("linear factor |c|={} > 1 makes g negative", c.abs())))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Symmetric matrix field `M(ξ)`: `[m]` in one dimension, `[m11, m12, m22]` in two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MatrixField(pub Vec<TrigSeries>);

impl MatrixField {
    fn at(&self, xi: &Vec2) -> [[f64; 2]; 2] {
        let o = [0.0, 0.0];
        match self.0.len() {
            1 => [[self.0[0].eval(&o, xi), 0.0], [0.0, 0.0]],
            _ => {
                let a = self.0[0].eval(&o, xi);
                let b = self.0[1].eval(&o, xi);
                let c = self.0[2].eval(&o, xi);
                [[a, b], [b, c]]
            }
        }
    }

    fn eigenvalues(&self, xi: &Vec2, dim: usize) -> (f64, f64) {
        let m = self.at(xi);
        if dim == 1 {
            (m[0][0], m[0][0])
        } else {
            let tr = m[0][0] + m[1][1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
            (0.5 * tr - disc, 0.5 * tr + disc)
        }
    }

    fn is_xi_independent(&self) -> bool {
        self.0.iter().all(|s| s.is_xi_independent())
    }
}

/// The per-family parameter tables.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily {
    MatrixAnisotropic { matrices: Vec<MatrixField>, eig_bound: f64 },
    Angular { factors: Vec<TrigSeries>, amplitude: Vec<f64>, orientation: Vec<f64> },
    Separable { factors: Vec<TrigSeries>, z_factors: Vec<ZFactor> },
    HalfSpace { factors: Vec<TrigSeries>, axis: usize },
}

impl KernelFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            KernelFamily::MatrixAnisotropic { .. } => "matrix_anisotropic",
            KernelFamily::Angular { .. } => "angular",
            KernelFamily::Separable { .. } => "separable",
            KernelFamily::HalfSpace { .. } => "half_space",
        }
    }

    fn controls(&self) -> usize {
        match self {
            KernelFamily::MatrixAnisotropic { matrices, .. } => matrices.len(),
            KernelFamily::Angular { factors, .. }
            | KernelFamily::Separable { factors, .. }
            | KernelFamily::HalfSpace { factors, .. } => factors.len(),
        }
    }
}

/// Which structural assumption the kernel satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelClass {
    /// Symmetric in `z` and homogeneous of degree `-(d+1)`.
    Ks,
    /// `K = k(ξ,z)/|z|^{d+1}` with a continuous jump factor.
    Kns,
    /// Neither, e.g. one-sided kernels.
    Degenerate,
}

/// JSON block describing a kernel inside an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: String,
    pub controls: usize,
    #[serde(default)]
    pub params: Value,
    pub symmetric: bool,
    #[serde(rename = "C_K")]
    pub c_k: f64,
    pub gamma: f64,
    /// Separate constant for the cone lower bound; `C_K` when absent.
    #[serde(default, rename = "C_K_lower", skip_serializing_if = "Option::is_none")]
    pub c_k_lower: Option<f64>,
}

#[derive(Deserialize)]
struct MatrixParams {
    matrices: Vec<MatrixField>,
    #[serde(default = "default_eig_bound", rename = "c_K")]
    eig_bound: f64,
    #[serde(default = "one")]
    scale: f64,
}

#[derive(Deserialize)]
struct AngularParams {
    factors: Vec<TrigSeries>,
    amplitude: Vec<f64>,
    #[serde(default)]
    orientation: Vec<f64>,
    #[serde(default = "one")]
    scale: f64,
}

#[derive(Deserialize)]
struct SeparableParams {
    factors: Vec<TrigSeries>,
    #[serde(default)]
    z_factors: Vec<ZFactor>,
    #[serde(default = "one")]
    scale: f64,
}

#[derive(Deserialize)]
struct HalfSpaceParams {
    factors: Vec<TrigSeries>,
    #[serde(default)]
    axis: usize,
    #[serde(default = "one")]
    scale: f64,
}

fn one() -> f64 {
    1.0
}

fn default_eig_bound() -> f64 {
    4.0
}

/// A family of jump kernels `K^a(ξ, z)`, `a = 0..m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyKernel {
    dim: usize,
    family: KernelFamily,
    scale: f64,
    c_k: f64,
    gamma: f64,
    c_k_lower: Option<f64>,
}

impl LevyKernel {
    pub fn new(dim: usize, family: KernelFamily, scale: f64, c_k: f64, gamma: f64) -> Result<Self> {
        let k = Self { dim, family, scale, c_k, gamma, c_k_lower: None };
        k.validate()?;
        Ok(k)
    }

    /// Separable kernel with unit jump factor: `scale · k^a(ξ) / |z|^{d+1}`.
    pub fn separable(dim: usize, factors: Vec<TrigSeries>, scale: f64) -> Result<Self> {
        let m = factors.len();
        Self::new(dim, KernelFamily::Separable { factors, z_factors: vec![ZFactor::Unit; m] }, scale, 4.0, 1.0)
    }

    /// `scale / |z|^{d+1}` for every control.
    pub fn fractional(dim: usize, controls: usize, scale: f64) -> Result<Self> {
        Self::separable(dim, vec![TrigSeries::constant(1.0); controls], scale)
    }

    /// The kernel restricted to the listed controls, in that order.
    pub fn select_controls(&self, idx: &[usize]) -> Result<Self> {
        let m = self.controls();
        if idx.is_empty() || idx.iter().any(|a| *a >= m) {
            return Err(Error::Config(format!("control selection {idx:?} out of range for {m} controls")));
        }
        fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
            if v.len() <= 1 {
                return v.to_vec();
            }
            idx.iter().map(|a| v[*a].clone()).collect()
        }
        let family = match &self.family {
            KernelFamily::MatrixAnisotropic { matrices, eig_bound } => {
                KernelFamily::MatrixAnisotropic { matrices: pick(matrices, idx), eig_bound: *eig_bound }
            }
            KernelFamily::Angular { factors, amplitude, orientation } => KernelFamily::Angular {
                factors: pick(factors, idx),
                amplitude: pick(amplitude, idx),
                orientation: pick(orientation, idx),
            },
            KernelFamily::Separable { factors, z_factors } => {
                KernelFamily::Separable { factors: pick(factors, idx), z_factors: pick(z_factors, idx) }
            }
            KernelFamily::HalfSpace { factors, axis } => KernelFamily::HalfSpace { factors: pick(factors, idx), axis: *axis },
        };
        let mut k = Self::new(self.dim, family, self.scale, self.c_k, self.gamma)?;
        k.c_k_lower = self.c_k_lower;
        Ok(k)
    }

    /// Declares a separate constant for the cone lower bound.
    pub fn with_lower_constant(mut self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::Config(format!("lower ellipticity constant must be positive, got {c}")));
        }
        self.c_k_lower = Some(c);
        Ok(self)
    }

    pub fn with_constants(mut self, c_k: f64, gamma: f64) -> Result<Self> {
        self.c_k = c_k;
        self.gamma = gamma;
        self.validate()?;
        Ok(self)
    }

    pub fn from_spec(dim: usize, spec: &KernelSpec) -> Result<Self> {
        let params = if spec.params.is_null() { Value::Object(Default::default()) } else { spec.params.clone() };
        let bad = |e: serde_json::Error| Error::Config(format!("kernel params for {}: {e}", spec.family));
        let (family, scale) = match spec.family.as_str() {
            "matrix_anisotropic" => {
                let p: MatrixParams = serde_json::from_value(params).map_err(bad)?;
                (KernelFamily::MatrixAnisotropic { matrices: p.matrices, eig_bound: p.eig_bound }, p.scale)
            }
            "angular" => {
                let p: AngularParams = serde_json::from_value(params).map_err(bad)?;
                let m = p.factors.len();
                let orientation = if p.orientation.is_empty() { vec![0.0; m] } else { p.orientation };
                (KernelFamily::Angular { factors: p.factors, amplitude: p.amplitude, orientation }, p.scale)
            }
            "separable" => {
                let p: SeparableParams = serde_json::from_value(params).map_err(bad)?;
                let m = p.factors.len();
                let z_factors = if p.z_factors.is_empty() { vec![ZFactor::Unit; m] } else { p.z_factors };
                (KernelFamily::Separable { factors: p.factors, z_factors }, p.scale)
            }
            "half_space" => {
                let p: HalfSpaceParams = serde_json::from_value(params).map_err(bad)?;
                (KernelFamily::HalfSpace { factors: p.factors, axis: p.axis }, p.scale)
            }
            other => return Err(Error::Config(format!("unknown kernel family {other:?}"))),
        };
        let mut k = Self::new(dim, family, scale, spec.c_k, spec.gamma)?;
        if let Some(c) = spec.c_k_lower {
            k = k.with_lower_constant(c)?;
        }
        if k.controls() != spec.controls {
            return Err(Error::Config(format!(
                "kernel declares {} controls but its parameter tables have {}",
                spec.controls,
                k.controls()
            )));
        }
        if spec.symmetric != k.is_symmetric() {
            return Err(Error::Config(format!(
                "kernel declared symmetric={} but the {} parameters give symmetric={}",
                spec.symmetric,
                spec.family,
                k.is_symmetric()
            )));
        }
        Ok(k)
    }

    fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dim) {
            return Err(Error::Config(format!("kernel dim must be 1 or 2, got {}", self.dim)));
        }
        let m = self.family.controls();
        if m == 0 {
            return Err(Error::Config("kernel needs at least one control".into()));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("kernel scale must be finite and >= 0, got {}", self.scale)));
        }
        if !(self.c_k > 0.0) {
            return Err(Error::Config(format!("C_K must be positive, got {}", self.c_k)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0,1], got {}", self.gamma)));
        }
        let probe = sample_lattice(self.dim, 32);
        let check_factors = |factors: &[TrigSeries]| -> Result<()> {
            for (a, f) in factors.iter().enumerate() {
                let min = probe.iter().map(|xi| f.eval(&[0.0, 0.0], xi)).fold(f64::INFINITY, f64::min);
                if min < 0.0 {
                    return Err(Error::Config(format!("kernel factor of control {a} is negative ({min:.3e})")));
                }
                if !f.is_x_independent() {
                    return Err(Error::Config(format!("kernel factor of control {a} depends on x")));
                }
            }
            Ok(())
        };
        match &self.family {
            KernelFamily::MatrixAnisotropic { matrices, eig_bound } => {
                let want = if self.dim == 1 { 1 } else { 3 };
                for (a, mf) in matrices.iter().enumerate() {
                    if mf.0.len() != want {
                        return Err(Error::Config(format!("matrix of control {a} needs {want} entries")));
                    }
                    for xi in &probe {
                        let (lo, hi) = mf.eigenvalues(xi, self.dim);
                        if lo < 1.0 / eig_bound || hi > *eig_bound {
                            return Err(Error::Config(format!(
                                "matrix of control {a} has eigenvalues [{lo:.3}, {hi:.3}] outside [1/{eig_bound}, {eig_bound}]"
                            )));
                        }
                    }
                }
            }
            KernelFamily::Angular { factors, amplitude, orientation } => {
                check_factors(factors)?;
                if amplitude.len() != factors.len() || orientation.len() != factors.len() {
                    return Err(Error::Config("angular amplitude/orientation tables must have one entry per control".into()));
                }
                if amplitude.iter().any(|a| a.abs() > 1.0) {
                    return Err(Error::Config("angular amplitude must satisfy |A| <= 1".into()));
                }
            }
            KernelFamily::Separable { factors, z_factors } => {
                check_factors(factors)?;
                if z_factors.len() != factors.len() {
                    return Err(Error::Config("separable kernel needs one z factor per control".into()));
                }
                for g in z_factors {
                    g.validate(self.dim)?;
                }
            }
            KernelFamily::HalfSpace { factors, axis } => {
                check_factors(factors)?;
                if *axis >= self.dim {
                    return Err(Error::Config(format!("half-space axis {axis} out of range")));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn controls(&self) -> usize {
        self.family.controls()
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn c_k(&self) -> f64 {
        self.c_k
    }

    /// Constant of the cone lower bound.
    pub fn c_k_lower(&self) -> f64 {
        self.c_k_lower.unwrap_or(self.c_k)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn class(&self) -> KernelClass {
        match &self.family {
            KernelFamily::MatrixAnisotropic { .. } | KernelFamily::Angular { .. } => KernelClass::Ks,
            KernelFamily::Separable { z_factors, .. } => {
                if z_factors.iter().all(|g| *g == ZFactor::Unit) {
                    KernelClass::Ks
                } else {
                    KernelClass::Kns
                }
            }
            KernelFamily::HalfSpace { .. } => KernelClass::Degenerate,
        }
    }

    /// Symmetric in `z` for every control and `ξ`.
    pub fn is_symmetric(&self) -> bool {
        match &self.family {
            KernelFamily::Separable { z_factors, .. } => {
                z_factors.iter().all(|g| !matches!(g, ZFactor::Linear { c, .. } if *c != 0.0))
            }
            KernelFamily::HalfSpace { .. } => false,
            _ => true,
        }
    }

    /// True when `K^a(ξ,z) = xi_factor(a,ξ) · base_density(a,z)`.
    pub fn is_separable(&self) -> bool {
        match &self.family {
            KernelFamily::MatrixAnisotropic { matrices, .. } => matrices.iter().all(|m| m.is_xi_independent()),
            _ => true,
        }
    }

    /// True when the kernel does not depend on `ξ`.
    pub fn is_xi_independent(&self) -> bool {
        match &self.family {
            KernelFamily::MatrixAnisotropic { matrices, .. } => matrices.iter().all(|m| m.is_xi_independent()),
            KernelFamily::Angular { factors, .. }
            | KernelFamily::Separable { factors, .. }
            | KernelFamily::HalfSpace { factors, .. } => factors.iter().all(|f| f.is_xi_independent()),
        }
    }

    /// True when every density vanishes identically.
    pub fn is_zero(&self) -> bool {
        if self.scale == 0.0 {
            return true;
        }
        match &self.family {
            KernelFamily::MatrixAnisotropic { .. } => false,
            KernelFamily::Angular { factors, .. }
            | KernelFamily::Separable { factors, .. }
            | KernelFamily::HalfSpace { factors, .. } => factors.iter().all(|f| f.sup_bound() == 0.0),
        }
    }

    /// Copy with every density multiplied by `s ≥ 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        let mut k = Self::new(self.dim, self.family.clone(), self.scale * s, self.c_k, self.gamma)?;
        k.c_k_lower = self.c_k_lower;
        Ok(k)
    }

    /// `ξ`-factor of a separable kernel, scale included.
    #[inline]
    pub fn xi_factor(&self, a: usize, xi: &Vec2) -> f64 {
        let o = [0.0, 0.0];
        match &self.family {
            KernelFamily::MatrixAnisotropic { .. } => self.scale,
            KernelFamily::Angular { factors, .. }
            | KernelFamily::Separable { factors, .. }
            | KernelFamily::HalfSpace { factors, .. } => self.scale * factors[a].eval(&o, xi),
        }
    }

    /// `z`-part of a separable kernel, so that `density = xi_factor · base_density`.
    #[inline]
    pub fn base_density(&self, a: usize, z: &Vec2) -> f64 {
        let r = norm(z, self.dim);
        let inv = r.powi(-(self.dim as i32 + 1));
        match &self.family {
            KernelFamily::MatrixAnisotropic { matrices, .. } => {
                let m = matrices[a].at(&[0.0, 0.0]);
                quad_form_density(&m, z, self.dim)
            }
            KernelFamily::Angular { amplitude, orientation, .. } => {
                let th = z[1].atan2(z[0]);
                (1.0 + amplitude[a] * (2.0 * (th - orientation[a])).cos()) * inv
            }
            KernelFamily::Separable { z_factors, .. } => z_factors[a].value(z, r) * inv,
            KernelFamily::HalfSpace { axis, .. } => {
                if z[*axis] > 0.0 {
                    inv
                } else {
                    0.0
                }
            }
        }
    }

    /// Kernel density without the `z ≠ 0` check.
    #[inline]
    pub fn density(&self, a: usize, xi: &Vec2, z: &Vec2) -> f64 {
        match &self.family {
            KernelFamily::MatrixAnisotropic { matrices, .. } => {
                self.scale * quad_form_density(&matrices[a].at(xi), z, self.dim)
            }
            _ => self.xi_factor(a, xi) * self.base_density(a, z),
        }
    }

    /// Kernel density `K^a(ξ, z)`; `z = 0` is outside the domain.
    pub fn evaluate(&self, a: usize, xi: &[f64], z: &[f64]) -> Result<f64> {
        if a >= self.controls() {
            return Err(Error::Domain(format!("control index {a} out of range")));
        }
        let z = to_vec2(z, self.dim)?;
        let xi = to_vec2(xi, self.dim)?;
        if norm(&z, self.dim) == 0.0 {
            return Err(Error::Domain("kernel evaluated at z = 0".into()));
        }
        Ok(self.density(a, &xi, &z))
    }

    /// Jump factor `k^a(ξ, z)` of a separable kernel (`K = k / |z|^{d+1}`).
    pub fn jump_factor(&self, a: usize, xi: &Vec2, z: &Vec2) -> Result<f64> {
        match &self.family {
            KernelFamily::Separable { z_factors, .. } => {
                Ok(self.xi_factor(a, xi) * z_factors[a].value(z, norm(z, self.dim)))
            }
            other => Err(Error::Domain(format!(
                "the {} family has no continuous jump factor k(ξ,z)",
                other.tag()
            ))),
        }
    }

    /// `∫_{|z|>R} K^a(ξ,z) dz` for `R ≥ 1`, exact for the `|z|^{-(d+1)}` tails of every family.
    pub fn tail_mass(&self, a: usize, xi: &Vec2, radius: f64, rule: &ShellRule) -> f64 {
        self.tail_integral(radius, rule, |z| self.density(a, xi, &z))
    }

    /// `∫_{|z|>R} φ(z) dz` for `φ` homogeneous of degree `-(d+1)` on `|z| ≥ R`.
    pub fn tail_integral(&self, radius: f64, rule: &ShellRule, phi: impl Fn(Vec2) -> f64) -> f64 {
        let d1 = self.dim as i32 + 1;
        rule.directions()
            .into_iter()
            .map(|(u, w)| {
                let z = [radius * u[0], radius * u[1]];
                w * phi(z) * radius.powi(d1)
            })
            .sum::<f64>()
            / radius
    }

    pub fn to_spec(&self) -> KernelSpec {
        let params = match &self.family {
            KernelFamily::MatrixAnisotropic { matrices, eig_bound } => {
                serde_json::json!({"matrices": matrices, "c_K": eig_bound, "scale": self.scale})
            }
            KernelFamily::Angular { factors, amplitude, orientation } => serde_json::json!({
                "factors": factors, "amplitude": amplitude, "orientation": orientation, "scale": self.scale
            }),
            KernelFamily::Separable { factors, z_factors } => {
                serde_json::json!({"factors": factors, "z_factors": z_factors, "scale": self.scale})
            }
            KernelFamily::HalfSpace { factors, axis } => {
                serde_json::json!({"factors": factors, "axis": axis, "scale": self.scale})
            }
        };
        KernelSpec {
            family: self.family.tag().to_string(),
            controls: self.controls(),
            params,
            symmetric: self.is_symmetric(),
            c_k: self.c_k,
            gamma: self.gamma,
            c_k_lower: self.c_k_lower,
        }
    }
}

#[inline]
fn quad_form_density(m: &[[f64; 2]; 2], z: &Vec2, dim: usize) -> f64 {
    if dim == 1 {
        (m[0][0] * z[0] * z[0]).abs().powf(-1.0)
    } else {
        let q = m[0][0] * z[0] * z[0] + 2.0 * m[0][1] * z[0] * z[1] + m[1][1] * z[1] * z[1];
        q.abs().powf(-1.5)
    }
}

#[inline]
pub(crate) fn norm(z: &Vec2, dim: usize) -> f64 {
    if dim == 1 {
        z[0].abs()
    } else {
        z[0].hypot(z[1])
    }
}

pub(crate) fn to_vec2(v: &[f64], dim: usize) -> Result<Vec2> {
    if v.len() < dim {
        return Err(Error::Domain(format!("expected a {dim}-vector, got length {}", v.len())));
    }
    let mut out = [0.0; 2];
    out[..dim].copy_from_slice(&v[..dim]);
    Ok(out)
}

/// Resolution and tolerance of the numerical assumption checks.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CheckOptions {
    /// Innermost resolved radius of the shell refinement.
    pub r_min: f64,
    /// Truncation radius; the tail beyond it is added in closed form.
    pub r_max: f64,
    pub radial_nodes: usize,
    /// Angular nodes for smooth integrands (two dimensions).
    pub angles: usize,
    /// Angular nodes for the cone indicator (two dimensions).
    pub cone_angles: usize,
    /// `ξ` samples per axis over one period.
    pub xi_per_axis: usize,
    /// Relative slack in the pass/fail comparison.
    pub tol: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { r_min: 1.0 / 512.0, r_max: 8.0, radial_nodes: 16, angles: 64, cone_angles: 720, xi_per_axis: 16, tol: 0.02 }
    }
}

impl CheckOptions {
    fn rule(&self, dim: usize) -> ShellRule {
        ShellRule::new(dim, self.radial_nodes, self.angles)
    }
}

/// Outcome of one numerical assumption check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub assumption: String,
    pub measured: f64,
    pub declared: f64,
    pub pass: bool,
    /// Number of `(a, ξ)` samples the measurement ranged over.
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub detail: Value,
}

fn xi_samples(kernel: &LevyKernel, opts: &CheckOptions) -> Vec<Vec2> {
    if kernel.is_xi_independent() {
        vec![[0.0, 0.0]]
    } else {
        sample_lattice(kernel.dim, opts.xi_per_axis)
    }
}

/// Uniform Lévy bound: `sup_{a,ξ} ∫ min(1,|z|²) K^a(ξ,z) dz ≤ C_K`.
pub fn check_levy_bound(kernel: &LevyKernel, opts: &CheckOptions) -> Result<AssumptionReport> {
    let rule = opts.rule(kernel.dim);
    let d = kernel.dim;
    let xis = xi_samples(kernel, opts);
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    for a in 0..kernel.controls() {
        for xi in &xis {
            let inner = integrate_ball(&rule, 1.0, opts.r_min, &|z: Vec2| {
                let r = norm(&z, d);
                r * r * kernel.density(a, xi, &z)
            })?;
            let outer = rule.integrate_geometric(1.0, opts.r_max, &|z: Vec2| kernel.density(a, xi, &z));
            let tail = kernel.tail_mass(a, xi, opts.r_max, &rule);
            worst = worst.max(inner.value() + outer + tail);
            samples += 1;
        }
    }
    Ok(AssumptionReport {
        assumption: "K1".into(),
        measured: worst,
        declared: kernel.c_k,
        pass: worst <= kernel.c_k * (1.0 + opts.tol),
        samples,
        detail: Value::Null,
    })
}

/// Weak ellipticity on the cone `{z ∈ B_ρ : (1-η)|z||p| ≤ |p·z|}`:
/// `inf_{a,ξ} ∫_cone |z|² K ≥ C_K η^{(d-1)/2} ρ`.
pub fn check_cone_ellipticity(
    kernel: &LevyKernel,
    p: &[f64],
    eta: f64,
    rho: f64,
    opts: &CheckOptions,
) -> Result<AssumptionReport> {
    let d = kernel.dim;
    let p = to_vec2(p, d)?;
    let pn = norm(&p, d);
    if pn <= 0.0 {
        return Err(Error::Domain("cone direction must be nonzero".into()));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Domain(format!("aperture must lie in (0,1), got {eta}")));
    }
    if rho <= 0.0 {
        return Err(Error::Domain(format!("cone radius must be positive, got {rho}")));
    }
    let rule = ShellRule::new(d, opts.radial_nodes, opts.cone_angles);
    let in_cone = |z: &Vec2| {
        let r = norm(z, d);
        (1.0 - eta) * r * pn <= (p[0] * z[0] + p[1] * z[1]).abs()
    };
    let mut worst = f64::INFINITY;
    let mut samples = 0;
    for a in 0..kernel.controls() {
        for xi in xi_samples(kernel, opts) {
            let b = integrate_ball(&rule, rho, opts.r_min.min(rho / 4.0), &|z: Vec2| {
                if in_cone(&z) {
                    let r = norm(&z, d);
                    r * r * kernel.density(a, &xi, &z)
                } else {
                    0.0
                }
            })?;
            worst = worst.min(b.value());
            samples += 1;
        }
    }
    let declared = kernel.c_k_lower() * eta.powf((d as f64 - 1.0) / 2.0) * rho;
    Ok(AssumptionReport {
        assumption: "K2".into(),
        measured: worst,
        declared,
        pass: worst >= declared * (1.0 - opts.tol),
        samples,
        detail: serde_json::json!({"p": &p[..d], "eta": eta, "rho": rho}),
    })
}

/// Hölder continuity in `ξ`: the three integrals of `|K(ξ1,·) − K(ξ2,·)|` against
/// `|z|²` on `B_ρ`, `|z|` on `B∖B_ρ` and `1` off `B_ρ`, compared with
/// `C_K |ξ1−ξ2|^γ · {ρ, |ln ρ|, 1/ρ}`. The measured value is the implied constant.
pub fn check_holder_in_xi(
    kernel: &LevyKernel,
    xi1: &[f64],
    xi2: &[f64],
    rho: f64,
    opts: &CheckOptions,
) -> Result<AssumptionReport> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(format!("rho must lie in (0,1), got {rho}")));
    }
    let d = kernel.dim;
    let xi1 = to_vec2(xi1, d)?;
    let xi2 = to_vec2(xi2, d)?;
    let rule = opts.rule(d);
    let dist = torus_distance(&xi1, &xi2, d);
    let mut integrals = Vec::new();
    let mut implied: f64 = 0.0;
    for a in 0..kernel.controls() {
        let diff = |z: &Vec2| (kernel.density(a, &xi1, z) - kernel.density(a, &xi2, z)).abs();
        let i1 = integrate_ball(&rule, rho, opts.r_min.min(rho / 4.0), &|z: Vec2| {
            let r = norm(&z, d);
            r * r * diff(&z)
        })?
        .value();
        let i2 = rule.integrate_geometric(rho, 1.0, &|z: Vec2| norm(&z, d) * diff(&z));
        let i3 = rule.integrate_geometric(rho, opts.r_max, &|z: Vec2| diff(&z))
            + kernel.tail_integral(opts.r_max, &rule, |z| diff(&z));
        let scales = [rho, rho.ln().abs(), 1.0 / rho];
        for (v, s) in [i1, i2, i3].iter().zip(scales) {
            if *v > 0.0 {
                implied = implied.max(if dist > 0.0 { v / (dist.powf(kernel.gamma) * s) } else { f64::INFINITY });
            }
        }
        integrals.push([i1, i2, i3]);
    }
    Ok(AssumptionReport {
        assumption: "K3".into(),
        measured: implied,
        declared: kernel.c_k,
        pass: implied <= kernel.c_k * (1.0 + opts.tol),
        samples: kernel.controls(),
        detail: serde_json::json!({"distance": dist, "rho": rho, "integrals": integrals}),
    })
}

/// Dini condition on the jump factor:
/// `sup_{a,ξ} ∫_0^1 sup_{|z|≤r} |k^a(ξ,z) − k^a(ξ,0)| dr/r ≤ C_K`.
pub fn check_modulus_integrability(kernel: &LevyKernel, opts: &CheckOptions) -> Result<AssumptionReport> {
    let d = kernel.dim;
    if !matches!(kernel.family, KernelFamily::Separable { .. }) {
        return Err(Error::Domain(format!(
            "modulus integrability needs a jump factor; the {} family has none",
            kernel.family.tag()
        )));
    }
    let r_floor: f64 = 1e-12;
    let levels = 481;
    let dirs = ShellRule::new(d, 1, opts.angles).directions();
    let radial = 32;
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    for a in 0..kernel.controls() {
        for xi in xi_samples(kernel, opts) {
            let k0 = kernel.jump_factor(a, &xi, &[0.0, 0.0])?;
            // ω(r) on a log grid; the sup over |z| ≤ r is the running max over shells
            let mut omega = Vec::with_capacity(levels);
            let mut running: f64 = 0.0;
            let mut prev_r = 0.0;
            let mut rs = Vec::with_capacity(levels);
            for l in 0..levels {
                let t = l as f64 / (levels - 1) as f64;
                let r = r_floor.powf(1.0 - t);
                for s in 1..=radial {
                    let rr = prev_r + (r - prev_r) * s as f64 / radial as f64;
                    for (u, _) in &dirs {
                        let z = [rr * u[0], rr * u[1]];
                        running = running.max((kernel.jump_factor(a, &xi, &z)? - k0).abs());
                    }
                }
                prev_r = r;
                omega.push(running);
                rs.push(r);
            }
            // trapezoid in ln r
            let mut integral = 0.0;
            for l in 1..levels {
                integral += 0.5 * (omega[l] + omega[l - 1]) * (rs[l].ln() - rs[l - 1].ln());
            }
            worst = worst.max(integral);
            samples += 1;
        }
    }
    Ok(AssumptionReport {
        assumption: "Kns".into(),
        measured: worst,
        declared: kernel.c_k,
        pass: worst <= kernel.c_k * (1.0 + opts.tol),
        samples,
        detail: Value::Null,
    })
}

/// Drift correction `b_K^a(ξ) = ∫_B (k^a(ξ,z) − k^a(ξ,0)) z/|z|^{d+1} dz`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DriftCorrection {
    pub value: Vec2,
    /// Bound on the unresolved ball `|z| < r_min`: `ω_k(r_min) · ∫_{B_{r_min}} |z|^{-d}`.
    pub error_bound: f64,
}

pub fn drift_correction(kernel: &LevyKernel, a: usize, xi: &[f64], opts: &CheckOptions) -> Result<DriftCorrection> {
    let d = kernel.dim;
    if !matches!(kernel.family, KernelFamily::Separable { .. }) {
        return Err(Error::Domain(format!(
            "drift correction needs a jump factor k(ξ,z); the {} family has none",
            kernel.family.tag()
        )));
    }
    if a >= kernel.controls() {
        return Err(Error::Domain(format!("control index {a} out of range")));
    }
    let xi = to_vec2(xi, d)?;
    let rule = opts.rule(d);
    let k0 = kernel.jump_factor(a, &xi, &[0.0, 0.0])?;
    let d1 = d as i32 + 1;
    let mut value = [0.0; 2];
    for c in 0..d {
        value[c] = rule.integrate_geometric(opts.r_min, 1.0, &|z: Vec2| {
            let r = norm(&z, d);
            (kernel.jump_factor(a, &xi, &z).unwrap_or(k0) - k0) * z[c] / r.powi(d1)
        });
    }
    // symmetric node sets cancel odd integrands only up to roundoff
    for v in value.iter_mut() {
        if v.abs() < 1e-13 {
            *v = 0.0;
        }
    }
    let omega = rule
        .annulus(0.0, opts.r_min)
        .iter()
        .map(|(z, _)| (kernel.jump_factor(a, &xi, z).unwrap_or(k0) - k0).abs())
        .fold(0.0, f64::max);
    let sphere = if d == 1 { 2.0 } else { 2.0 * PI };
    Ok(DriftCorrection { value, error_bound: omega * sphere * opts.r_min })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> CheckOptions {
        CheckOptions::default()
    }

    fn sep1(factor: TrigSeries, g: ZFactor) -> LevyKernel {
        LevyKernel::new(1, KernelFamily::Separable { factors: vec![factor], z_factors: vec![g] }, 1.0, 4.0, 1.0).unwrap()
    }

    #[test]
    fn identity_matrix_kernel_value() {
        let k = LevyKernel::new(
            1,
            KernelFamily::MatrixAnisotropic { matrices: vec![MatrixField(vec![TrigSeries::constant(1.0)])], eig_bound: 2.0 },
            1.0,
            4.0,
            1.0,
        )
        .unwrap();
        assert!((k.evaluate(0, &[0.3], &[0.5]).unwrap() - 4.0).abs() < 1e-12);
        assert!(k.evaluate(0, &[0.3], &[0.0]).is_err());
    }

    #[test]
    fn half_space_vanishes_on_negative_side() {
        let k = LevyKernel::new(
            2,
            KernelFamily::HalfSpace { factors: vec![TrigSeries::constant(1.0)], axis: 0 },
            1.0,
            4.0,
            1.0,
        )
        .unwrap();
        assert_eq!(k.evaluate(0, &[0.1, 0.2], &[-0.3, 0.4]).unwrap(), 0.0);
        assert!(k.evaluate(0, &[0.1, 0.2], &[0.3, 0.4]).unwrap() > 0.0);
        assert_eq!(k.class(), KernelClass::Degenerate);
    }

    #[test]
    fn unit_separable_is_power_law() {
        let k = LevyKernel::fractional(2, 1, 1.0).unwrap();
        let z = [0.3, -0.4];
        assert!((k.evaluate(0, &[0.0, 0.0], &z).unwrap() - 0.5f64.powi(-3)).abs() < 1e-9);
        assert_eq!(k.class(), KernelClass::Ks);
    }

    #[test]
    fn matrix_eigen_bound_enforced() {
        let r = LevyKernel::new(
            1,
            KernelFamily::MatrixAnisotropic {
                matrices: vec![MatrixField(vec![TrigSeries::constant(1.0).with_sin(0.9, &[], &[1])])],
                eig_bound: 2.0,
            },
            1.0,
            4.0,
            1.0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn levy_bound_of_half_laplacian_kernel() {
        let k = LevyKernel::fractional(1, 1, 1.0).unwrap();
        let rep = check_levy_bound(&k, &opts()).unwrap();
        assert!((rep.measured / 4.0 - 1.0).abs() < 0.02, "{}", rep.measured);
        assert!(rep.pass);
        let zero = k.scaled(0.0).unwrap();
        let rep0 = check_levy_bound(&zero, &opts()).unwrap();
        assert_eq!(rep0.measured, 0.0);
        assert!(rep0.pass);
        let big = k.scaled(10.0 * k.c_k() / 4.0).unwrap();
        assert!(!check_levy_bound(&big, &opts()).unwrap().pass);
    }

    #[test]
    fn levy_bound_2d_power_law() {
        // ∫_B |z|^2|z|^{-3} + ∫_{B^c}|z|^{-3} = 2π + 2π
        let k = LevyKernel::fractional(2, 1, 1.0).unwrap().with_constants(13.0, 1.0).unwrap();
        let rep = check_levy_bound(&k, &opts()).unwrap();
        assert!((rep.measured / (4.0 * PI) - 1.0).abs() < 0.01, "{}", rep.measured);
    }

    #[test]
    fn cone_ellipticity_cases() {
        let k = LevyKernel::fractional(1, 1, 1.0).unwrap().with_constants(1.0, 1.0).unwrap();
        let rho = 0.25;
        let rep = check_cone_ellipticity(&k, &[1.0], 0.3, rho, &opts()).unwrap();
        assert!((rep.measured / (2.0 * rho) - 1.0).abs() < 0.02);
        assert!(rep.pass);
        let zero = k.scaled(0.0).unwrap();
        assert!(!check_cone_ellipticity(&zero, &[1.0], 0.3, rho, &opts()).unwrap().pass);
        let half = LevyKernel::new(
            1,
            KernelFamily::HalfSpace { factors: vec![TrigSeries::constant(1.0)], axis: 0 },
            1.0,
            0.5,
            1.0,
        )
        .unwrap();
        let rep = check_cone_ellipticity(&half, &[1.0], 0.3, rho, &opts()).unwrap();
        assert!((rep.measured / rho - 1.0).abs() < 0.02);
        assert!(check_cone_ellipticity(&k, &[0.0], 0.3, rho, &opts()).is_err());
    }

    #[test]
    fn cone_ellipticity_2d_fraction() {
        // power law in 2D: cone of half-aperture θ0 with cos θ0 = 1-η, two-sided
        let k = LevyKernel::fractional(2, 1, 1.0).unwrap().with_constants(1.0, 1.0).unwrap();
        let eta = 0.2;
        let rho = 0.5;
        let th0 = (1.0f64 - eta).acos();
        let want = 4.0 * th0 * rho;
        let rep = check_cone_ellipticity(&k, &[1.0, 1.0], eta, rho, &opts()).unwrap();
        assert!((rep.measured / want - 1.0).abs() < 0.02, "{} vs {}", rep.measured, want);
    }

    #[test]
    fn holder_in_xi_cases() {
        let k = sep1(TrigSeries::constant(2.0).with_sin(1.0, &[], &[1]), ZFactor::Unit);
        let rep = check_holder_in_xi(&k, &[0.2], &[0.2], 0.25, &opts()).unwrap();
        assert_eq!(rep.measured, 0.0);
        assert!(rep.pass);

        let rho = 0.25;
        let (x1, x2) = (0.1, 0.3);
        let rep = check_holder_in_xi(&k, &[x1], &[x2], rho, &opts()).unwrap();
        let i1 = rep.detail["integrals"][0][0].as_f64().unwrap();
        let dk = ((2.0 * PI * x1).sin() - (2.0 * PI * x2).sin()).abs();
        assert!((i1 / (dk * 2.0 * rho) - 1.0).abs() < 0.02);

        let flat = LevyKernel::fractional(1, 1, 1.0).unwrap();
        let rep = check_holder_in_xi(&flat, &[0.1], &[0.6], 0.5, &opts()).unwrap();
        assert_eq!(rep.measured, 0.0);
        assert!(rep.pass);
        assert!(check_holder_in_xi(&flat, &[0.1], &[0.6], 1.5, &opts()).is_err());
    }

    #[test]
    fn modulus_integrability_cases() {
        let flat = sep1(TrigSeries::constant(1.0), ZFactor::Unit);
        let rep = check_modulus_integrability(&flat, &opts()).unwrap();
        assert_eq!(rep.measured, 0.0);
        assert!(rep.pass);

        let radial = sep1(TrigSeries::constant(1.0), ZFactor::Radial { c: 1.0 });
        let rep = check_modulus_integrability(&radial, &opts()).unwrap();
        assert!((rep.measured - 1.0).abs() < 0.02, "{}", rep.measured);

        let log = sep1(TrigSeries::constant(1.0), ZFactor::LogModulus).with_constants(2.0, 1.0).unwrap();
        let rep = check_modulus_integrability(&log, &opts()).unwrap();
        assert!(!rep.pass, "{}", rep.measured);

        let matrix = LevyKernel::new(
            1,
            KernelFamily::MatrixAnisotropic { matrices: vec![MatrixField(vec![TrigSeries::constant(1.0)])], eig_bound: 2.0 },
            1.0,
            4.0,
            1.0,
        )
        .unwrap();
        assert!(check_modulus_integrability(&matrix, &opts()).is_err());
    }

    #[test]
    fn drift_correction_cases() {
        let even = sep1(TrigSeries::constant(1.5), ZFactor::Radial { c: 0.7 });
        let b = drift_correction(&even, 0, &[0.3], &opts()).unwrap();
        assert!(b.value[0].abs() < 1e-10);

        let lin = sep1(TrigSeries::constant(1.0), ZFactor::Linear { axis: 0, c: 1.0 });
        let b = drift_correction(&lin, 0, &[0.3], &opts()).unwrap();
        assert!((b.value[0] / 2.0 - 1.0).abs() < 0.01, "{:?}", b);

        let flat = sep1(TrigSeries::constant(1.0), ZFactor::Unit);
        assert_eq!(drift_correction(&flat, 0, &[0.0], &opts()).unwrap().value, [0.0, 0.0]);

        let half = LevyKernel::new(1, KernelFamily::HalfSpace { factors: vec![TrigSeries::constant(1.0)], axis: 0 }, 1.0, 4.0, 1.0)
            .unwrap();
        assert!(drift_correction(&half, 0, &[0.0], &opts()).is_err());
    }

    #[test]
    fn spec_round_trip() {
        let spec: KernelSpec = serde_json::from_str(
            r#"{"family":"separable","controls":2,"symmetric":true,"C_K":4.0,"gamma":0.9,
                "params":{"factors":[{"constant":2,"terms":[{"amp":1,"kxi":[1],"phase":-1.5707963267948966}]},
                                     {"constant":2,"terms":[{"amp":1,"kxi":[1]}]}]}}"#,
        )
        .unwrap();
        let k = LevyKernel::from_spec(1, &spec).unwrap();
        assert_eq!(k.controls(), 2);
        let again = LevyKernel::from_spec(1, &k.to_spec()).unwrap();
        assert_eq!(again, k);

        let mut wrong = spec.clone();
        wrong.symmetric = false;
        assert!(LevyKernel::from_spec(1, &wrong).is_err());
        let mut wrong = spec;
        wrong.controls = 3;
        assert!(LevyKernel::from_spec(1, &wrong).is_err());
    }
}
