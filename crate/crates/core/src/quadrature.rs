//! Radial-shell quadrature on `R^d`, `d ∈ {1,2}`.
//!
//! Shells are annuli `r0 ≤ |z| ≤ r1` integrated with Gauss-Legendre nodes in the
//! radius and uniform angular nodes (the two signs in one dimension). Balls around
//! the origin are covered by shells refined geometrically toward 0.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::Vec2;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Angular and radial resolution of a shell rule.
#[derive(Debug, Clone, Copy)]
pub struct ShellRule {
    pub dim: usize,
    pub radial_nodes: usize,
    pub angles: usize,
}

impl ShellRule {
    pub fn new(dim: usize, radial_nodes: usize, angles: usize) -> Self {
        Self { dim, radial_nodes, angles }
    }

    /// Unit directions with their angular weights (summing to the sphere measure).
    pub fn directions(&self) -> Vec<(Vec2, f64)> {
        if self.dim == 1 {
            vec![([1.0, 0.0], 1.0), ([-1.0, 0.0], 1.0)]
        } else {
            let dth = 2.0 * PI / self.angles as f64;
            (0..self.angles)
                .map(|j| {
                    let th = (j as f64 + 0.5) * dth;
                    ([th.cos(), th.sin()], dth)
                })
                .collect()
        }
    }

    /// Quadrature points `(z, weight)` of the annulus `r0 ≤ |z| ≤ r1`, Jacobian included.
    pub fn annulus(&self, r0: f64, r1: f64) -> Vec<(Vec2, f64)> {
        let (gx, gw) = gauss_legendre(self.radial_nodes);
        let half = 0.5 * (r1 - r0);
        let mid = 0.5 * (r1 + r0);
        let dirs = self.directions();
        let mut out = Vec::with_capacity(gx.len() * dirs.len());
        for (t, wt) in gx.iter().zip(&gw) {
            let r = mid + half * t;
            let jac = if self.dim == 1 { 1.0 } else { r };
            for (u, wu) in &dirs {
                out.push(([r * u[0], r * u[1]], wt * half * jac * wu));
            }
        }
        out
    }

    /// Integral of `f` over the annulus.
    pub fn integrate_annulus(&self, r0: f64, r1: f64, f: &impl Fn(Vec2) -> f64) -> f64 {
        self.annulus(r0, r1).into_iter().map(|(z, w)| w * f(z)).sum()
    }

    /// Integral of `f` over `r_lo ≤ |z| ≤ r_hi` with shells `[r, 2r]` (geometric).
    pub fn integrate_geometric(&self, r_lo: f64, r_hi: f64, f: &impl Fn(Vec2) -> f64) -> f64 {
        let mut total = 0.0;
        let mut r1 = r_hi;
        while r1 > r_lo * (1.0 + 1e-12) {
            let r0 = (0.5 * r1).max(r_lo);
            total += self.integrate_annulus(r0, r1, f);
            r1 = r0;
        }
        total
    }
}

/// Result of integrating over a punctured ball with geometric refinement to the origin.
#[derive(Debug, Clone)]
pub struct BallIntegral {
    /// Sum over the resolved shells.
    pub resolved: f64,
    /// Extrapolated contribution of the unresolved inner ball.
    pub remainder: f64,
    /// Shell contributions from the outside in.
    pub shells: Vec<f64>,
}

impl BallIntegral {
    pub fn value(&self) -> f64 {
        self.resolved + self.remainder
    }
}

/// Integrates `f` over `0 < |z| ≤ radius` with shells `[r/2, r]` down to `r_min`.
///
/// The inner ball is accounted for by geometric extrapolation of the last two
/// shells. Integrands whose shell contributions stop decaying are reported as a
/// quadrature failure instead of being summed.
pub fn integrate_ball(rule: &ShellRule, radius: f64, r_min: f64, f: &impl Fn(Vec2) -> f64) -> Result<BallIntegral> {
    let mut shells = Vec::new();
    let mut r1 = radius;
    while r1 > r_min {
        let r0 = 0.5 * r1;
        shells.push(rule.integrate_annulus(r0, r1, f));
        r1 = r0;
    }
    let resolved: f64 = shells.iter().sum();
    let remainder = match shells.len() {
        0 => 0.0,
        1 => shells[0],
        k => {
            let last = shells[k - 1];
            let prev = shells[k - 2];
            if last == 0.0 {
                0.0
            } else if prev == 0.0 {
                return Err(Error::Quadrature(format!(
                    "inner shells do not decay (last {last:.3e} after a zero shell)"
                )));
            } else {
                let q = (last / prev).abs();
                if q > 0.75 {
                    return Err(Error::Quadrature(format!(
                        "inner-shell refinement exceeded at r={r1:.3e}: shell ratio {q:.3}"
                    )));
                }
                last * q / (1.0 - q)
            }
        }
    };
    Ok(BallIntegral { resolved, remainder, shells })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-13);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn annulus_area_2d() {
        let rule = ShellRule::new(2, 8, 64);
        let a = rule.integrate_annulus(1.0, 2.0, &|_| 1.0);
        assert!((a - 3.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn ball_remainder_is_exact_for_order_one_integrands() {
        // ∫_{|z|<1} |z|^2 |z|^{-2} dz = 2 in one dimension
        let rule = ShellRule::new(1, 16, 0);
        let b = integrate_ball(&rule, 1.0, 1e-2, &|z: Vec2| {
            let r = z[0].abs();
            r * r / (r * r)
        })
        .unwrap();
        assert!((b.value() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn non_integrable_singularity_is_reported() {
        let rule = ShellRule::new(1, 16, 0);
        let r = integrate_ball(&rule, 1.0, 1e-3, &|z: Vec2| 1.0 / z[0].abs());
        assert!(matches!(r, Err(Error::Quadrature(_))));
    }
}
