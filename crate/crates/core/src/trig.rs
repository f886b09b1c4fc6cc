//! Analytic data families: finite trigonometric series in the slow variable `x`
//! and the fast variable `xi`, both 1-periodic on every axis.
//!
//! A term is `amp * cos(2π(kx·x + kxi·xi) + phase)` optionally multiplied by further
//! cosine factors, which keeps products such as `sin(2πx)·sin(2πξ)` readable in configs.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::grid::Vec2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrigFactor {
    #[serde(default)]
    pub kx: Vec<i32>,
    #[serde(default)]
    pub kxi: Vec<i32>,
    #[serde(default)]
    pub phase: f64,
}

impl TrigFactor {
    /// `cos(2π(kx·x + kxi·xi))`.
    pub fn cos(kx: &[i32], kxi: &[i32]) -> Self {
        Self { kx: kx.to_vec(), kxi: kxi.to_vec(), phase: 0.0 }
    }

    /// `sin(2π(kx·x + kxi·xi))`.
    pub fn sin(kx: &[i32], kxi: &[i32]) -> Self {
        Self { kx: kx.to_vec(), kxi: kxi.to_vec(), phase: -PI / 2.0 }
    }

    #[inline]
    fn arg(&self, x: &Vec2, xi: &Vec2) -> f64 {
        let mut s = 0.0;
        for (k, v) in self.kx.iter().enumerate() {
            s += *v as f64 * x[k];
        }
        for (k, v) in self.kxi.iter().enumerate() {
            s += *v as f64 * xi[k];
        }
        2.0 * PI * s + self.phase
    }

    fn freq_norm(v: &[i32]) -> f64 {
        v.iter().map(|k| (*k as f64).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrigTerm {
    pub amp: f64,
    #[serde(flatten)]
    pub head: TrigFactor,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub times: Vec<TrigFactor>,
}

impl TrigTerm {
    #[inline]
    fn eval(&self, x: &Vec2, xi: &Vec2) -> f64 {
        let mut v = self.amp * self.head.arg(x, xi).cos();
        for f in &self.times {
            v *= f.arg(x, xi).cos();
        }
        v
    }

    fn factors(&self) -> impl Iterator<Item = &TrigFactor> {
        std::iter::once(&self.head).chain(self.times.iter())
    }
}

/// `constant + Σ terms`, a bounded smooth function of `(x, xi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrigSeries {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

impl TrigSeries {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: Vec::new() }
    }

    /// Adds `amp * cos(2π(kx·x + kxi·xi) + phase)`.
    pub fn with_cos(mut self, amp: f64, kx: &[i32], kxi: &[i32], phase: f64) -> Self {
        self.terms.push(TrigTerm {
            amp,
            head: TrigFactor { kx: kx.to_vec(), kxi: kxi.to_vec(), phase },
            times: Vec::new(),
        });
        self
    }

    /// Adds `amp * sin(2π(kx·x + kxi·xi))`.
    pub fn with_sin(self, amp: f64, kx: &[i32], kxi: &[i32]) -> Self {
        self.with_cos(amp, kx, kxi, -PI / 2.0)
    }

    /// Adds a product of cosine factors `amp * Π cos(2π(kx·x + kxi·xi) + phase)`.
    pub fn with_product(mut self, amp: f64, factors: Vec<TrigFactor>) -> Self {
        let mut it = factors.into_iter();
        let head = it.next().unwrap_or_default();
        self.terms.push(TrigTerm { amp, head, times: it.collect() });
        self
    }

    #[inline]
    pub fn eval(&self, x: &Vec2, xi: &Vec2) -> f64 {
        self.constant + self.terms.iter().map(|t| t.eval(x, xi)).sum::<f64>()
    }

    /// Upper bound on the sup norm.
    pub fn sup_bound(&self) -> f64 {
        self.constant.abs() + self.terms.iter().map(|t| t.amp.abs()).sum::<f64>()
    }

    /// Lower bound on the infimum.
    pub fn inf_bound(&self) -> f64 {
        self.constant - self.terms.iter().map(|t| t.amp.abs()).sum::<f64>()
    }

    /// Lipschitz bound in `x` (uniform in `xi`).
    pub fn lipschitz_x(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.amp.abs() * 2.0 * PI * t.factors().map(|f| TrigFactor::freq_norm(&f.kx)).sum::<f64>())
            .sum()
    }

    /// Lipschitz bound in `xi` (uniform in `x`).
    pub fn lipschitz_xi(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.amp.abs() * 2.0 * PI * t.factors().map(|f| TrigFactor::freq_norm(&f.kxi)).sum::<f64>())
            .sum()
    }

    /// True when no term depends on `xi`.
    pub fn is_xi_independent(&self) -> bool {
        self.terms.iter().all(|t| t.factors().all(|f| f.kxi.iter().all(|k| *k == 0)))
    }

    pub fn is_x_independent(&self) -> bool {
        self.terms.iter().all(|t| t.factors().all(|f| f.kx.iter().all(|k| *k == 0)))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            constant: self.constant * s,
            terms: self.terms.iter().map(|t| TrigTerm { amp: t.amp * s, ..t.clone() }).collect(),
        }
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self { constant: self.constant + c, ..self.clone() }
    }
}
