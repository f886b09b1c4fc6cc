//! Uniform periodic grids on the unit torus and the grid functions that live on them.
//!
//! Every solver in the crate works on a [`TorusGrid`] with `n` points per axis and
//! spacing `1/n`. Grid functions are immutable snapshots; operations build new ones.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// A point or vector in at most two dimensions. Unused components are zero.
pub type Vec2 = [f64; 2];

/// Uniform grid on the torus `[0,1)^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dim must be 1 or 2, got {dim}")));
        }
        if n < 8 {
            return Err(Error::InvalidGrid(format!("need at least 8 points per axis, got {n}")));
        }
        Ok(Self { dim, n })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Grid spacing, always `1/n`.
    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Number of nodes, `n^dim`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Multi-index of a linear node index (row-major, axis 0 slowest).
    #[inline]
    pub fn multi_index(&self, i: usize) -> [usize; 2] {
        if self.dim == 1 {
            [i, 0]
        } else {
            [i / self.n, i % self.n]
        }
    }

    #[inline]
    pub fn linear_index(&self, idx: [usize; 2]) -> usize {
        if self.dim == 1 {
            idx[0]
        } else {
            idx[0] * self.n + idx[1]
        }
    }

    /// Node reached from `i` by a signed integer offset, wrapping on every axis.
    #[inline]
    pub fn shift(&self, i: usize, offset: [i64; 2]) -> usize {
        let n = self.n as i64;
        let m = self.multi_index(i);
        let a = (m[0] as i64 + offset[0]).rem_euclid(n) as usize;
        if self.dim == 1 {
            a
        } else {
            let b = (m[1] as i64 + offset[1]).rem_euclid(n) as usize;
            a * self.n + b
        }
    }

    /// Coordinates of node `i` in `[0,1)^dim`.
    #[inline]
    pub fn point(&self, i: usize) -> Vec2 {
        let m = self.multi_index(i);
        let h = self.h();
        if self.dim == 1 {
            [m[0] as f64 * h, 0.0]
        } else {
            [m[0] as f64 * h, m[1] as f64 * h]
        }
    }

    /// Index of the node nearest to a point (after wrapping).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let n = self.n as f64;
        let mut idx = [0usize; 2];
        for (k, slot) in idx.iter_mut().enumerate().take(self.dim) {
            let v = wrap_unit(x[k]) * n;
            *slot = (v.round() as usize) % self.n;
        }
        self.linear_index(idx)
    }

    pub fn ensure_same(&self, other: &TorusGrid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "dim={} n={} vs dim={} n={}",
                self.dim, self.n, other.dim, other.n
            )));
        }
        Ok(())
    }
}

/// Wrap a coordinate into `[0,1)`.
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Periodic (minimum image) distance between two torus points.
pub fn torus_distance(a: &[f64], b: &[f64], dim: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..dim {
        let d = wrap_unit(a[k] - b[k]);
        let d = d.min(1.0 - d);
        s += d * d;
    }
    s.sqrt()
}

/// Real-valued function sampled at the nodes of a [`TorusGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(Vec2) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self::new(grid, values)
    }

    #[inline]
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise `alpha*self + beta*other`.
    pub fn axpby(&self, alpha: f64, other: &GridFunction, beta: f64) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Self::new(
            self.grid,
            self.values.iter().zip(&other.values).map(|(a, b)| alpha * a + beta * b).collect(),
        )
    }

    /// Periodic multilinear interpolation; exact at nodes.
    pub fn sample_at(&self, point: &[f64]) -> f64 {
        let n = self.grid.n;
        let nf = n as f64;
        if self.grid.dim == 1 {
            let s = wrap_unit(point[0]) * nf;
            let i0 = (s.floor() as usize) % n;
            let t = s - s.floor();
            if t == 0.0 {
                return self.values[i0];
            }
            let i1 = (i0 + 1) % n;
            (1.0 - t) * self.values[i0] + t * self.values[i1]
        } else {
            let s0 = wrap_unit(point[0]) * nf;
            let s1 = wrap_unit(point[1]) * nf;
            let a0 = (s0.floor() as usize) % n;
            let b0 = (s1.floor() as usize) % n;
            let t = s0 - s0.floor();
            let u = s1 - s1.floor();
            let a1 = (a0 + 1) % n;
            let b1 = (b0 + 1) % n;
            let v = |a: usize, b: usize| self.values[a * n + b];
            (1.0 - t) * (1.0 - u) * v(a0, b0)
                + t * (1.0 - u) * v(a1, b0)
                + (1.0 - t) * u * v(a0, b1)
                + t * u * v(a1, b1)
        }
    }

    /// One-sided differences chosen against the sign of `drift` on each axis:
    /// backward where the drift component is positive, forward where it is
    /// negative, centered where it is exactly zero.
    pub fn upwind_gradient(&self, drift: &[Vec2]) -> Result<Vec<Vec2>> {
        if drift.len() != self.values.len() {
            return Err(Error::GridMismatch(format!(
                "drift has {} entries for a grid of {} nodes",
                drift.len(),
                self.values.len()
            )));
        }
        Ok((0..self.values.len()).map(|i| self.upwind_gradient_at(i, drift[i])).collect())
    }

    #[inline]
    pub fn upwind_gradient_at(&self, i: usize, drift: Vec2) -> Vec2 {
        let h = self.grid.h();
        let mut g = [0.0; 2];
        for (k, gk) in g.iter_mut().enumerate().take(self.grid.dim) {
            let mut e = [0i64; 2];
            e[k] = 1;
            let fwd = self.values[self.grid.shift(i, e)];
            e[k] = -1;
            let bwd = self.values[self.grid.shift(i, e)];
            let c = self.values[i];
            *gk = if drift[k] > 0.0 {
                (c - bwd) / h
            } else if drift[k] < 0.0 {
                (fwd - c) / h
            } else {
                (fwd - bwd) / (2.0 * h)
            };
        }
        g
    }

    /// Forward and backward differences at node `i`, per axis.
    pub fn one_sided_differences(&self, i: usize) -> (Vec2, Vec2) {
        let h = self.grid.h();
        let mut fwd = [0.0; 2];
        let mut bwd = [0.0; 2];
        for k in 0..self.grid.dim {
            let mut e = [0i64; 2];
            e[k] = 1;
            let up = self.values[self.grid.shift(i, e)];
            e[k] = -1;
            let dn = self.values[self.grid.shift(i, e)];
            fwd[k] = (up - self.values[i]) / h;
            bwd[k] = (self.values[i] - dn) / h;
        }
        (fwd, bwd)
    }

    pub fn centered_gradient(&self, i: usize) -> Vec2 {
        self.upwind_gradient_at(i, [0.0, 0.0])
    }

    /// Matrix of centered second differences at node `i`.
    pub fn second_differences(&self, i: usize) -> [[f64; 2]; 2] {
        let h2 = self.grid.h() * self.grid.h();
        let v = |o: [i64; 2]| self.values[self.grid.shift(i, o)];
        let c = self.values[i];
        let mut m = [[0.0; 2]; 2];
        m[0][0] = (v([1, 0]) - 2.0 * c + v([-1, 0])) / h2;
        if self.grid.dim == 2 {
            m[1][1] = (v([0, 1]) - 2.0 * c + v([0, -1])) / h2;
            let cross = (v([1, 1]) - v([1, -1]) - v([-1, 1]) + v([-1, -1])) / (4.0 * h2);
            m[0][1] = cross;
            m[1][0] = cross;
        }
        m
    }

    /// Maximum over nearest-neighbour pairs of `|difference| / h`, wrap included.
    pub fn lipschitz_seminorm(&self) -> f64 {
        let h = self.grid.h();
        let mut best: f64 = 0.0;
        for i in 0..self.values.len() {
            for k in 0..self.grid.dim {
                let mut e = [0i64; 2];
                e[k] = 1;
                let j = self.grid.shift(i, e);
                best = best.max((self.values[j] - self.values[i]).abs() / h);
            }
        }
        best
    }

    /// Writes `index_0[,index_1],value`, one row per node in row-major order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        if self.grid.dim == 1 {
            wtr.write_record(["index_0", "value"])?;
        } else {
            wtr.write_record(["index_0", "index_1", "value"])?;
        }
        for (i, v) in self.values.iter().enumerate() {
            let m = self.grid.multi_index(i);
            let val = format!("{v:.17e}");
            if self.grid.dim == 1 {
                wtr.write_record([m[0].to_string(), val])?;
            } else {
                wtr.write_record([m[0].to_string(), m[1].to_string(), val])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(grid: TorusGrid, r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut values = vec![f64::NAN; grid.len()];
        let mut seen = 0usize;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != grid.dim() + 1 {
                return Err(Error::Config(format!("expected {} columns, got {}", grid.dim() + 1, rec.len())));
            }
            let parse_idx = |s: &str| -> Result<usize> {
                let v: usize = s.trim().parse().map_err(|_| Error::Config(format!("bad index {s:?}")))?;
                if v >= grid.n() {
                    return Err(Error::Config(format!("index {v} out of range")));
                }
                Ok(v)
            };
            let mut idx = [0usize; 2];
            for (k, slot) in idx.iter_mut().enumerate().take(grid.dim()) {
                *slot = parse_idx(&rec[k])?;
            }
            let v: f64 = rec[grid.dim()]
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value {:?}", &rec[grid.dim()])))?;
            values[grid.linear_index(idx)] = v;
            seen += 1;
        }
        if seen != grid.len() {
            return Err(Error::Config(format!("expected {} rows, got {seen}", grid.len())));
        }
        Self::new(grid, values)
    }
}

/// Maximum over `points` of `|f - g|` evaluated by interpolation.
pub fn sup_norm_diff(f: &GridFunction, g: &GridFunction, points: &[Vec2]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Domain("sup_norm_diff needs at least one sample point".into()));
    }
    Ok(points
        .iter()
        .map(|p| (f.sample_at(p) - g.sample_at(p)).abs())
        .fold(0.0, f64::max))
}

/// Uniform lattice with `per_axis` points per axis on `[0,1)^dim`.
pub fn sample_lattice(dim: usize, per_axis: usize) -> Vec<Vec2> {
    let h = 1.0 / per_axis as f64;
    if dim == 1 {
        (0..per_axis).map(|i| [i as f64 * h, 0.0]).collect()
    } else {
        (0..per_axis * per_axis)
            .map(|i| [(i / per_axis) as f64 * h, (i % per_axis) as f64 * h])
            .collect()
    }
}
