//! Fixed-capacity dense linear algebra for the tiny systems that show up
//! here: the state dimension is `p + 1` with `p` at most [`MAX_HIDDEN`].

#[allow(unused_imports)] // float methods are inherent once std is linked
use num_traits::Float;
use core::ops::{Deref, DerefMut};


pub const MAX_DIM: usize = 4;
pub const MAX_HIDDEN: usize = MAX_DIM - 1;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Stack-allocated vector of length at most [`MAX_DIM`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vector {
    len: usize,
    data: [f64; MAX_DIM],
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        assert!(len <= MAX_DIM, "dimension {len} exceeds MAX_DIM");
        Vector {
            len,
            data: [0.0; MAX_DIM],
        }
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut v = Vector::zeros(xs.len());
        v.data[..xs.len()].copy_from_slice(xs);
        v
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.data[..self.len]
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data[..self.len]
    }
}

/// Symmetric matrix stored densely (both triangles kept in sync).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: [f64; MAX_DIM * MAX_DIM],
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim <= MAX_DIM, "dimension {dim} exceeds MAX_DIM");
        SymMatrix {
            dim,
            data: [0.0; MAX_DIM * MAX_DIM],
        }
    }

    /// Builds from full rows; the result is symmetrized.
    pub fn from_rows<const N: usize>(rows: [[f64; N]; N]) -> Self {
        let mut m = SymMatrix::zeros(N);
        for i in 0..N {
            for j in 0..N {
                m.data[i * MAX_DIM + j] = rows[i][j];
            }
        }
        m.symmetrized()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * MAX_DIM + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * MAX_DIM + j] = v;
        self.data[j * MAX_DIM + i] = v;
    }

    pub fn symmetrized(mut self) -> Self {
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                let m = 0.5 * (self.get(i, j) + self.get(j, i));
                self.set(i, j, m);
            }
        }
        self
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn is_finite(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| self.get(i, j).is_finite()))
    }

    pub fn add_diagonal(mut self, eps: f64) -> Self {
        for i in 0..self.dim {
            self.data[i * MAX_DIM + i] += eps;
        }
        self
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vector {
        let mut out = Vector::zeros(self.dim);
        for i in 0..self.dim {
            out[i] = (0..self.dim).map(|j| self.get(i, j) * x[j]).sum();
        }
        out
    }

    /// Plain Cholesky factorization; `None` when not positive definite.
    pub fn cholesky(&self) -> Option<Cholesky> {
        let n = self.dim;
        let mut l = [0.0; MAX_DIM * MAX_DIM];
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l[j * MAX_DIM + k] * l[j * MAX_DIM + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let ljj = d.sqrt();
            l[j * MAX_DIM + j] = ljj;
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * MAX_DIM + k] * l[j * MAX_DIM + k];
                }
                l[i * MAX_DIM + j] = s / ljj;
            }
        }
        Some(Cholesky { dim: n, l })
    }

    /// Cholesky after symmetrization, retrying once with a `1e-12 * trace`
    /// diagonal jitter. Returns the factor and whether jitter was needed.
    pub fn cholesky_jittered(&self) -> Option<(Cholesky, bool)> {
        let sym = self.symmetrized();
        if let Some(c) = sym.cholesky() {
            return Some((c, false));
        }
        let tr = sym.trace();
        if !(tr > 0.0) {
            return None;
        }
        sym.add_diagonal(1e-12 * tr).cholesky().map(|c| (c, true))
    }
}

/// Lower-triangular Cholesky factor `L` with `L L^T = A`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cholesky {
    dim: usize,
    l: [f64; MAX_DIM * MAX_DIM],
}

impl Cholesky {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn lower(&self, i: usize, j: usize) -> f64 {
        self.l[i * MAX_DIM + j]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| self.lower(i, i).ln()).sum::<f64>()
    }

    /// Solves `L z = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vector {
        let mut z = Vector::zeros(self.dim);
        for i in 0..self.dim {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lower(i, k) * z[k];
            }
            z[i] = s / self.lower(i, i);
        }
        z
    }

    /// `b^T A^{-1} b`.
    pub fn quad_form(&self, b: &[f64]) -> f64 {
        self.solve_lower(b).iter().map(|z| z * z).sum()
    }

    /// `L z`, used to colour standard normal draws.
    pub fn mul_lower(&self, z: &[f64]) -> Vector {
        let mut out = Vector::zeros(self.dim);
        for i in 0..self.dim {
            out[i] = (0..=i).map(|k| self.lower(i, k) * z[k]).sum();
        }
        out
    }
}

/// Log-density of `N(0, A)` at `diff`, where `chol` factors `A`.
pub fn gaussian_log_density(chol: &Cholesky, diff: &[f64]) -> f64 {
    -0.5 * (chol.dim() as f64 * LN_2PI + chol.log_det() + chol.quad_form(diff))
}

/// Univariate normal log-density.
#[inline]
pub fn normal_log_density(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs() {
        let a = SymMatrix::from_rows([[4.0, 2.0, 0.4], [2.0, 3.0, 0.5], [0.4, 0.5, 1.0]]);
        let c = a.cholesky().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| c.lower(i, k) * c.lower(j, k)).sum();
                assert!((s - a.get(i, j)).abs() < 1e-14);
            }
        }
        // det by cofactor expansion
        let det = 4.0 * (3.0 - 0.25) - 2.0 * (2.0 - 0.2) + 0.4 * (1.0 - 1.2);
        assert!((c.log_det() - det.ln()).abs() < 1e-13);
    }

    #[test]
    fn quad_form_matches_explicit_inverse() {
        let a = SymMatrix::from_rows([[2.0, 0.5], [0.5, 1.0]]);
        let c = a.cholesky().unwrap();
        let b = [0.3, -1.2];
        let det = 2.0 - 0.25;
        let inv = [[1.0 / det, -0.5 / det], [-0.5 / det, 2.0 / det]];
        let q = b[0] * (inv[0][0] * b[0] + inv[0][1] * b[1]) + b[1] * (inv[1][0] * b[0] + inv[1][1] * b[1]);
        assert!((c.quad_form(&b) - q).abs() < 1e-14);
    }

    #[test]
    fn not_positive_definite() {
        let a = SymMatrix::from_rows([[1.0, 2.0], [2.0, 1.0]]);
        assert!(a.cholesky().is_none());
        assert!(a.cholesky_jittered().is_none());
    }

    #[test]
    fn jitter_rescues_rounding_level_singularity() {
        let a = SymMatrix::from_rows([[1.0, 1.0], [1.0, 1.0]]);
        let (_, jittered) = a.cholesky_jittered().unwrap();
        assert!(jittered);
    }
}
