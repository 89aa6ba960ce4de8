//! Generic smooth convex program with sparse linear constraints:
//!
//! ```text
//! minimize f(x)  subject to  A x = b,  C x <= d
//! ```
//!
//! Variable bounds are ordinary rows of `C`.

use nalgebra::{DMatrix, DVector};

/// Sparse row `coefs . x (<= or =) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coefs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn new(coefs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { coefs, rhs }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.coefs.iter().map(|&(i, a)| a * x[i]).sum()
    }

    /// Signed residual `coefs . x - rhs`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.dot(x) - self.rhs
    }

    pub fn dense(&self, n: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        for &(i, a) in &self.coefs {
            v[i] += a;
        }
        v
    }
}

pub trait SmoothObjective: Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Adds the Hessian at `x` into `h`.
    fn add_hessian(&self, x: &[f64], h: &mut DMatrix<f64>);
    /// True when the Hessian is identically zero.
    fn is_linear(&self) -> bool;
}

/// `c . x`.
#[derive(Debug, Clone)]
pub struct LinearObjective {
    pub c: Vec<f64>,
}

impl SmoothObjective for LinearObjective {
    fn value(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    fn gradient(&self, _x: &[f64]) -> Vec<f64> {
        self.c.clone()
    }

    fn add_hessian(&self, _x: &[f64], _h: &mut DMatrix<f64>) {}

    fn is_linear(&self) -> bool {
        true
    }
}

pub struct ConvexProgram<'a> {
    pub num_vars: usize,
    pub objective: &'a dyn SmoothObjective,
    pub eq: Vec<LinearRow>,
    pub ineq: Vec<LinearRow>,
}

impl ConvexProgram<'_> {
    /// Largest equality residual and largest inequality excess.
    pub fn infeasibility(&self, x: &[f64]) -> f64 {
        let eq = self
            .eq
            .iter()
            .map(|r| r.residual(x).abs())
            .fold(0.0, f64::max);
        let ineq = self
            .ineq
            .iter()
            .map(|r| r.residual(x).max(0.0))
            .fold(0.0, f64::max);
        eq.max(ineq)
    }

    pub(crate) fn mul_ineq(&self, x: &[f64]) -> Vec<f64> {
        self.ineq.iter().map(|r| r.dot(x)).collect()
    }

    pub(crate) fn mul_eq(&self, x: &[f64]) -> Vec<f64> {
        self.eq.iter().map(|r| r.dot(x)).collect()
    }

    /// `out += sum_i w_i * row_i`.
    pub(crate) fn scatter(rows: &[LinearRow], w: &[f64], out: &mut [f64]) {
        for (row, &wi) in rows.iter().zip(w) {
            if wi == 0.0 {
                continue;
            }
            for &(j, a) in &row.coefs {
                out[j] += a * wi;
            }
        }
    }
}

/// Greedily keeps rows that are linearly independent of the rows kept before
/// them (modified Gram-Schmidt with relative tolerance `tol`).
pub fn independent_rows(rows: &[DVector<f64>], tol: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        let norm = r.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = r / norm;
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v.axpy(-proj, b, 1.0);
            }
        }
        let rem = v.norm();
        if rem > tol {
            basis.push(v / rem);
            keep.push(k);
        }
    }
    keep
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
