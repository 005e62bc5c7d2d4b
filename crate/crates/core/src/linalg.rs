//! Compressed-row symmetric matrices and preconditioned conjugate gradients.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows below this size are multiplied serially.
const PAR_ROWS: usize = 4096;

/// Square matrix in CSR form with sorted column indices. Symmetric matrices
/// are stored in full.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix with the given pattern; rows may list columns in any order
    /// and with repeats.
    pub fn with_pattern(n: usize, mut rows: Vec<Vec<usize>>) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            cols.extend_from_slice(row);
            row_ptr.push(cols.len());
        }
        let values = vec![0.0; cols.len()];
        CsrMatrix { n, row_ptr, cols, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[range.clone()], &self.values[range])
    }

    /// Storage slot of entry `(i, j)`, if it is in the pattern.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.cols[start..self.row_ptr[i + 1]]
            .binary_search(&j)
            .ok()
            .map(|k| start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Adds `v` to entry `(i, j)`, which must be in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside the sparsity pattern"));
        self.values[k] += v;
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let row = |i: usize| -> f64 {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
        };
        if self.n >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        } else {
            y.iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// Largest `|a_ij − a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(move |(&j, &a)| (a - self.get(j, i)).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Matrix Market coordinate text (symmetric, lower triangle).
    pub fn to_matrix_market(&self) -> String {
        let lower: Vec<(usize, usize, f64)> = (0..self.n)
            .flat_map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).filter(move |(&j, _)| j <= i).map(move |(&j, &a)| (i, j, a))
            })
            .collect();
        let mut out = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
        let _ = writeln!(out, "{} {} {}", self.n, self.n, lower.len());
        for (i, j, a) in lower {
            let _ = writeln!(out, "{} {} {:e}", i + 1, j + 1, a);
        }
        out
    }
}

pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(a: &CsrMatrix) -> Result<Jacobi> {
        let inv_diag = a
            .diagonal()
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                if d > 0.0 && d.is_finite() {
                    Ok(1.0 / d)
                } else {
                    Err(Error::Numeric(format!("non-positive diagonal entry {d:e} at row {i}")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Jacobi { inv_diag })
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

/// Incomplete Cholesky with zero fill. Breakdowns are handled by retrying on
/// `A + σ diag(A)` with growing σ.
pub struct IncompleteCholesky {
    /// Lower factor rows (columns < i) and the diagonal.
    lower: CsrMatrix,
    diag: Vec<f64>,
    pub shift: f64,
}

impl IncompleteCholesky {
    pub fn new(a: &CsrMatrix) -> Result<IncompleteCholesky> {
        let n = a.n();
        let pattern: Vec<Vec<usize>> = (0..n)
            .map(|i| a.row(i).0.iter().copied().filter(|&j| j < i).collect())
            .collect();
        let mut shift = 0.0;
        for _ in 0..30 {
            let mut lower = CsrMatrix::with_pattern(n, pattern.clone());
            let mut diag = vec![0.0; n];
            if Self::factor(a, shift, &mut lower, &mut diag) {
                return Ok(IncompleteCholesky { lower, diag, shift });
            }
            shift = if shift == 0.0 { 1e-3 } else { 2.0 * shift };
        }
        Err(Error::Numeric("incomplete Cholesky broke down for every shift".into()))
    }

    fn factor(a: &CsrMatrix, shift: f64, lower: &mut CsrMatrix, diag: &mut [f64]) -> bool {
        for i in 0..a.n() {
            let (cols, vals) = a.row(i);
            let start = lower.row_ptr[i];
            let mut d = 0.0;
            for (&j, &aij) in cols.iter().zip(vals) {
                if j == i {
                    d = aij * (1.0 + shift);
                }
            }
            for k in start..lower.row_ptr[i + 1] {
                let j = lower.cols[k];
                // l_ij = (a_ij − Σ_{m<j} l_im l_jm) / l_jj
                let mut s = a.get(i, j);
                let (ci, vi) = (&lower.cols[start..k], &lower.values[start..k]);
                let (cj, vj) = lower.row(j);
                let (mut p, mut q) = (0, 0);
                while p < ci.len() && q < cj.len() {
                    match ci[p].cmp(&cj[q]) {
                        std::cmp::Ordering::Less => p += 1,
                        std::cmp::Ordering::Greater => q += 1,
                        std::cmp::Ordering::Equal => {
                            s -= vi[p] * vj[q];
                            p += 1;
                            q += 1;
                        }
                    }
                }
                let lij = s / diag[j];
                lower.values[k] = lij;
                d -= lij * lij;
            }
            if !(d > 0.0) || !d.is_finite() {
                return false;
            }
            diag[i] = d.sqrt();
        }
        true
    }
}

impl Preconditioner for IncompleteCholesky {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = self.diag.len();
        for i in 0..n {
            let (c, v) = self.lower.row(i);
            let s: f64 = c.iter().zip(v).map(|(&j, &l)| l * z[j]).sum();
            z[i] = (r[i] - s) / self.diag[i];
        }
        for i in (0..n).rev() {
            z[i] /= self.diag[i];
            let zi = z[i];
            let (c, v) = self.lower.row(i);
            for (&j, &l) in c.iter().zip(v) {
                z[j] -= l * zi;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned CG for SPD `a`, starting from `x`. Stops when
/// `‖b − Ax‖₂ ≤ rtol ‖b‖₂` or after `max_iter` iterations.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    pre: &dyn Preconditioner,
    rtol: f64,
    max_iter: usize,
) -> CgOutcome {
    let n = a.n();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgOutcome { iterations: 0, relative_residual: 0.0, converged: true };
    }
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z = vec![0.0; n];
    pre.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = dot(&r, &r).sqrt() / b_norm;
    let mut it = 0;
    while res > rtol && it < max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        pre.apply(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = dot(&r, &r).sqrt() / b_norm;
        it += 1;
    }
    CgOutcome { iterations: it, relative_residual: res, converged: res <= rtol }
}
