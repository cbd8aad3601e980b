//! Leading eigenpairs of a symmetric operator.
//!
//! Dense decomposition for small problems; above the threshold a Lanczos
//! iteration with full reorthogonalization that grows its Krylov basis until
//! every requested Ritz pair has a true residual below tolerance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed;

pub const DENSE_EIGEN_MAX_N: usize = 512;
pub const LANCZOS_TOL: f64 = 1e-8;

/// Sparse symmetric matrix in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricCsr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SymmetricCsr {
    /// Builds from `(row, col, value)` triplets already sorted by row.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        SymmetricCsr { n, row_ptr, cols, vals }
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[p] * x[self.cols[p]];
            }
            out[i] = acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.cols[p])] = self.vals[p];
            }
        }
        m
    }
}

/// Eigenvalues in descending order with matching eigenvector columns (`n x k`).
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

fn largest_from_dense(m: DMatrix<f64>, k: usize) -> EigenPairs {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut vectors = Array2::zeros((n, k));
    let mut values = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        values.push(eig.eigenvalues[idx]);
        for r in 0..n {
            vectors[[r, c]] = eig.eigenvectors[(r, idx)];
        }
    }
    EigenPairs { values, vectors }
}

/// The `k` algebraically largest eigenpairs.
pub fn largest_eigenpairs(m: &SymmetricCsr, k: usize, seed_value: u64) -> Result<EigenPairs> {
    if k == 0 || k > m.n {
        return Err(Error::InvalidParameter(format!(
            "cannot extract {k} eigenpairs from a {0}x{0} matrix",
            m.n
        )));
    }
    if m.n <= DENSE_EIGEN_MAX_N {
        return Ok(largest_from_dense(m.to_dense(), k));
    }
    lanczos_largest(m, k, seed_value, LANCZOS_TOL)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    orthogonalize2(v, basis, &[]);
}

/// Two full Gram-Schmidt passes over both sets keep `v` orthogonal to each to
/// machine precision.
fn orthogonalize2(v: &mut [f64], a: &[Vec<f64>], b: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in a.iter().chain(b) {
            let c = dot(v, q);
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
    }
}

fn random_unit(n: usize, basis: &[Vec<f64>], rng: &mut seed::Rng) -> Option<Vec<f64>> {
    for _ in 0..8 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        orthogonalize(&mut v, basis);
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            return Some(v);
        }
    }
    None
}

/// Lanczos with full reorthogonalization and locking.
///
/// A single Krylov sequence sees only one copy of a repeated eigenvalue, so
/// converged pairs are locked and a verification run on their orthogonal
/// complement looks for anything larger than the current k-th value; found
/// pairs are locked too and the check repeats.
pub fn lanczos_largest(m: &SymmetricCsr, k: usize, seed_value: u64, tol: f64) -> Result<EigenPairs> {
    let mut rng = seed::rng(seed_value, "lanczos", 0);
    let mut locked: Vec<(f64, Vec<f64>)> = lanczos_run(m, k, &[], &mut rng, tol)?;
    loop {
        locked.sort_by(|a, b| b.0.total_cmp(&a.0));
        if locked.len() >= m.n {
            break;
        }
        let kth = locked[k - 1].0;
        let basis: Vec<Vec<f64>> = locked.iter().map(|(_, v)| v.clone()).collect();
        let probe = lanczos_run(m, 1, &basis, &mut rng, tol)?;
        match probe.into_iter().next() {
            Some((value, vector)) if value > kth + tol => locked.push((value, vector)),
            _ => break,
        }
    }
    let n = m.n;
    let mut vectors = Array2::zeros((n, k));
    let mut values = Vec::with_capacity(k);
    for (c, (value, v)) in locked.iter().take(k).enumerate() {
        values.push(*value);
        for r in 0..n {
            vectors[[r, c]] = v[r];
        }
    }
    Ok(EigenPairs { values, vectors })
}

/// Top `want` eigenpairs of `m` restricted to the complement of `locked`.
fn lanczos_run(
    m: &SymmetricCsr,
    want: usize,
    locked: &[Vec<f64>],
    rng: &mut seed::Rng,
    tol: f64,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = m.n;
    let free = n - locked.len();
    let want = want.min(free);
    if want == 0 {
        return Ok(Vec::new());
    }
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut q = random_unit(n, locked, rng).ok_or(Error::EigenSolver { residual: f64::NAN })?;
    let mut w = vec![0.0; n];
    let mut check_at = (2 * want + 20).min(free);
    let mut last_residual = f64::INFINITY;
    loop {
        m.matvec(&q, &mut w);
        let alpha = dot(&w, &q);
        basis.push(q.clone());
        alphas.push(alpha);
        orthogonalize2(&mut w, locked, &basis);
        let beta = dot(&w, &w).sqrt();
        let dim = basis.len();
        if dim >= check_at || dim == free {
            let ritz = ritz_pairs(&alphas, &betas, &basis, want.min(dim));
            let residual = max_residual(m, &ritz);
            last_residual = residual;
            if residual <= tol {
                return Ok(ritz
                    .values
                    .iter()
                    .enumerate()
                    .map(|(c, &v)| (v, ritz.vectors.column(c).to_vec()))
                    .collect());
            }
            if dim == free {
                return Err(Error::EigenSolver { residual });
            }
            check_at = (check_at + check_at / 2).min(free);
        }
        if beta > 1e-10 {
            q = w.iter().map(|x| x / beta).collect();
            betas.push(beta);
        } else {
            let mut span = locked.to_vec();
            span.extend(basis.iter().cloned());
            match random_unit(n, &span, rng) {
                Some(v) => {
                    q = v;
                    betas.push(0.0);
                }
                None => {
                    return Err(Error::EigenSolver {
                        residual: last_residual,
                    })
                }
            }
        }
    }
}

fn ritz_pairs(alphas: &[f64], betas: &[f64], basis: &[Vec<f64>], k: usize) -> EigenPairs {
    let m = alphas.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let small = largest_from_dense(t, k);
    let n = basis[0].len();
    let mut vectors = Array2::zeros((n, k));
    for c in 0..k {
        for (j, q) in basis.iter().enumerate() {
            let s = small.vectors[[j, c]];
            for r in 0..n {
                vectors[[r, c]] += s * q[r];
            }
        }
    }
    EigenPairs {
        values: small.values,
        vectors,
    }
}

fn max_residual(m: &SymmetricCsr, pairs: &EigenPairs) -> f64 {
    let n = m.n;
    let mut out = vec![0.0; n];
    let mut worst = 0.0f64;
    for (c, &theta) in pairs.values.iter().enumerate() {
        let v: Vec<f64> = pairs.vectors.column(c).to_vec();
        m.matvec(&v, &mut out);
        let r = out
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - theta * b).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(r);
    }
    worst
}

/// Dense helper used by tests and small inputs.
pub fn dense_symmetric(values: &Array2<f64>) -> DVector<f64> {
    let m = DMatrix::from_fn(values.nrows(), values.ncols(), |i, j| values[[i, j]]);
    SymmetricEigen::new(m).eigenvalues
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize) -> SymmetricCsr {
        let rows = (0..n)
            .map(|i| {
                let mut r = Vec::new();
                if i > 0 {
                    r.push((i - 1, 1.0));
                }
                r.push((i, 2.0 + (i % 7) as f64 * 0.1));
                if i + 1 < n {
                    r.push((i + 1, 1.0));
                }
                r
            })
            .collect();
        SymmetricCsr::from_rows(n, rows)
    }

    #[test]
    fn lanczos_matches_dense() {
        let m = path_graph(300);
        let dense = largest_from_dense(m.to_dense(), 5);
        let lz = lanczos_largest(&m, 5, 1, 1e-8).unwrap();
        for (a, b) in dense.values.iter().zip(&lz.values) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn lanczos_handles_repeated_eigenvalues() {
        // Two identical disconnected blocks: every eigenvalue has multiplicity 2.
        let a = path_graph(40);
        let mut rows = Vec::new();
        for off in [0, 40] {
            for i in 0..40 {
                rows.push(
                    (a.row_ptr[i]..a.row_ptr[i + 1])
                        .map(|p| (a.cols[p] + off, a.vals[p]))
                        .collect(),
                );
            }
        }
        let m = SymmetricCsr::from_rows(80, rows);
        let lz = lanczos_largest(&m, 4, 3, 1e-8).unwrap();
        let dense = largest_from_dense(m.to_dense(), 4);
        for (a, b) in dense.values.iter().zip(&lz.values) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
