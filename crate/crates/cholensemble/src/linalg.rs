//! Dense symmetric linear algebra and permutation primitives.
//!
//! Plain `Vec<f64>` storage sized for covariance matrices with at most a few
//! hundred rows; no external backend. All functions are pure and the types
//! are immutable-after-construction in practice, so values can be shared
//! freely across threads.

use crate::{invalid, Error, Result};

/// Symmetric matrix with full row-major storage; writes mirror both
/// triangles so `get(i, j) == get(j, i)` holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> SymMatrix {
        assert!(dim >= 1, "dimension must be at least 1");
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> SymMatrix {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds from `f(i, j)`, evaluated only for `i <= j` and mirrored.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> SymMatrix {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    /// Validates squareness and exact symmetry of `rows`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<SymMatrix> {
        let dim = rows.len();
        if dim == 0 {
            return Err(invalid("matrix must have at least one row"));
        }
        let mut m = SymMatrix::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(invalid(format!(
                    "row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            m.data[i * dim..(i + 1) * dim].copy_from_slice(row);
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if m.data[i * dim + j] != m.data[j * dim + i] {
                    return Err(invalid(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major view of the full storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs_diag(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.get(i, i).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += c * other` entrywise.
    pub fn add_scaled(&mut self, c: f64, other: &SymMatrix) {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn add_diagonal(&mut self, c: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += c;
        }
    }

    /// Entrywise difference `self - other`.
    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        if self.dim != other.dim {
            return Err(invalid(format!(
                "dimension mismatch: {} vs {}",
                self.dim, other.dim
            )));
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim, "dimension mismatch");
        (0..self.dim)
            .map(|i| {
                let row = self.row(i);
                row.iter().zip(v).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// `v' * self * v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        self.mul_vec(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

/// Reordering of `0..len`; position `k` of the permuted list holds original
/// index `order()[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    /// Validates that `order` is a bijection on `0..order.len()`.
    pub fn new(order: Vec<usize>) -> Result<Permutation> {
        let p = order.len();
        if p == 0 {
            return Err(invalid("permutation must have at least one element"));
        }
        let mut seen = vec![false; p];
        for &k in &order {
            if k >= p || seen[k] {
                return Err(invalid(format!("order is not a bijection on 0..{p}")));
            }
            seen[k] = true;
        }
        Ok(Permutation { order })
    }

    pub fn identity(p: usize) -> Permutation {
        Permutation {
            order: (0..p).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Inverse mapping: `inverse().order()[original] == position`.
    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0usize; self.order.len()];
        for (pos, &orig) in self.order.iter().enumerate() {
            inv[orig] = pos;
        }
        Permutation { order: inv }
    }
}

/// Relabels `m` from permuted positions back to original indices:
/// `out[perm.order[a]][perm.order[b]] = m[a][b]`. Pure index relabeling,
/// no arithmetic.
pub fn conjugate(m: &SymMatrix, perm: &Permutation) -> Result<SymMatrix> {
    if m.dim() != perm.len() {
        return Err(invalid(format!(
            "matrix dim {} does not match permutation length {}",
            m.dim(),
            perm.len()
        )));
    }
    let order = perm.order();
    let mut out = SymMatrix::zeros(m.dim());
    for a in 0..m.dim() {
        for b in 0..m.dim() {
            out.data[order[a] * m.dim + order[b]] = m.get(a, b);
        }
    }
    Ok(out)
}

/// Eigendecomposition of a symmetric matrix; `values` sorted nonincreasing,
/// eigenvector `j` stored contiguously in `vectors[j*dim..(j+1)*dim]`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    dim: usize,
    values: Vec<f64>,
    vectors: Vec<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vector(&self, j: usize) -> &[f64] {
        &self.vectors[j * self.dim..(j + 1) * self.dim]
    }

    pub fn largest(&self) -> f64 {
        self.values[0]
    }

    pub fn smallest(&self) -> f64 {
        self.values[self.dim - 1]
    }

    /// `V * diag(values) * V'`, for reconstruction checks.
    pub fn reconstruct(&self) -> SymMatrix {
        let p = self.dim;
        SymMatrix::from_fn(p, |i, j| {
            (0..p)
                .map(|k| self.values[k] * self.vectors[k * p + i] * self.vectors[k * p + j])
                .sum()
        })
    }
}

const JACOBI_MAX_SWEEPS: usize = 64;

/// Cyclic Jacobi eigendecomposition. Quadratically convergent for symmetric
/// input; a handful of sweeps suffices at the dimensions used here.
pub fn sym_eigen(m: &SymMatrix) -> Result<EigenDecomposition> {
    if !m.is_finite() {
        return Err(invalid("matrix contains a non-finite value"));
    }
    let p = m.dim();
    let mut a = m.data.clone();
    let mut v = vec![0.0; p * p];
    for i in 0..p {
        v[i * p + i] = 1.0;
    }

    let frob = m.frobenius_norm();
    let tol = 1e-14 * (1.0 + frob);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = {
            let mut s = 0.0;
            for i in 0..p {
                for j in (i + 1)..p {
                    s += 2.0 * a[i * p + j] * a[i * p + j];
                }
            }
            s.sqrt()
        };
        if off <= tol {
            converged = true;
            break;
        }
        for i in 0..p {
            for j in (i + 1)..p {
                let apq = a[i * p + j];
                if apq == 0.0 {
                    continue;
                }
                let app = a[i * p + i];
                let aqq = a[j * p + j];
                // Rotation angle from the standard two-sided Jacobi formulas.
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..p {
                    let aik = a[i * p + k];
                    let ajk = a[j * p + k];
                    a[i * p + k] = c * aik - s * ajk;
                    a[j * p + k] = s * aik + c * ajk;
                }
                for k in 0..p {
                    let aki = a[k * p + i];
                    let akj = a[k * p + j];
                    a[k * p + i] = c * aki - s * akj;
                    a[k * p + j] = s * aki + c * akj;
                }
                // Zero the target pair explicitly to keep exact symmetry.
                a[i * p + j] = 0.0;
                a[j * p + i] = 0.0;
                for k in 0..p {
                    let vki = v[k * p + i];
                    let vkj = v[k * p + j];
                    v[k * p + i] = c * vki - s * vkj;
                    v[k * p + j] = s * vki + c * vkj;
                }
            }
        }
    }
    if !converged {
        // Final check: accept if the remaining off-diagonal mass is small.
        let mut off = 0.0;
        for i in 0..p {
            for j in (i + 1)..p {
                off += 2.0 * a[i * p + j] * a[i * p + j];
            }
        }
        if off.sqrt() > 1e-8 * (1.0 + frob) {
            return Err(Error::ConvergenceFailure {
                context: "jacobi eigendecomposition".to_string(),
                residual: off.sqrt(),
                last_iterate: Vec::new(),
            });
        }
    }

    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&x, &y| {
        a[y * p + y]
            .partial_cmp(&a[x * p + x])
            .expect("eigenvalues are finite")
    });
    let values: Vec<f64> = idx.iter().map(|&k| a[k * p + k]).collect();
    let mut vectors = vec![0.0; p * p];
    for (slot, &k) in idx.iter().enumerate() {
        for r in 0..p {
            vectors[slot * p + r] = v[r * p + k];
        }
    }
    Ok(EigenDecomposition {
        dim: p,
        values,
        vectors,
    })
}

/// Unpivoted LDL^T factorization of a positive definite matrix: unit lower
/// triangular `l` (row-major, full storage) and positive pivots `d`.
#[derive(Debug, Clone)]
pub struct LdltFactor {
    dim: usize,
    l: Vec<f64>,
    d: Vec<f64>,
}

impl LdltFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pivots(&self) -> &[f64] {
        &self.d
    }

    pub fn log_det(&self) -> f64 {
        self.d.iter().map(|v| v.ln()).sum()
    }

    /// Solves `(L D L') x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let p = self.dim;
        assert_eq!(b.len(), p, "dimension mismatch");
        for i in 0..p {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * p + k] * b[k];
            }
            b[i] = s;
        }
        for i in 0..p {
            b[i] /= self.d[i];
        }
        for i in (0..p).rev() {
            let mut s = b[i];
            for k in (i + 1)..p {
                s -= self.l[k * p + i] * b[k];
            }
            b[i] = s;
        }
    }

    /// The lower-triangular Cholesky factor `C = L * sqrt(D)`, row-major.
    pub fn cholesky_factor(&self) -> Vec<f64> {
        let p = self.dim;
        let mut c = vec![0.0; p * p];
        for i in 0..p {
            for k in 0..=i {
                c[i * p + k] = self.l[i * p + k] * self.d[k].sqrt();
            }
        }
        c
    }
}

/// Factorization-based positive-definiteness test with pivot tolerance
/// `1e-12 * max|diag|`; failure reports the offending pivot.
pub fn ldlt(m: &SymMatrix) -> Result<LdltFactor> {
    if !m.is_finite() {
        return Err(invalid("matrix contains a non-finite value"));
    }
    let p = m.dim();
    let tol = 1e-12 * m.max_abs_diag();
    let mut l = vec![0.0; p * p];
    let mut d = vec![0.0; p];
    let mut smallest = f64::INFINITY;
    for j in 0..p {
        let mut dj = m.get(j, j);
        for k in 0..j {
            dj -= l[j * p + k] * l[j * p + k] * d[k];
        }
        smallest = smallest.min(dj);
        if !(dj > tol) {
            return Err(Error::NotPositiveDefinite {
                smallest_pivot: smallest,
            });
        }
        d[j] = dj;
        l[j * p + j] = 1.0;
        for i in (j + 1)..p {
            let mut v = m.get(i, j);
            for k in 0..j {
                v -= l[i * p + k] * l[j * p + k] * d[k];
            }
            l[i * p + j] = v / dj;
        }
    }
    Ok(LdltFactor { dim: p, l, d })
}

pub fn is_positive_definite(m: &SymMatrix) -> bool {
    ldlt(m).is_ok()
}

/// `(log|m|, trace(m^-1 s))` through a single LDL^T factorization; no
/// explicit inverse is formed.
pub fn log_det_and_trace_solve(m: &SymMatrix, s: &SymMatrix) -> Result<(f64, f64)> {
    if m.dim() != s.dim() {
        return Err(invalid(format!(
            "dimension mismatch: {} vs {}",
            m.dim(),
            s.dim()
        )));
    }
    let f = ldlt(m)?;
    let p = m.dim();
    let mut trace = 0.0;
    let mut col = vec![0.0; p];
    for j in 0..p {
        for i in 0..p {
            col[i] = s.get(i, j);
        }
        f.solve_in_place(&mut col);
        trace += col[j];
    }
    Ok((f.log_det(), trace))
}

/// Lower-triangular factor `C` with `C C' = m`, for sampling.
pub fn cholesky_factor(m: &SymMatrix) -> Result<Vec<f64>> {
    Ok(ldlt(m)?.cholesky_factor())
}
