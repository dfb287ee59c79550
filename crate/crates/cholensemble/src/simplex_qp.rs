//! Quadratic programs over the probability simplex:
//!
//! minimize  w'·quad·w + lin'·w   subject to   sum(w) = 1,  w >= 0.
//!
//! The quadratic term carries no 1/2 factor, so gradients are `2·quad·w +
//! lin`. A primal active-set method solves the problem exactly up to
//! round-off; at degenerate optima (singular quad on the optimal face) the
//! minimum-Euclidean-norm optimum is returned as the documented tie-break.

use crate::linalg::{sym_eigen, SymMatrix};
use crate::{check_finite, invalid, Error, Result};

/// Per-index penalty weight for [`SimplexQP::solve_penalized`]; the infinite
/// variant is an explicit exclusion flag, never a large number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Theta {
    Finite(f64),
    Infinite,
}

impl Theta {
    pub fn is_finite(&self) -> bool {
        matches!(self, Theta::Finite(_))
    }
}

/// Solver output: weights on the simplex plus optimality diagnostics.
#[derive(Debug, Clone)]
pub struct WeightVector {
    /// Nonnegative, sums to 1 within 1e-10; off-face entries are exactly 0.
    pub weights: Vec<f64>,
    /// Objective value at `weights`, including any linear penalty term.
    pub objective: f64,
    /// Worst violation of the KKT certificate for the solved problem.
    pub kkt_residual: f64,
}

impl WeightVector {
    /// Uniform weights with zeroed diagnostics (no optimization performed).
    pub fn uniform(m: usize) -> WeightVector {
        WeightVector {
            weights: vec![1.0 / m as f64; m],
            objective: 0.0,
            kkt_residual: 0.0,
        }
    }
}

/// A simplex-constrained quadratic program. Construction measures the
/// smallest eigenvalue of `quad`; a slightly indefinite matrix (floating
/// error on a Gram structure) is ridged to PSD and the ridge recorded.
#[derive(Debug, Clone)]
pub struct SimplexQP {
    quad: SymMatrix,
    lin: Vec<f64>,
    ridge_applied: f64,
}

impl SimplexQP {
    pub fn new(quad: SymMatrix, lin: Vec<f64>) -> Result<SimplexQP> {
        if quad.dim() != lin.len() {
            return Err(invalid(format!(
                "quad is {}x{} but lin has length {}",
                quad.dim(),
                quad.dim(),
                lin.len()
            )));
        }
        if !quad.is_finite() {
            return Err(invalid("quad contains a non-finite value"));
        }
        check_finite(&lin, "lin")?;
        let lambda_min = sym_eigen(&quad)?.smallest();
        let ridge_applied = if lambda_min < 0.0 {
            -lambda_min + 1e-10 * quad.max_abs_diag()
        } else {
            0.0
        };
        Ok(SimplexQP {
            quad,
            lin,
            ridge_applied,
        })
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn quad(&self) -> &SymMatrix {
        &self.quad
    }

    pub fn lin(&self) -> &[f64] {
        &self.lin
    }

    /// Diagonal shift applied internally so the solved quadratic is PSD.
    pub fn ridge_applied(&self) -> f64 {
        self.ridge_applied
    }

    /// Minimizes the program over the full index set.
    pub fn solve(&self) -> Result<WeightVector> {
        let idx: Vec<usize> = (0..self.dim()).collect();
        self.solve_on(&idx, &self.lin)
    }

    /// Minimizes with the extra linear penalty `xi * theta' * w`; indices
    /// with infinite theta are fixed to weight 0 and removed up front.
    ///
    /// On the simplex the L1 penalty `xi * sum(theta_i * |w_i|)` equals this
    /// linear term exactly, because every weight is nonnegative.
    pub fn solve_penalized(&self, theta: &[Theta], xi: f64) -> Result<WeightVector> {
        if theta.len() != self.dim() {
            return Err(invalid(format!(
                "theta has length {}, expected {}",
                theta.len(),
                self.dim()
            )));
        }
        if !(xi >= 0.0 && xi.is_finite()) {
            return Err(invalid(format!(
                "xi must be finite and nonnegative, got {xi}"
            )));
        }
        let mut keep = Vec::new();
        let mut lin_eff = Vec::new();
        for (i, t) in theta.iter().enumerate() {
            match t {
                Theta::Finite(v) => {
                    if !(v.is_finite() && *v >= 0.0) {
                        return Err(invalid(format!("theta[{i}] must be nonnegative, got {v}")));
                    }
                    keep.push(i);
                    lin_eff.push(self.lin[i] + xi * v);
                }
                Theta::Infinite => {}
            }
        }
        if keep.is_empty() {
            return Err(Error::InfeasibleProblem(
                "every index carries an infinite penalty".to_string(),
            ));
        }
        self.solve_on(&keep, &lin_eff)
    }

    /// Active-set solve restricted to `idx`, with effective linear term
    /// `lin_eff` (parallel to `idx`); excluded indices get weight 0.
    fn solve_on(&self, idx: &[usize], lin_eff: &[f64]) -> Result<WeightVector> {
        let m = idx.len();
        let q = |a: usize, b: usize| {
            let v = self.quad.get(idx[a], idx[b]);
            if a == b {
                v + self.ridge_applied
            } else {
                v
            }
        };

        let scale = 1.0
            + lin_eff.iter().map(|v| v.abs()).fold(0.0, f64::max)
            + 2.0 * (self.quad.max_abs() + self.ridge_applied);
        let zero_tol = 1e-13 * scale;
        let kkt_tol = 1e-11 * scale;
        let max_iter = 100 * m.max(1);

        // Start from the interior point; every index free.
        let mut w = vec![1.0 / m as f64; m];
        let mut in_free = vec![true; m];
        let mut free: Vec<usize> = (0..m).collect();

        let mut iterations = 0usize;
        let (w, kkt_residual) = loop {
            iterations += 1;
            if iterations > max_iter {
                let kkt = kkt_residual_on(&q, lin_eff, &w);
                return Err(Error::ConvergenceFailure {
                    context: "active-set simplex qp".to_string(),
                    residual: kkt,
                    last_iterate: scatter(self.dim(), idx, &w),
                });
            }

            let (x, mu) = face_minimum(&q, lin_eff, &free)?;
            let feasible = free.iter().zip(&x).all(|(_, &v)| v >= -zero_tol);
            if feasible {
                for (slot, &j) in free.iter().enumerate() {
                    w[j] = x[slot].max(0.0);
                }
                // Multiplier test for the indices held at zero.
                let grad = gradient(&q, lin_eff, &w);
                let mut worst = 0.0;
                let mut entering = None;
                for j in 0..m {
                    if !in_free[j] {
                        let lambda = grad[j] - mu;
                        if lambda < worst {
                            worst = lambda;
                            entering = Some(j);
                        }
                    }
                }
                match entering {
                    Some(j) if worst < -kkt_tol => {
                        in_free[j] = true;
                        free.push(j);
                        free.sort_unstable();
                    }
                    _ => {
                        let total: f64 = w.iter().sum();
                        for v in &mut w {
                            *v /= total;
                        }
                        let kkt = kkt_residual_on(&q, lin_eff, &w);
                        break (w, kkt);
                    }
                }
            } else {
                // Partial step toward x until the first weight hits zero.
                let mut alpha = 1.0;
                let mut blocker = None;
                for (slot, &j) in free.iter().enumerate() {
                    if x[slot] < -zero_tol {
                        let step = w[j] / (w[j] - x[slot]);
                        if step < alpha {
                            alpha = step;
                            blocker = Some(j);
                        }
                    }
                }
                for (slot, &j) in free.iter().enumerate() {
                    w[j] = (1.0 - alpha) * w[j] + alpha * x[slot];
                    if w[j] < 0.0 {
                        w[j] = 0.0;
                    }
                }
                let j = blocker.expect("infeasible face solution must have a blocker");
                w[j] = 0.0;
                in_free[j] = false;
                free.retain(|&k| k != j);
            }
        };

        let full = scatter(self.dim(), idx, &w);
        // Objective on the original (unridged) quadratic with the effective
        // linear term, penalty included.
        let mut objective = self.quad.quad_form(&full);
        for (slot, &j) in idx.iter().enumerate() {
            objective += lin_eff[slot] * full[j];
        }
        Ok(WeightVector {
            weights: full,
            objective,
            kkt_residual,
        })
    }
}

fn scatter(dim: usize, idx: &[usize], w: &[f64]) -> Vec<f64> {
    let mut full = vec![0.0; dim];
    for (slot, &j) in idx.iter().enumerate() {
        full[j] = w[slot];
    }
    full
}

fn gradient(q: &impl Fn(usize, usize) -> f64, lin: &[f64], w: &[f64]) -> Vec<f64> {
    let m = w.len();
    (0..m)
        .map(|i| {
            let mut g = lin[i];
            for j in 0..m {
                g += 2.0 * q(i, j) * w[j];
            }
            g
        })
        .collect()
}

/// Worst KKT violation at `w`: stationarity `grad_i = mu` on the support,
/// `grad_i >= mu` off it, plus the simplex-sum defect. The multiplier is
/// estimated as the support average of the gradient.
fn kkt_residual_on(q: &impl Fn(usize, usize) -> f64, lin: &[f64], w: &[f64]) -> f64 {
    let grad = gradient(q, lin, w);
    let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    if support.is_empty() {
        return f64::INFINITY;
    }
    let mu = support.iter().map(|&i| grad[i]).sum::<f64>() / support.len() as f64;
    let mut worst: f64 = (w.iter().sum::<f64>() - 1.0).abs();
    for i in 0..w.len() {
        let v = if w[i] > 0.0 {
            (grad[i] - mu).abs()
        } else {
            (mu - grad[i]).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Equality-constrained minimum on a face: minimize over the free indices
/// subject to their sum being 1. Returns the face solution and the sum
/// constraint's multiplier. A rank-deficient KKT system falls back to the
/// eigen-pseudoinverse, which yields the minimum-norm solution.
fn face_minimum(
    q: &impl Fn(usize, usize) -> f64,
    lin: &[f64],
    free: &[usize],
) -> Result<(Vec<f64>, f64)> {
    let f = free.len();
    let n = f + 1;
    let mut k = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for a in 0..f {
        for b in 0..f {
            k[a * n + b] = 2.0 * q(free[a], free[b]);
        }
        k[a * n + f] = 1.0;
        k[f * n + a] = 1.0;
        rhs[a] = -lin[free[a]];
    }
    rhs[f] = 1.0;

    if let Some(sol) = lu_solve(&k, &rhs) {
        // Accept only a numerically clean solve.
        let mut resid: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for a in 0..n {
            let mut s = -rhs[a];
            for b in 0..n {
                s += k[a * n + b] * sol[b];
                scale = scale.max(k[a * n + b].abs() * sol[b].abs());
            }
            resid = resid.max(s.abs());
        }
        if resid <= 1e-9 * scale {
            // The assembled system solves 2Qx + t·1 = -c, so the true
            // stationarity multiplier (2Qx + c = mu·1) is -t.
            let (x, t) = sol.split_at(f);
            return Ok((x.to_vec(), -t[0]));
        }
    }

    // Min-norm solution of the symmetric KKT system via eigendecomposition.
    let km = SymMatrix::from_fn(n, |i, j| k[i * n + j]);
    let e = sym_eigen(&km)?;
    let cutoff = 1e-12 * e.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut sol = vec![0.0; n];
    for t in 0..n {
        let lam = e.values()[t];
        if lam.abs() <= cutoff {
            continue;
        }
        let vt = e.vector(t);
        let coef: f64 = vt.iter().zip(&rhs).map(|(a, b)| a * b).sum::<f64>() / lam;
        for (s, v) in sol.iter_mut().zip(vt) {
            *s += coef * v;
        }
    }
    let (x, t) = sol.split_at(f);
    Ok((x.to_vec(), -t[0]))
}

/// Dense LU solve with partial pivoting; `None` on a numerically singular
/// pivot.
fn lu_solve(k: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    let mut a = k.to_vec();
    let mut x = rhs.to_vec();
    let norm = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let tol = 1e-13 * (1.0 + norm);
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (piv_row, piv_val) = (col..n)
            .map(|r| (r, a[perm[r] * n + col].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).expect("finite pivots"))?;
        if piv_val <= tol {
            return None;
        }
        perm.swap(col, piv_row);
        let prow = perm[col];
        for r in (col + 1)..n {
            let row = perm[r];
            let factor = a[row * n + col] / a[prow * n + col];
            a[row * n + col] = factor;
            for c in (col + 1)..n {
                a[row * n + c] -= factor * a[prow * n + c];
            }
            x[row] -= factor * x[prow];
        }
    }
    let mut out = vec![0.0; n];
    for col in (0..n).rev() {
        let row = perm[col];
        let mut s = x[row];
        for c in (col + 1)..n {
            s -= a[row * n + c] * out[c];
        }
        out[col] = s / a[row * n + col];
    }
    Some(out)
}
