//! Covariance factorization through sequential penalized regressions.
//!
//! Under a fixed variable ordering, the covariance of the reordered
//! variables factors as `Sigma = L * diag(D) * L'`: row `j` of the unit
//! lower-triangular `L` holds the coefficients from regressing variable `j`
//! on the residuals of the variables before it, and `D[j]` is the variance
//! of that regression's residual. The regressions are lasso-penalized, which
//! keeps the estimate well conditioned when `p` is close to `n`.
//!
//! The lasso objective is `||y - Z*b||^2 + lambda*||b||_1`. Note there is NO
//! 1/n factor on the residual term; `lambda` here is `2n` times the value
//! used by conventions that average the squared residuals.

use crate::linalg::{ldlt, Permutation, SymMatrix};
use crate::rng::{substream, TAG_FOLDS};
use crate::{check_finite, invalid, Error, Result};
use rand::Rng;

/// Observation matrix with cached column means.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    n: usize,
    p: usize,
    rows: Vec<f64>,
    labels: Vec<String>,
    column_means: Vec<f64>,
}

impl DataMatrix {
    /// Builds from observation rows; labels default to `x1..xp`.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Option<Vec<String>>) -> Result<DataMatrix> {
        let n = rows.len();
        if n < 2 {
            return Err(invalid(format!("need at least 2 observations, got {n}")));
        }
        let p = rows[0].len();
        if p == 0 {
            return Err(invalid("need at least 1 variable"));
        }
        let mut flat = Vec::with_capacity(n * p);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(invalid(format!(
                    "row {i} has {} values, expected {p}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        Self::from_flat(flat, n, p, labels)
    }

    /// Builds from row-major storage.
    pub fn from_flat(
        rows: Vec<f64>,
        n: usize,
        p: usize,
        labels: Option<Vec<String>>,
    ) -> Result<DataMatrix> {
        if n < 2 || p == 0 || rows.len() != n * p {
            return Err(invalid(format!(
                "shape mismatch: {} values for {n}x{p}",
                rows.len()
            )));
        }
        check_finite(&rows, "data")?;
        let labels = match labels {
            Some(l) => {
                if l.len() != p {
                    return Err(invalid(format!("{} labels for {p} variables", l.len())));
                }
                l
            }
            None => (1..=p).map(|j| format!("x{j}")).collect(),
        };
        let mut column_means = vec![0.0; p];
        for i in 0..n {
            for j in 0..p {
                column_means[j] += rows[i * p + j];
            }
        }
        for m in &mut column_means {
            *m /= n as f64;
        }
        Ok(DataMatrix {
            n,
            p,
            rows,
            labels,
            column_means,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn column_means(&self) -> &[f64] {
        &self.column_means
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.rows[i * self.p + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.p..(i + 1) * self.p]
    }

    /// Column `j` with its mean subtracted.
    pub fn centered_column(&self, j: usize) -> Vec<f64> {
        let m = self.column_means[j];
        (0..self.n).map(|i| self.value(i, j) - m).collect()
    }

    /// The first `k` observations as a new matrix (expanding windows).
    pub fn first_rows(&self, k: usize) -> Result<DataMatrix> {
        DataMatrix::from_flat(
            self.rows[..k * self.p].to_vec(),
            k,
            self.p,
            Some(self.labels.clone()),
        )
    }
}

/// Sample covariance with divisor `n`.
pub fn sample_covariance(data: &DataMatrix) -> SymMatrix {
    let cols: Vec<Vec<f64>> = (0..data.p()).map(|j| data.centered_column(j)).collect();
    let n = data.n() as f64;
    SymMatrix::from_fn(data.p(), |i, j| {
        cols[i]
            .iter()
            .zip(&cols[j])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n
    })
}

/// Tolerance floor for the fold fits inside the penalty selection. Fold
/// fits only rank path values by held-out error, so they never need the
/// full configured precision; see `select_lambda`.
const CV_COORD_TOL: f64 = 1e-5;

/// Settings for the penalized regressions.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoConfig {
    /// Number of values on the geometric penalty path.
    pub path_length: usize,
    /// Smallest path value as a fraction of the largest; `None` resolves to
    /// 1e-3 when the design has more rows than columns and 1e-2 otherwise.
    pub lambda_min_ratio: Option<f64>,
    /// Cross-validation folds for the penalty selection.
    pub cv_folds: usize,
    /// Maximum coordinate-descent sweeps per fit.
    pub max_iter: usize,
    /// Stop when the largest coordinate change in a sweep drops below
    /// `coord_tol * (1 + max|y|)`.
    pub coord_tol: f64,
    /// Rescale predictor columns to unit standard deviation internally.
    /// This preconditions the coordinate descent only: per-coordinate
    /// penalties carry the inverse scale, so the optimized objective is
    /// exactly the unscaled one and the flag never changes the optimum.
    pub standardize: bool,
    /// Seed for the cross-validation fold assignment, so the whole pipeline
    /// is replayable.
    pub fold_seed: u64,
}

impl Default for LassoConfig {
    fn default() -> LassoConfig {
        LassoConfig {
            path_length: 100,
            lambda_min_ratio: None,
            cv_folds: 5,
            max_iter: 10_000,
            coord_tol: 1e-7,
            standardize: true,
            fold_seed: 0,
        }
    }
}

impl LassoConfig {
    /// Checks field ranges, returning the first violation as an input error.
    pub fn validate(&self) -> Result<()> {
        if self.path_length < 1 {
            return Err(invalid("path_length must be at least 1"));
        }
        if let Some(r) = self.lambda_min_ratio {
            if !(r > 0.0 && r < 1.0) {
                return Err(invalid(format!(
                    "lambda_min_ratio must be in (0,1), got {r}"
                )));
            }
        }
        if self.cv_folds < 2 {
            return Err(invalid("cv_folds must be at least 2"));
        }
        if !(self.coord_tol > 0.0) {
            return Err(invalid("coord_tol must be positive"));
        }
        Ok(())
    }

    /// `lambda_min_ratio` resolved against a design with `rows` rows and
    /// `cols` columns.
    pub fn resolved_min_ratio(&self, rows: usize, cols: usize) -> f64 {
        self.lambda_min_ratio
            .unwrap_or(if rows > cols { 1e-3 } else { 1e-2 })
    }
}

/// Shared coordinate-descent state in the (optionally) standardized basis.
/// `gram` and `cty` are the scaled `W'W` and `W'y`; `beta_j = gamma_j /
/// scale_j` recovers raw coefficients.
struct CdCore {
    q: usize,
    gram: Vec<f64>,
    cty: Vec<f64>,
    /// 1/s_j multipliers turning the shared lambda into per-coordinate
    /// penalties; exactly compensates the column rescaling.
    pen: Vec<f64>,
    scale: Vec<f64>,
    inactive: Vec<bool>,
    conv_scale: f64,
}

impl CdCore {
    /// Builds from raw cross-products: `gram_raw[a][b] = Z_a' Z_b`,
    /// `cty_raw[a] = Z_a' y`. `scale` comes from the full design even when
    /// the cross-products cover a row subset (pure preconditioning).
    fn from_raw(
        q: usize,
        gram_raw: &[f64],
        cty_raw: &[f64],
        scale: &[f64],
        inactive: &[bool],
        y_inf: f64,
    ) -> CdCore {
        let mut gram = vec![0.0; q * q];
        let mut cty = vec![0.0; q];
        let mut pen = vec![0.0; q];
        for a in 0..q {
            for b in 0..q {
                gram[a * q + b] = gram_raw[a * q + b] / (scale[a] * scale[b]);
            }
            cty[a] = cty_raw[a] / scale[a];
            pen[a] = 1.0 / scale[a];
        }
        CdCore {
            q,
            gram,
            cty,
            pen,
            scale: scale.to_vec(),
            inactive: inactive.to_vec(),
            conv_scale: 1.0 + y_inf,
        }
    }

    fn unscale(&self, gamma: &[f64]) -> Vec<f64> {
        gamma.iter().zip(&self.scale).map(|(g, s)| g / s).collect()
    }

    /// KKT residual of the raw-scale problem at the current state.
    fn kkt_residual(&self, gamma: &[f64], rho: &[f64], lambda: f64) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.q {
            if self.inactive[j] {
                continue;
            }
            // Raw gradient component: 2 Z_j' r = 2 s_j rho_j.
            let g = 2.0 * self.scale[j] * rho[j];
            let v = if gamma[j] == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g - lambda * gamma[j].signum()).abs()
            };
            worst = worst.max(v);
        }
        worst
    }
}

/// One coordinate-descent sweep over `which`; returns the largest
/// coordinate change. `rho` is maintained as `cty - gram * gamma`.
fn cd_sweep(
    core: &CdCore,
    lambda: f64,
    gamma: &mut [f64],
    rho: &mut [f64],
    which: &[usize],
) -> f64 {
    let q = core.q;
    let mut max_delta = 0.0f64;
    for &j in which {
        let gjj = core.gram[j * q + j];
        if gjj <= 0.0 {
            continue;
        }
        let u = rho[j] + gjj * gamma[j];
        let thr = 0.5 * lambda * core.pen[j];
        let new = if u.abs() <= thr {
            0.0
        } else {
            (u - thr.copysign(u)) / gjj
        };
        let delta = new - gamma[j];
        if delta != 0.0 {
            gamma[j] = new;
            let col = &core.gram[j * q..(j + 1) * q];
            for (r, g) in rho.iter_mut().zip(col) {
                *r -= g * delta;
            }
            max_delta = max_delta.max(delta.abs());
        }
    }
    max_delta
}

/// Coordinate descent to the stated tolerance, with support-set inner
/// iterations between full sweeps. `sweeps_used` accumulates across calls so
/// warm-started paths share one budget per fit.
/// Runs full and support sweeps until the largest coordinate change drops
/// below tolerance or the sweep budget runs out. Returns whether it
/// converged; `gamma` and `rho` always hold the last iterate.
fn cd_iterate(
    core: &CdCore,
    lambda: f64,
    gamma: &mut Vec<f64>,
    rho: &mut Vec<f64>,
    max_iter: usize,
    coord_tol: f64,
    sweeps_used: &mut usize,
) -> bool {
    let tol = coord_tol * core.conv_scale;
    let all: Vec<usize> = (0..core.q).filter(|&j| !core.inactive[j]).collect();
    loop {
        *sweeps_used += 1;
        if *sweeps_used > max_iter {
            return false;
        }
        let delta = cd_sweep(core, lambda, gamma, rho, &all);
        if delta < tol {
            return true;
        }
        loop {
            let support: Vec<usize> = all.iter().copied().filter(|&j| gamma[j] != 0.0).collect();
            if support.is_empty() {
                break;
            }
            *sweeps_used += 1;
            if *sweeps_used > max_iter {
                return false;
            }
            if cd_sweep(core, lambda, gamma, rho, &support) < tol {
                break;
            }
        }
    }
}

fn cd_solve(
    core: &CdCore,
    lambda: f64,
    gamma: &mut Vec<f64>,
    rho: &mut Vec<f64>,
    max_iter: usize,
    coord_tol: f64,
    sweeps_used: &mut usize,
) -> Result<()> {
    if cd_iterate(core, lambda, gamma, rho, max_iter, coord_tol, sweeps_used) {
        Ok(())
    } else {
        let beta = core.unscale(gamma);
        Err(Error::ConvergenceFailure {
            context: "lasso coordinate descent".to_string(),
            residual: core.kkt_residual(gamma, rho, lambda),
            last_iterate: beta,
        })
    }
}

/// Raw cross-products over a row subset. `cols` are the design columns.
fn raw_products(y: &[f64], cols: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let q = cols.len();
    let mut gram = vec![0.0; q * q];
    let mut cty = vec![0.0; q];
    for a in 0..q {
        let ca = &cols[a];
        for b in a..q {
            let v: f64 = ca.iter().zip(&cols[b]).map(|(x, z)| x * z).sum();
            gram[a * q + b] = v;
            gram[b * q + a] = v;
        }
        cty[a] = ca.iter().zip(y).map(|(x, z)| x * z).sum();
    }
    (gram, cty)
}

/// Column scales and inactivity flags for the design. A column that is
/// identically zero is inactive (its coefficient stays 0); a constant
/// nonzero column falls back to its RMS as the scale.
fn column_scales(cols: &[Vec<f64>], n: usize, standardize: bool) -> (Vec<f64>, Vec<bool>) {
    let q = cols.len();
    let mut scale = vec![1.0; q];
    let mut inactive = vec![false; q];
    for j in 0..q {
        let col = &cols[j];
        let mean: f64 = col.iter().sum::<f64>() / n as f64;
        let ms: f64 = col.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let rms = ms.sqrt();
        if rms == 0.0 {
            inactive[j] = true;
            continue;
        }
        if standardize {
            let var = (ms - mean * mean).max(0.0);
            let sd = var.sqrt();
            scale[j] = if sd > 1e-8 * rms { sd } else { rms };
        }
    }
    (scale, inactive)
}

fn validate_design(y: &[f64], z: &[Vec<f64>]) -> Result<()> {
    if z.is_empty() {
        return Err(invalid("design must have at least one column"));
    }
    if y.is_empty() {
        return Err(invalid("response must be non-empty"));
    }
    check_finite(y, "response")?;
    for (j, col) in z.iter().enumerate() {
        if col.len() != y.len() {
            return Err(invalid(format!(
                "column {j} has {} rows, expected {}",
                col.len(),
                y.len()
            )));
        }
        check_finite(col, "design column")?;
    }
    Ok(())
}

/// Lasso coefficients for `min ||y - Z*b||^2 + lambda*||b||_1` (no 1/n
/// factor). At `lambda = 0` the normal equations are solved directly when
/// the design allows it; otherwise coordinate descent runs to the
/// scale-aware tolerance from `config`.
pub fn lasso_fit(y: &[f64], z: &[Vec<f64>], lambda: f64, config: &LassoConfig) -> Result<Vec<f64>> {
    validate_design(y, z)?;
    config.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    let n = y.len();
    let q = z.len();
    let (scale, inactive) = column_scales(z, n, config.standardize);
    let (gram_raw, cty_raw) = raw_products(y, z);
    let y_inf = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let core = CdCore::from_raw(q, &gram_raw, &cty_raw, &scale, &inactive, y_inf);

    if lambda == 0.0 {
        if let Some(beta) = least_squares_direct(&core) {
            return Ok(beta);
        }
    }

    let mut gamma = vec![0.0; q];
    let mut rho = core.cty.clone();
    let mut sweeps = 0usize;
    cd_solve(
        &core,
        lambda,
        &mut gamma,
        &mut rho,
        config.max_iter,
        config.coord_tol,
        &mut sweeps,
    )?;
    Ok(core.unscale(&gamma))
}

/// Exact normal-equations solve over the active columns, with one step of
/// iterative refinement; `None` when the Gram matrix is numerically
/// singular (the caller falls back to coordinate descent).
fn least_squares_direct(core: &CdCore) -> Option<Vec<f64>> {
    let act: Vec<usize> = (0..core.q).filter(|&j| !core.inactive[j]).collect();
    if act.is_empty() {
        return Some(vec![0.0; core.q]);
    }
    let g = SymMatrix::from_fn(act.len(), |a, b| core.gram[act[a] * core.q + act[b]]);
    let f = ldlt(&g).ok()?;
    let mut x: Vec<f64> = act.iter().map(|&j| core.cty[j]).collect();
    f.solve_in_place(&mut x);
    // One refinement step tightens the exact-reconstruction guarantee.
    let mut resid: Vec<f64> = act
        .iter()
        .map(|&j| {
            let mut r = core.cty[j];
            for (slot, &k) in act.iter().enumerate() {
                r -= core.gram[j * core.q + k] * x[slot];
            }
            r
        })
        .collect();
    f.solve_in_place(&mut resid);
    for (xi, d) in x.iter_mut().zip(&resid) {
        *xi += d;
    }
    let mut gamma = vec![0.0; core.q];
    for (slot, &j) in act.iter().enumerate() {
        gamma[j] = x[slot];
    }
    Some(core.unscale(&gamma))
}

/// Worst KKT violation of `beta` for the lasso problem: zero coefficients
/// need `|2 Z_j'(y - Z*beta)| <= lambda`, nonzero ones need equality with
/// the matching sign.
pub fn lasso_kkt_residual(y: &[f64], z: &[Vec<f64>], lambda: f64, beta: &[f64]) -> f64 {
    let n = y.len();
    let mut r = y.to_vec();
    for (j, col) in z.iter().enumerate() {
        if beta[j] != 0.0 {
            for i in 0..n {
                r[i] -= col[i] * beta[j];
            }
        }
    }
    let mut worst = 0.0f64;
    for (j, col) in z.iter().enumerate() {
        let g: f64 = 2.0 * col.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        let v = if beta[j] == 0.0 {
            (g.abs() - lambda).max(0.0)
        } else {
            (g - lambda * beta[j].signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Objective value `||y - Z*b||^2 + lambda*||b||_1`.
pub fn lasso_objective(y: &[f64], z: &[Vec<f64>], lambda: f64, beta: &[f64]) -> f64 {
    let n = y.len();
    let mut rss = 0.0;
    for i in 0..n {
        let mut r = y[i];
        for (j, col) in z.iter().enumerate() {
            r -= col[i] * beta[j];
        }
        rss += r * r;
    }
    rss + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Geometric path of `k` values from `lambda_max` down to
/// `lambda_max * ratio`.
fn lambda_path(lambda_max: f64, ratio: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lambda_max];
    }
    (0..k)
        .map(|i| lambda_max * ratio.powf(i as f64 / (k - 1) as f64))
        .collect()
}

/// Shuffled fold assignment (`fold id` per row), reproducible from the seed.
fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, TAG_FOLDS, n as u64);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let mut fold_of = vec![0usize; n];
    let base = n / folds;
    let extra = n % folds;
    let mut pos = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        for &row in &idx[pos..pos + size] {
            fold_of[row] = f;
        }
        pos += size;
    }
    fold_of
}

/// Cross-validated penalty selection over a geometric path from
/// `lambda_max = 2*max|Z'(y - mean(y))|`; ties break toward the larger
/// penalty. Folds are evaluated sequentially (deterministic accumulation).
pub fn select_lambda(y: &[f64], z: &[Vec<f64>], config: &LassoConfig) -> Result<f64> {
    if z.is_empty() {
        return Ok(0.0);
    }
    validate_design(y, z)?;
    config.validate()?;
    let n = y.len();
    let q = z.len();
    if n < config.cv_folds {
        return Err(invalid(format!(
            "need at least {} observations for {}-fold cross-validation, got {n}",
            config.cv_folds, config.cv_folds
        )));
    }

    let y_mean: f64 = y.iter().sum::<f64>() / n as f64;
    let lambda_max = z
        .iter()
        .map(|col| {
            2.0 * col
                .iter()
                .zip(y)
                .map(|(zv, yv)| zv * (yv - y_mean))
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max);
    if lambda_max == 0.0 {
        return Ok(0.0);
    }

    let ratio = config.resolved_min_ratio(n, q);
    let path = lambda_path(lambda_max, ratio, config.path_length);
    let fold_of = fold_assignment(n, config.cv_folds, config.fold_seed);

    let (gram_full, cty_full) = raw_products(y, z);
    let (scale, inactive) = column_scales(z, n, config.standardize);
    let y_inf = y.iter().map(|v| v.abs()).fold(0.0, f64::max);

    let mut sq_err = vec![0.0f64; path.len()];
    for fold in 0..config.cv_folds {
        let val_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        // Training cross-products by downdating the full ones.
        let mut gram = gram_full.clone();
        let mut cty = cty_full.clone();
        for &i in &val_rows {
            for a in 0..q {
                let za = z[a][i];
                cty[a] -= za * y[i];
                for b in 0..q {
                    gram[a * q + b] -= za * z[b][i];
                }
            }
        }
        let core = CdCore::from_raw(q, &gram, &cty, &scale, &inactive, y_inf);
        let sse_zero: f64 = val_rows.iter().map(|&i| y[i] * y[i]).sum();

        let mut gamma = vec![0.0; q];
        let mut rho = core.cty.clone();
        for (t, &lam) in path.iter().enumerate() {
            // Warm start from the previous path point; each point is its own
            // fit, so each gets the full sweep budget. Fold fits only score
            // path values against held-out rows, so they run with the looser
            // of the configured tolerance and CV_COORD_TOL and keep the last
            // iterate when the budget runs out (near-singular training
            // designs can make full-precision descent arbitrarily slow).
            // The final fit at the selected value enforces the configured
            // tolerance and budget.
            let mut sweeps = 0usize;
            cd_iterate(
                &core,
                lam,
                &mut gamma,
                &mut rho,
                config.max_iter,
                config.coord_tol.max(CV_COORD_TOL),
                &mut sweeps,
            );
            if gamma.iter().all(|&g| g == 0.0) {
                sq_err[t] += sse_zero;
            } else {
                let beta = core.unscale(&gamma);
                let support: Vec<usize> = (0..q).filter(|&j| beta[j] != 0.0).collect();
                for &i in &val_rows {
                    let mut pred = 0.0;
                    for &j in &support {
                        pred += z[j][i] * beta[j];
                    }
                    let e = y[i] - pred;
                    sq_err[t] += e * e;
                }
            }
        }
    }

    // First index of the minimum keeps the larger penalty on ties.
    let mut best = 0;
    for t in 1..path.len() {
        if sq_err[t] < sq_err[best] {
            best = t;
        }
    }
    Ok(path[best])
}

/// The factorization `Sigma = L * diag(D) * L'` in the permuted ordering.
#[derive(Debug, Clone)]
pub struct CholeskyFactors {
    dim: usize,
    l: Vec<f64>,
    d: Vec<f64>,
    ordering: Permutation,
}

impl CholeskyFactors {
    /// Builds from explicit parts, validating the unit-lower-triangular
    /// shape and positive variances.
    pub fn new(l_rows: &[Vec<f64>], d: Vec<f64>, ordering: Permutation) -> Result<CholeskyFactors> {
        let p = d.len();
        if l_rows.len() != p || ordering.len() != p || p == 0 {
            return Err(invalid("factor dimensions do not agree"));
        }
        let mut l = vec![0.0; p * p];
        for (i, row) in l_rows.iter().enumerate() {
            if row.len() != p {
                return Err(invalid(format!(
                    "row {i} has {} entries, expected {p}",
                    row.len()
                )));
            }
            if row[i] != 1.0 {
                return Err(invalid(format!("diagonal entry {i} must be exactly 1")));
            }
            for (j, &v) in row.iter().enumerate() {
                if j > i && v != 0.0 {
                    return Err(invalid(format!(
                        "entry ({i},{j}) above the diagonal must be 0"
                    )));
                }
                l[i * p + j] = v;
            }
        }
        check_finite(&l, "L")?;
        for (j, &v) in d.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("D[{j}] must be positive, got {v}")));
            }
        }
        Ok(CholeskyFactors {
            dim: p,
            l,
            d,
            ordering,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn l(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.dim + j]
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn ordering(&self) -> &Permutation {
        &self.ordering
    }

    /// `L * diag(D) * L'` in the permuted ordering; apply
    /// [`crate::linalg::conjugate`] with `ordering` to return to original
    /// labels.
    pub fn reconstruct(&self) -> SymMatrix {
        let p = self.dim;
        SymMatrix::from_fn(p, |i, j| {
            // i <= j here; L is unit lower triangular.
            let mut v = 0.0;
            for k in 0..=i {
                v += self.l[i * p + k] * self.d[k] * self.l[j * p + k];
            }
            v
        })
    }
}

/// Factorization floor: `1e-10 * trace(S) / p` keeps every residual
/// variance strictly positive so reconstructions stay invertible.
fn d_floor_for(cols: &[Vec<f64>], n: usize) -> f64 {
    let p = cols.len();
    let total_var: f64 = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / n as f64)
        .sum();
    // Degenerate all-constant data still gets a positive floor.
    (1e-10 * total_var / p as f64).max(f64::MIN_POSITIVE)
}

/// Sequential-regression factorization of the sample covariance under
/// `ordering`. Columns are centered first; `D[j]` is the mean squared
/// residual (divisor `n`), floored. With `penalized` each regression's
/// penalty comes from [`select_lambda`]; otherwise the fits are plain least
/// squares and the reconstruction reproduces the sample covariance exactly
/// when `n > p`.
pub fn mcd_fit(
    data: &DataMatrix,
    ordering: &Permutation,
    config: &LassoConfig,
    penalized: bool,
) -> Result<CholeskyFactors> {
    let p = data.p();
    if ordering.len() != p {
        return Err(invalid(format!(
            "ordering length {} does not match {} variables",
            ordering.len(),
            p
        )));
    }
    config.validate()?;
    let n = data.n();
    let cols: Vec<Vec<f64>> = ordering
        .order()
        .iter()
        .map(|&orig| data.centered_column(orig))
        .collect();
    let d_floor = d_floor_for(&cols, n);

    let mean_sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / n as f64;

    let mut l = vec![0.0; p * p];
    let mut d = vec![0.0; p];
    l[0] = 1.0;
    d[0] = mean_sq(&cols[0]).max(d_floor);
    let mut residuals: Vec<Vec<f64>> = Vec::with_capacity(p);
    residuals.push(cols[0].clone());

    for j in 1..p {
        let y = &cols[j];
        let z = &residuals[..j];
        let stage = |e: Error| e.in_stage(format!("regression {j} of ordering"));
        let lambda = if penalized {
            select_lambda(y, z, config).map_err(stage)?
        } else {
            0.0
        };
        let beta = lasso_fit(y, z, lambda, config)
            .map_err(|e| e.in_stage(format!("regression {j} of ordering")))?;
        let mut e_j = y.clone();
        for (k, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (ei, zi) in e_j.iter_mut().zip(&residuals[k]) {
                    *ei -= b * zi;
                }
            }
            l[j * p + k] = b;
        }
        l[j * p + j] = 1.0;
        d[j] = mean_sq(&e_j).max(d_floor);
        residuals.push(e_j);
    }

    Ok(CholeskyFactors {
        dim: p,
        l,
        d,
        ordering: ordering.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{conjugate, sym_eigen};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_design(n: usize, q: usize, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<Vec<f64>> = (0..q)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (y, z)
    }

    fn random_data(n: usize, p: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        DataMatrix::from_rows(rows, None).unwrap()
    }

    /// Proximal-gradient (ISTA) oracle run to tight tolerance; independent
    /// of the coordinate-descent implementation.
    fn prox_gradient_oracle(y: &[f64], z: &[Vec<f64>], lambda: f64) -> Vec<f64> {
        let n = y.len();
        let q = z.len();
        let gram = SymMatrix::from_fn(q, |a, b| z[a].iter().zip(&z[b]).map(|(x, w)| x * w).sum());
        let lip = 2.0 * sym_eigen(&gram).unwrap().largest();
        let step = 0.9 / lip;
        let mut beta = vec![0.0; q];
        for _ in 0..500_000 {
            let mut r = y.to_vec();
            for j in 0..q {
                for i in 0..n {
                    r[i] -= z[j][i] * beta[j];
                }
            }
            let mut max_delta = 0.0f64;
            for j in 0..q {
                let grad: f64 = -2.0 * z[j].iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
                let t = beta[j] - step * grad;
                let thr = step * lambda;
                let new = if t.abs() <= thr {
                    0.0
                } else {
                    t - thr.copysign(t)
                };
                max_delta = max_delta.max((new - beta[j]).abs());
                beta[j] = new;
            }
            if max_delta < 1e-14 {
                break;
            }
        }
        beta
    }

    #[test]
    fn data_matrix_validates_and_centers() {
        assert!(DataMatrix::from_rows(vec![vec![1.0]], None).is_err());
        assert!(DataMatrix::from_rows(vec![vec![1.0], vec![f64::NAN]], None).is_err());
        let d = DataMatrix::from_rows(vec![vec![1.0, 10.0], vec![3.0, 20.0]], None).unwrap();
        assert_relative_eq!(d.column_means()[0], 2.0);
        assert_relative_eq!(d.column_means()[1], 15.0);
        assert_eq!(d.labels(), &["x1".to_string(), "x2".to_string()]);
        let c = d.centered_column(1);
        assert_relative_eq!(c[0], -5.0);
        assert_relative_eq!(c[1], 5.0);
    }

    #[test]
    fn sample_covariance_matches_direct_formula() {
        let d = random_data(15, 3, 4);
        let s = sample_covariance(&d);
        for i in 0..3 {
            for j in 0..3 {
                let mut want = 0.0;
                for t in 0..15 {
                    want += (d.value(t, i) - d.column_means()[i])
                        * (d.value(t, j) - d.column_means()[j]);
                }
                want /= 15.0;
                assert_relative_eq!(s.get(i, j), want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn lasso_orthonormal_columns_zero_penalty() {
        // Z has orthonormal columns, so least squares is Z'y.
        let z = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]];
        let y = vec![0.7, -0.3, 0.5, 0.1];
        let beta = lasso_fit(&y, &z, 0.0, &LassoConfig::default()).unwrap();
        assert_relative_eq!(beta[0], 0.7, epsilon = 1e-12);
        assert_relative_eq!(beta[1], -0.3, epsilon = 1e-12);
    }

    #[test]
    fn lasso_full_shrinkage_threshold() {
        let (y, z) = random_design(20, 3, 7);
        let lambda_max = z
            .iter()
            .map(|c| 2.0 * c.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().abs())
            .fold(0.0, f64::max);
        for &lam in &[lambda_max, lambda_max * 1.5] {
            let beta = lasso_fit(&y, &z, lam, &LassoConfig::default()).unwrap();
            assert!(beta.iter().all(|&b| b == 0.0), "beta {beta:?}");
        }
    }

    #[test]
    fn lasso_matches_proximal_gradient_oracle() {
        for seed in 0..5 {
            let (y, z) = random_design(20, 3, 100 + seed);
            let lambda_max = z
                .iter()
                .map(|c| 2.0 * c.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().abs())
                .fold(0.0, f64::max);
            let lambda = 0.3 * lambda_max;
            let ours = lasso_fit(&y, &z, lambda, &LassoConfig::default()).unwrap();
            let oracle = prox_gradient_oracle(&y, &z, lambda);
            let f_ours = lasso_objective(&y, &z, lambda, &ours);
            let f_oracle = lasso_objective(&y, &z, lambda, &oracle);
            assert!(
                (f_ours - f_oracle).abs() <= 1e-6,
                "seed {seed}: {f_ours} vs {f_oracle}"
            );
        }
    }

    #[test]
    fn lasso_satisfies_kkt_conditions() {
        for seed in 0..10 {
            let (y, z) = random_design(25, 4, 200 + seed);
            let lambda_max = z
                .iter()
                .map(|c| 2.0 * c.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().abs())
                .fold(0.0, f64::max);
            for &frac in &[0.0, 0.05, 0.3, 0.9] {
                let lambda = frac * lambda_max;
                let beta = lasso_fit(&y, &z, lambda, &LassoConfig::default()).unwrap();
                let kkt = lasso_kkt_residual(&y, &z, lambda, &beta);
                let tol = 1e-6 * (1.0 + y.iter().map(|v| v * v).sum::<f64>());
                assert!(kkt <= tol, "seed {seed} frac {frac}: kkt {kkt} > {tol}");
            }
        }
    }

    #[test]
    fn lasso_standardize_off_finds_same_optimum() {
        // Standardization is pure preconditioning, so both settings optimize
        // the same objective.
        let (y, mut z) = random_design(30, 3, 42);
        for (j, col) in z.iter_mut().enumerate() {
            let c = [5.0, 0.2, 1.0][j];
            for v in col.iter_mut() {
                *v *= c;
            }
        }
        let lambda = 1.3;
        let on = lasso_fit(&y, &z, lambda, &LassoConfig::default()).unwrap();
        let off = lasso_fit(
            &y,
            &z,
            lambda,
            &LassoConfig {
                standardize: false,
                ..LassoConfig::default()
            },
        )
        .unwrap();
        let f_on = lasso_objective(&y, &z, lambda, &on);
        let f_off = lasso_objective(&y, &z, lambda, &off);
        assert!((f_on - f_off).abs() <= 1e-8, "{f_on} vs {f_off}");
    }

    #[test]
    fn lasso_handles_zero_column() {
        let y = vec![1.0, -1.0, 0.5];
        let z = vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.5, -0.5]];
        let beta = lasso_fit(&y, &z, 0.1, &LassoConfig::default()).unwrap();
        assert_eq!(beta[0], 0.0);
    }

    #[test]
    fn lasso_path_objective_is_nonincreasing_in_lambda() {
        let (y, z) = random_design(30, 5, 9);
        let lambda_max = z
            .iter()
            .map(|c| 2.0 * c.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().abs())
            .fold(0.0, f64::max);
        let path = lambda_path(lambda_max, 1e-3, 20);
        let mut last = f64::INFINITY;
        for &lam in &path {
            let beta = lasso_fit(&y, &z, lam, &LassoConfig::default()).unwrap();
            let obj = lasso_objective(&y, &z, lam, &beta);
            assert!(obj <= last + 1e-8 * (1.0 + last.abs()), "{obj} > {last}");
            last = obj;
        }
    }

    #[test]
    fn select_lambda_zero_predictors_returns_zero() {
        let y = vec![1.0, 2.0, 3.0];
        assert_eq!(
            select_lambda(&y, &[], &LassoConfig::default()).unwrap(),
            0.0
        );
    }

    #[test]
    fn select_lambda_noiseless_signal_picks_smallest_decile() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 60;
        let z: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let beta_true = [1.5, -2.0, 0.7, 0.0];
        let y: Vec<f64> = (0..n)
            .map(|i| (0..4).map(|j| z[j][i] * beta_true[j]).sum())
            .collect();
        let config = LassoConfig::default();
        let lambda = select_lambda(&y, &z, &config).unwrap();
        let y_mean: f64 = y.iter().sum::<f64>() / n as f64;
        let lambda_max = z
            .iter()
            .map(|c| {
                2.0 * c
                    .iter()
                    .zip(&y)
                    .map(|(zv, yv)| zv * (yv - y_mean))
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max);
        let ratio = config.resolved_min_ratio(n, 4);
        let path = lambda_path(lambda_max, ratio, config.path_length);
        // Smallest decile of the path values.
        let threshold = path[(path.len() * 9) / 10];
        assert!(
            lambda <= threshold,
            "selected {lambda}, decile threshold {threshold}"
        );
    }

    #[test]
    fn select_lambda_pure_noise_picks_large_penalties() {
        let config = LassoConfig::default();
        let mut hits = 0;
        let trials = 50;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(9000 + seed);
            let n = 40;
            let z: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lambda = select_lambda(&y, &z, &config).unwrap();
            let y_mean: f64 = y.iter().sum::<f64>() / n as f64;
            let lambda_max = z
                .iter()
                .map(|c| {
                    2.0 * c
                        .iter()
                        .zip(&y)
                        .map(|(zv, yv)| zv * (yv - y_mean))
                        .sum::<f64>()
                        .abs()
                })
                .fold(0.0, f64::max);
            let ratio = config.resolved_min_ratio(n, 5);
            let path = lambda_path(lambda_max, ratio, config.path_length);
            // Largest quartile of the path values.
            if lambda >= path[path.len() / 4 - 1] {
                hits += 1;
            }
        }
        assert!(
            hits * 10 >= trials * 8,
            "only {hits}/{trials} in the top quartile"
        );
    }

    #[test]
    fn mcd_single_variable() {
        let d = DataMatrix::from_rows(vec![vec![1.0], vec![3.0], vec![5.0]], None).unwrap();
        let f = mcd_fit(
            &d,
            &Permutation::identity(1),
            &LassoConfig::default(),
            false,
        )
        .unwrap();
        assert_eq!(f.l(0, 0), 1.0);
        // Sample variance with divisor n.
        assert_relative_eq!(f.d()[0], 8.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn mcd_exact_linear_dependence_floors_variance() {
        let col1 = [1.0f64, 2.0, 4.0, -3.0];
        let rows: Vec<Vec<f64>> = col1.iter().map(|&v| vec![v, 2.0 * v]).collect();
        let d = DataMatrix::from_rows(rows, None).unwrap();
        let f = mcd_fit(
            &d,
            &Permutation::identity(2),
            &LassoConfig::default(),
            false,
        )
        .unwrap();
        assert_relative_eq!(f.l(1, 0), 2.0, epsilon = 1e-12);
        let var1: f64 = d.centered_column(0).iter().map(|v| v * v).sum::<f64>() / 4.0;
        let var2: f64 = d.centered_column(1).iter().map(|v| v * v).sum::<f64>() / 4.0;
        let d_floor = 1e-10 * (var1 + var2) / 2.0;
        assert_relative_eq!(f.d()[1], d_floor, epsilon = 1e-20, max_relative = 1e-12);
    }

    #[test]
    fn mcd_unpenalized_reconstructs_sample_covariance() {
        let d = random_data(40, 5, 31);
        let s = sample_covariance(&d);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let mut order: Vec<usize> = (0..5).collect();
            for i in (1..5).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let perm = Permutation::new(order).unwrap();
            let f = mcd_fit(&d, &perm, &LassoConfig::default(), false).unwrap();
            let back = conjugate(&f.reconstruct(), &perm).unwrap();
            let err = back.sub(&s).unwrap().frobenius_norm() / s.frobenius_norm();
            assert!(err < 1e-10, "relative error {err}");
        }
    }

    #[test]
    fn reconstruct_identity_factors() {
        let f = CholeskyFactors::new(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![1.0, 1.0],
            Permutation::identity(2),
        )
        .unwrap();
        assert_eq!(f.reconstruct(), SymMatrix::identity(2));
    }

    #[test]
    fn reconstruct_two_by_two_closed_form() {
        let (a, d1, d2) = (0.8, 1.5, 0.4);
        let f = CholeskyFactors::new(
            &[vec![1.0, 0.0], vec![a, 1.0]],
            vec![d1, d2],
            Permutation::identity(2),
        )
        .unwrap();
        let m = f.reconstruct();
        assert_relative_eq!(m.get(0, 0), d1, epsilon = 1e-15);
        assert_relative_eq!(m.get(0, 1), a * d1, epsilon = 1e-15);
        assert_relative_eq!(m.get(1, 1), a * a * d1 + d2, epsilon = 1e-15);
    }

    #[test]
    fn reconstruct_is_positive_definite_for_random_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let p = 6;
        let rows: Vec<Vec<f64>> = (0..p)
            .map(|i| {
                (0..p)
                    .map(|j| {
                        if j > i {
                            0.0
                        } else if j == i {
                            1.0
                        } else {
                            rng.gen_range(-2.0..2.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let d: Vec<f64> = (0..p).map(|_| rng.gen_range(0.1..2.0)).collect();
        let f = CholeskyFactors::new(&rows, d, Permutation::identity(p)).unwrap();
        let m = f.reconstruct();
        let min_eig = sym_eigen(&m).unwrap().smallest();
        assert!(min_eig > 0.0, "smallest eigenvalue {min_eig}");
    }

    #[test]
    fn mcd_penalized_is_deterministic() {
        let d = random_data(30, 6, 17);
        let perm = Permutation::new(vec![3, 1, 5, 0, 2, 4]).unwrap();
        let f1 = mcd_fit(&d, &perm, &LassoConfig::default(), true).unwrap();
        let f2 = mcd_fit(&d, &perm, &LassoConfig::default(), true).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(f1.l(i, j).to_bits(), f2.l(i, j).to_bits());
            }
            assert_eq!(f1.d()[i].to_bits(), f2.d()[i].to_bits());
        }
    }

    #[test]
    fn mcd_penalized_reconstruction_stays_pd_when_p_exceeds_n() {
        let d = random_data(12, 15, 3);
        let f = mcd_fit(
            &d,
            &Permutation::identity(15),
            &LassoConfig::default(),
            true,
        )
        .unwrap();
        let m = f.reconstruct();
        let min_eig = sym_eigen(&m).unwrap().smallest();
        assert!(min_eig > 0.0, "smallest eigenvalue {min_eig}");
    }

    #[test]
    fn fold_assignment_is_balanced_and_seeded() {
        let f1 = fold_assignment(23, 5, 9);
        let f2 = fold_assignment(23, 5, 9);
        assert_eq!(f1, f2);
        let mut counts = [0usize; 5];
        for &f in &f1 {
            counts[f] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 23);
        assert!(counts.iter().all(|&c| c == 4 || c == 5));
        assert_ne!(fold_assignment(23, 5, 10), f1);
    }
}
