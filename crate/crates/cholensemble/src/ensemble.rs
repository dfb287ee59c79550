//! Weighted ensembles of factorization-based covariance estimates.
//!
//! A single Cholesky-based estimate depends on the variable ordering, which
//! is rarely meaningful for unordered data. This module draws `M` random
//! orderings, builds one candidate estimate per ordering, and combines the
//! candidates convexly: either with equal weights, with weights minimizing
//! an estimated quadratic risk (`wae`), or with additionally sparsified
//! weights (`wae_star`).

use crate::linalg::{conjugate, log_det_and_trace_solve, Permutation, SymMatrix};
use crate::mcd::{mcd_fit, sample_covariance, CholeskyFactors, DataMatrix, LassoConfig};
use crate::rng::{substream, TAG_ORDERING};
use crate::simplex_qp::{SimplexQP, Theta, WeightVector};
use crate::{invalid, Error, Result};
use log::warn;
use rand::Rng;
use rayon::prelude::*;

/// Weights at or below this threshold count as zero when reporting sparsity
/// and when excluding candidates from the sparsified re-solve.
pub const NONZERO_WEIGHT_TOL: f64 = 1e-8;

/// Default number of random orderings.
pub const DEFAULT_ORDERINGS: usize = 30;

/// Combination rule for the candidate estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Uniform weights 1/M.
    Equal,
    /// Risk-minimizing weights on the simplex.
    Wae,
    /// Risk-minimizing weights with a sparsity penalty and selected ξ.
    WaeStar,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Equal => "equal",
            Method::Wae => "wae",
            Method::WaeStar => "wae_star",
        }
    }

    pub const ALL: [Method; 3] = [Method::Equal, Method::Wae, Method::WaeStar];
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        match s {
            "equal" => Ok(Method::Equal),
            "wae" => Ok(Method::Wae),
            "wae_star" => Ok(Method::WaeStar),
            other => Err(invalid(format!(
                "unknown method '{other}' (expected equal, wae, or wae_star)"
            ))),
        }
    }
}

/// One Cholesky-based estimate under a particular ordering, rotated back to
/// the original variable labels.
#[derive(Debug, Clone)]
pub struct CandidateEstimate {
    pub sigma: SymMatrix,
    pub ordering: Permutation,
    pub factors: CholeskyFactors,
}

/// The estimated risk quadratic: expected loss of a weight vector ω is
/// `ω'Aω + b'ω` up to a constant.
#[derive(Debug, Clone)]
pub struct EnsembleQuadratic {
    pub a: SymMatrix,
    pub b: Vec<f64>,
    pub n_used: usize,
}

/// Final combined estimate with its weight diagnostics.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub method: Method,
    pub sigma_hat: SymMatrix,
    pub weights: WeightVector,
    pub xi_selected: Option<f64>,
    pub nonzero_weight_count: usize,
}

/// `M` independent uniform random orderings. Each ordering has its own
/// seeded substream, so the list is reproducible regardless of thread count
/// and duplicates are possible by design.
pub fn sample_orderings(p: usize, m: usize, seed: u64) -> Result<Vec<Permutation>> {
    if p < 1 || m < 1 {
        return Err(invalid(format!("need p >= 1 and M >= 1, got p={p}, M={m}")));
    }
    Ok((0..m)
        .map(|k| {
            let mut rng = substream(seed, TAG_ORDERING, k as u64);
            let mut order: Vec<usize> = (0..p).collect();
            for i in (1..p).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            Permutation::new(order).expect("shuffle of 0..p is a bijection")
        })
        .collect())
}

fn build_candidates_with(
    data: &DataMatrix,
    orderings: &[Permutation],
    config: &LassoConfig,
    penalized: bool,
) -> Result<Vec<CandidateEstimate>> {
    let results: Vec<Result<CandidateEstimate>> = orderings
        .par_iter()
        .enumerate()
        .map(|(k, ordering)| {
            let factors = mcd_fit(data, ordering, config, penalized)
                .map_err(|e| e.in_stage(format!("candidate {k}")))?;
            let sigma = conjugate(&factors.reconstruct(), ordering)?;
            Ok(CandidateEstimate {
                sigma,
                ordering: ordering.clone(),
                factors,
            })
        })
        .collect();
    // Sequential lift keeps which-error-wins deterministic.
    results.into_iter().collect()
}

/// One penalized candidate per ordering, in the original variable labels.
/// Candidates are built in parallel; output order follows input order.
pub fn build_candidates(
    data: &DataMatrix,
    orderings: &[Permutation],
    config: &LassoConfig,
) -> Result<Vec<CandidateEstimate>> {
    build_candidates_with(data, orderings, config, true)
}

/// Same pipeline with plain least-squares regressions (no penalty); used
/// for diagnostics and exact-reconstruction checks.
pub fn build_candidates_unpenalized(
    data: &DataMatrix,
    orderings: &[Permutation],
    config: &LassoConfig,
) -> Result<Vec<CandidateEstimate>> {
    build_candidates_with(data, orderings, config, false)
}

/// Risk quadratic (A, b) for the candidate weights.
///
/// With `c_t(i,j) = (x_ti - m_i)(x_tj - m_j)` and candidate entries `g_k =
/// σ̃^k_ij`, the moment estimator `ρ̂^{kℓ}_ij = (1/n)Σ_t (c_t - g_k)(c_t -
/// g_ℓ)` expands to `q_ij - s_ij(g_k + g_ℓ) + g_k g_ℓ` where `q_ij =
/// (1/n)Σc_t²` and `s` is the sample covariance. Summing over all (i,j)
/// therefore needs only three passes: the scalar Σq, the candidate overlaps
/// `h_k = Σ_ij s_ij σ̃^k_ij`, and the candidate Gram `G[k][ℓ] = Σ_ij σ̃^k_ij
/// σ̃^ℓ_ij`, never materializing the per-observation tensor:
///
/// `A[k][ℓ] = Σq/n - (h_k + h_ℓ)/n + (1 + 1/n)·G[k][ℓ]`, `b_k = -2·h_k`.
///
/// The 1/n on the ρ̂ block converts the asymptotic covariance of the √n-
/// scaled entries to a finite-sample one, keeping both summands of A on the
/// same scale. In exact arithmetic both blocks are Gram matrices, so A is
/// positive semidefinite.
pub fn estimate_quadratic(
    data: &DataMatrix,
    candidates: &[CandidateEstimate],
) -> Result<EnsembleQuadratic> {
    if candidates.is_empty() {
        return Err(invalid("need at least one candidate"));
    }
    let p = data.p();
    let n = data.n();
    for (k, c) in candidates.iter().enumerate() {
        if c.sigma.dim() != p {
            return Err(invalid(format!(
                "candidate {k} has dimension {}, data has {p}",
                c.sigma.dim()
            )));
        }
    }
    let m = candidates.len();
    let means = data.column_means();
    let nf = n as f64;

    // Pair weight 2 for i<j covers the full Σ_ij in symmetric passes.
    let mut sum_q = 0.0;
    let mut s = vec![0.0; p * p];
    for i in 0..p {
        for j in i..p {
            let w = if i == j { 1.0 } else { 2.0 };
            let mut acc_s = 0.0;
            let mut acc_q = 0.0;
            for t in 0..n {
                let row = data.row(t);
                let c = (row[i] - means[i]) * (row[j] - means[j]);
                acc_s += c;
                acc_q += c * c;
            }
            let s_ij = acc_s / nf;
            s[i * p + j] = s_ij;
            s[j * p + i] = s_ij;
            sum_q += w * (acc_q / nf);
        }
    }

    let mut h = vec![0.0; m];
    for (k, cand) in candidates.iter().enumerate() {
        let mut acc = 0.0;
        for i in 0..p {
            for j in i..p {
                let w = if i == j { 1.0 } else { 2.0 };
                acc += w * s[i * p + j] * cand.sigma.get(i, j);
            }
        }
        h[k] = acc;
    }

    let mut gram = vec![0.0; m * m];
    for k in 0..m {
        for l in k..m {
            let mut acc = 0.0;
            for i in 0..p {
                for j in i..p {
                    let w = if i == j { 1.0 } else { 2.0 };
                    acc += w * candidates[k].sigma.get(i, j) * candidates[l].sigma.get(i, j);
                }
            }
            gram[k * m + l] = acc;
            gram[l * m + k] = acc;
        }
    }

    let a = SymMatrix::from_fn(m, |k, l| {
        sum_q / nf - (h[k] + h[l]) / nf + (1.0 + 1.0 / nf) * gram[k * m + l]
    });
    Ok(EnsembleQuadratic {
        a,
        b: h.iter().map(|v| -2.0 * v).collect(),
        n_used: n,
    })
}

/// Risk-minimizing weights on the simplex.
pub fn weights_wae(quad: &EnsembleQuadratic) -> Result<WeightVector> {
    SimplexQP::new(quad.a.clone(), quad.b.clone())?.solve()
}

/// Sparsified weights: candidates with base weight above the zero threshold
/// get penalty `1/weight`; the rest are excluded outright.
pub fn weights_wae_star(
    quad: &EnsembleQuadratic,
    base: &WeightVector,
    xi: f64,
) -> Result<WeightVector> {
    let theta = theta_from(base);
    SimplexQP::new(quad.a.clone(), quad.b.clone())?.solve_penalized(&theta, xi)
}

fn theta_from(base: &WeightVector) -> Vec<Theta> {
    base.weights
        .iter()
        .map(|&w| {
            if w > NONZERO_WEIGHT_TOL {
                Theta::Finite(1.0 / w)
            } else {
                Theta::Infinite
            }
        })
        .collect()
}

/// Convex combination `Σ_k weights_k · candidate_k.sigma`.
pub fn combine(candidates: &[CandidateEstimate], weights: &[f64]) -> Result<SymMatrix> {
    if candidates.is_empty() || candidates.len() != weights.len() {
        return Err(invalid(format!(
            "{} weights for {} candidates",
            weights.len(),
            candidates.len()
        )));
    }
    let p = candidates[0].sigma.dim();
    Ok(SymMatrix::from_fn(p, |i, j| {
        candidates
            .iter()
            .zip(weights)
            .map(|(c, &w)| w * c.sigma.get(i, j))
            .sum()
    }))
}

/// Number of weights above the zero threshold.
pub fn nonzero_weight_count(weights: &[f64]) -> usize {
    weights.iter().filter(|&&w| w > NONZERO_WEIGHT_TOL).count()
}

/// The ξ grid 0.01, 0.06, …, 2.96 (step 0.05, capped at 3).
pub fn default_xi_grid() -> Vec<f64> {
    (0..)
        .map(|k| 0.01 + 0.05 * k as f64)
        .take_while(|&v| v <= 3.0 + 1e-12)
        .collect()
}

/// Picks ξ from `grid` by Gaussian negative log-likelihood against the
/// sample covariance: `Q(ξ) = log|Σ̂(ξ)| + trace(Σ̂(ξ)⁻¹ S)`. Ties break
/// toward the smallest ξ; a grid value whose combination fails the
/// positive-definiteness factorization is skipped with a warning.
pub fn select_xi(
    data: &DataMatrix,
    candidates: &[CandidateEstimate],
    quad: &EnsembleQuadratic,
    base: &WeightVector,
    grid: &[f64],
) -> Result<(f64, WeightVector)> {
    if grid.is_empty() {
        return Err(invalid("xi grid must be nonempty"));
    }
    let s = sample_covariance(data);
    let theta = theta_from(base);
    let qp = SimplexQP::new(quad.a.clone(), quad.b.clone())?;
    let mut best: Option<(f64, f64, WeightVector)> = None;
    for &xi in grid {
        let w = qp
            .solve_penalized(&theta, xi)
            .map_err(|e| e.in_stage(format!("xi = {xi}")))?;
        let sigma_hat = combine(candidates, &w.weights)?;
        let q = match log_det_and_trace_solve(&sigma_hat, &s) {
            Ok((log_det, trace)) => log_det + trace,
            Err(Error::NotPositiveDefinite { smallest_pivot }) => {
                warn!("skipping xi = {xi}: combination not positive definite (pivot {smallest_pivot:e})");
                continue;
            }
            Err(e) => return Err(e),
        };
        let better = match &best {
            None => true,
            Some((best_q, _, _)) => q < *best_q,
        };
        if better {
            best = Some((q, xi, w));
        }
    }
    match best {
        Some((_, xi, w)) => Ok((xi, w)),
        None => Err(Error::NoFeasibleXi),
    }
}

/// Full pipeline: sample orderings, build candidates, and combine them
/// under `method`. `m` is the ensemble size; `seed` drives the orderings.
pub fn estimate(
    data: &DataMatrix,
    method: Method,
    m: usize,
    seed: u64,
    config: &LassoConfig,
) -> Result<EnsembleResult> {
    let orderings = sample_orderings(data.p(), m, seed)?;
    let candidates = build_candidates(data, &orderings, config)
        .map_err(|e| e.in_stage("building candidates"))?;
    estimate_from_candidates(data, method, &candidates)
}

/// Combination stage alone, for callers that reuse one candidate set across
/// several methods (the paired simulation design does).
pub fn estimate_from_candidates(
    data: &DataMatrix,
    method: Method,
    candidates: &[CandidateEstimate],
) -> Result<EnsembleResult> {
    estimate_from_candidates_with(data, method, candidates, &default_xi_grid())
}

/// [`estimate_from_candidates`] with an explicit ξ grid for `wae_star`.
pub fn estimate_from_candidates_with(
    data: &DataMatrix,
    method: Method,
    candidates: &[CandidateEstimate],
    xi_grid: &[f64],
) -> Result<EnsembleResult> {
    let m = candidates.len();
    let (weights, xi_selected) = match method {
        Method::Equal => (WeightVector::uniform(m), None),
        Method::Wae => {
            let quad = estimate_quadratic(data, candidates)
                .map_err(|e| e.in_stage("estimating the risk quadratic"))?;
            let w = weights_wae(&quad).map_err(|e| e.in_stage("solving for weights"))?;
            (w, None)
        }
        Method::WaeStar => {
            let quad = estimate_quadratic(data, candidates)
                .map_err(|e| e.in_stage("estimating the risk quadratic"))?;
            let base = weights_wae(&quad).map_err(|e| e.in_stage("solving for weights"))?;
            let (xi, w) = select_xi(data, candidates, &quad, &base, xi_grid)
                .map_err(|e| e.in_stage("selecting xi"))?;
            (w, Some(xi))
        }
    };
    let sigma_hat = combine(candidates, &weights.weights)?;
    let nonzero_weight_count = nonzero_weight_count(&weights.weights);
    Ok(EnsembleResult {
        method,
        sigma_hat,
        weights,
        xi_selected,
        nonzero_weight_count,
    })
}
