//! Rolling minimum-variance portfolio backtests.
//!
//! An expanding window walks through a return series: at step `j` the
//! chosen covariance estimator sees the first `j` observations, the
//! long-only minimum-variance weights are computed, and the next period's
//! return is realized. The report aggregates the averaged weekly return,
//! its dispersion, and the information ratio.

use crate::ensemble::{
    build_candidates, default_xi_grid, estimate_from_candidates_with, sample_orderings, Method,
};
use crate::format::{csv_record, float17};
use crate::linalg::{Permutation, SymMatrix};
use crate::mcd::{sample_covariance, DataMatrix, LassoConfig};
use crate::rng::{substream, TAG_BACKTEST};
use crate::simplex_qp::SimplexQP;
use crate::{check_finite, invalid, Result};
use rand::Rng;
use rayon::prelude::*;

/// A panel of asset returns over time.
#[derive(Debug, Clone)]
pub struct ReturnSeries {
    t: usize,
    p: usize,
    returns: Vec<f64>,
    period_labels: Vec<String>,
    asset_labels: Vec<String>,
}

impl ReturnSeries {
    /// Builds from period rows. Labels default to `t1..tT` and `x1..xp`.
    pub fn new(
        rows: Vec<Vec<f64>>,
        period_labels: Option<Vec<String>>,
        asset_labels: Option<Vec<String>>,
    ) -> Result<ReturnSeries> {
        let t = rows.len();
        if t < 2 {
            return Err(invalid(format!("need at least 2 periods, got {t}")));
        }
        let p = rows[0].len();
        if p == 0 {
            return Err(invalid("need at least 1 asset"));
        }
        let mut flat = Vec::with_capacity(t * p);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(invalid(format!(
                    "period {i} has {} values, expected {p}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        check_finite(&flat, "returns")?;
        let period_labels = match period_labels {
            Some(l) if l.len() != t => {
                return Err(invalid(format!(
                    "{} period labels for {t} periods",
                    l.len()
                )))
            }
            Some(l) => l,
            None => (1..=t).map(|i| format!("t{i}")).collect(),
        };
        let asset_labels = match asset_labels {
            Some(l) if l.len() != p => {
                return Err(invalid(format!("{} asset labels for {p} assets", l.len())))
            }
            Some(l) => l,
            None => (1..=p).map(|j| format!("x{j}")).collect(),
        };
        Ok(ReturnSeries {
            t,
            p,
            returns: flat,
            period_labels,
            asset_labels,
        })
    }

    pub fn periods(&self) -> usize {
        self.t
    }

    pub fn assets(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.returns[i * self.p..(i + 1) * self.p]
    }

    pub fn period_labels(&self) -> &[String] {
        &self.period_labels
    }

    pub fn asset_labels(&self) -> &[String] {
        &self.asset_labels
    }

    /// The first `j` periods as an observation matrix.
    pub fn window(&self, j: usize) -> Result<DataMatrix> {
        DataMatrix::from_flat(
            self.returns[..j * self.p].to_vec(),
            j,
            self.p,
            Some(self.asset_labels.clone()),
        )
    }
}

/// Long-only fully-invested weights minimizing `w' Sigma w`.
pub fn min_variance_weights(sigma: &SymMatrix) -> Result<Vec<f64>> {
    let zeros = vec![0.0; sigma.dim()];
    Ok(SimplexQP::new(sigma.clone(), zeros)?.solve()?.weights)
}

/// A covariance-estimation strategy the backtest can drive.
pub trait CovEstimator: Sync {
    fn name(&self) -> &str;
    /// Estimate from the expanding window at backtest step `step`.
    fn estimate(&self, window: &DataMatrix, step: usize) -> Result<SymMatrix>;
}

/// Sample covariance stabilized with `ridge` added to the diagonal.
#[derive(Debug, Clone)]
pub struct SampleRidgeEstimator {
    pub ridge: f64,
}

impl CovEstimator for SampleRidgeEstimator {
    fn name(&self) -> &str {
        "sample_ridge"
    }

    fn estimate(&self, window: &DataMatrix, _step: usize) -> Result<SymMatrix> {
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(invalid(format!(
                "ridge must be nonnegative, got {}",
                self.ridge
            )));
        }
        let s = sample_covariance(window);
        let r = self.ridge;
        Ok(SymMatrix::from_fn(window.p(), |i, j| {
            s.get(i, j) + if i == j { r } else { 0.0 }
        }))
    }
}

/// Ensemble estimator (equal, wae, or wae_star) with per-step ordering
/// substreams, so every step is reproducible in isolation.
#[derive(Debug, Clone)]
pub struct EnsembleEstimator {
    pub method: Method,
    /// Ensemble size (number of random orderings).
    pub m: usize,
    pub seed: u64,
    pub lasso: LassoConfig,
    /// Pin orderings to the identity (debugging aid).
    pub pin_identity_orderings: bool,
    /// ξ grid for `wae_star`; `None` means the default grid.
    pub xi_grid: Option<Vec<f64>>,
}

impl CovEstimator for EnsembleEstimator {
    fn name(&self) -> &str {
        self.method.name()
    }

    fn estimate(&self, window: &DataMatrix, step: usize) -> Result<SymMatrix> {
        let orderings = if self.pin_identity_orderings {
            vec![Permutation::identity(window.p()); self.m]
        } else {
            let order_seed: u64 = substream(self.seed, TAG_BACKTEST, step as u64).gen();
            sample_orderings(window.p(), self.m, order_seed)?
        };
        let candidates = build_candidates(window, &orderings, &self.lasso)?;
        let grid = self.xi_grid.clone().unwrap_or_else(default_xi_grid);
        Ok(estimate_from_candidates_with(window, self.method, &candidates, &grid)?.sigma_hat)
    }
}

/// Backtest options.
#[derive(Debug, Clone, Default)]
pub struct BacktestConfig {
    /// Cumulate multiplicatively (`Π(1+r) - 1`, fractional units) instead
    /// of the default additive running sum.
    pub compound: bool,
}

/// Backtest outcome over `H = T - window_start` realized periods.
#[derive(Debug, Clone)]
pub struct BacktestReport {
    pub estimator: String,
    pub window_start: usize,
    /// Averaged weekly return: mean of the realized returns.
    pub awr: f64,
    /// Sample standard deviation of the realized returns (divisor H-1).
    pub se: f64,
    /// `awr / se`; +/- infinity when `se` is zero (degenerate series).
    pub info_ratio: f64,
    pub weekly_returns: Vec<f64>,
    pub cumulative_returns: Vec<f64>,
    pub weight_history: Vec<Vec<f64>>,
    /// Labels of the realized periods (for the cumulative series output).
    pub periods: Vec<String>,
    pub compound: bool,
}

impl BacktestReport {
    /// JSON rendering with 17-significant-digit numbers. A non-finite
    /// information ratio becomes `null` with `zero_variance` set.
    pub fn to_json(&self) -> String {
        let ratio = if self.info_ratio.is_finite() {
            float17(self.info_ratio)
        } else {
            "null".to_string()
        };
        let join = |v: &[f64]| v.iter().map(|&x| float17(x)).collect::<Vec<_>>().join(",");
        format!(
            concat!(
                "{{\n",
                "  \"estimator\": \"{}\",\n",
                "  \"window_start\": {},\n",
                "  \"periods\": {},\n",
                "  \"awr\": {},\n",
                "  \"se\": {},\n",
                "  \"info_ratio\": {},\n",
                "  \"zero_variance\": {},\n",
                "  \"compound\": {},\n",
                "  \"weekly_returns\": [{}],\n",
                "  \"cumulative_returns\": [{}]\n",
                "}}\n"
            ),
            self.estimator,
            self.window_start,
            self.weekly_returns.len(),
            float17(self.awr),
            float17(self.se),
            ratio,
            self.se == 0.0,
            self.compound,
            join(&self.weekly_returns),
            join(&self.cumulative_returns),
        )
    }

    /// Cumulative-return series as CSV (`period,cumulative_return`).
    pub fn cumulative_csv(&self) -> String {
        let mut out = String::from("period,cumulative_return\n");
        for (label, &value) in self.periods.iter().zip(&self.cumulative_returns) {
            out.push_str(&csv_record([label.clone(), float17(value)]));
        }
        out
    }
}

/// Expanding-window backtest: steps `j = window_start .. T-1` estimate from
/// the first `j` rows and realize row `j`'s return. Steps run in parallel;
/// the report is assembled in step order, so output is deterministic.
pub fn backtest(
    series: &ReturnSeries,
    estimator: &dyn CovEstimator,
    window_start: usize,
    config: &BacktestConfig,
) -> Result<BacktestReport> {
    let t = series.periods();
    if window_start < 2 || window_start >= t {
        return Err(invalid(format!(
            "window_start must be in [2, {}), got {window_start}",
            t
        )));
    }
    let steps: Vec<Result<(Vec<f64>, f64)>> = (window_start..t)
        .into_par_iter()
        .map(|j| {
            let run = || -> Result<(Vec<f64>, f64)> {
                let window = series.window(j)?;
                let sigma = estimator.estimate(&window, j)?;
                let weights = min_variance_weights(&sigma)?;
                let realized: f64 = weights.iter().zip(series.row(j)).map(|(w, r)| w * r).sum();
                if !realized.is_finite() {
                    return Err(invalid(format!("non-finite realized return at step {j}")));
                }
                Ok((weights, realized))
            };
            run().map_err(|e| e.in_stage(format!("backtest step {j}")))
        })
        .collect();

    let mut weight_history = Vec::with_capacity(t - window_start);
    let mut weekly_returns = Vec::with_capacity(t - window_start);
    for step in steps {
        let (w, r) = step?;
        weight_history.push(w);
        weekly_returns.push(r);
    }

    let h = weekly_returns.len() as f64;
    let awr = weekly_returns.iter().sum::<f64>() / h;
    let se = if weekly_returns.len() < 2 {
        0.0
    } else {
        (weekly_returns
            .iter()
            .map(|r| (r - awr).powi(2))
            .sum::<f64>()
            / (h - 1.0))
            .sqrt()
    };
    let info_ratio = awr / se;

    let mut cumulative_returns = Vec::with_capacity(weekly_returns.len());
    if config.compound {
        let mut acc = 1.0;
        for &r in &weekly_returns {
            acc *= 1.0 + r;
            cumulative_returns.push(acc - 1.0);
        }
    } else {
        let mut acc = 0.0;
        for &r in &weekly_returns {
            acc += r;
            cumulative_returns.push(acc);
        }
    }

    Ok(BacktestReport {
        estimator: estimator.name().to_string(),
        window_start,
        awr,
        se,
        info_ratio,
        weekly_returns,
        cumulative_returns,
        weight_history,
        periods: series.period_labels()[window_start..].to_vec(),
        compound: config.compound,
    })
}
