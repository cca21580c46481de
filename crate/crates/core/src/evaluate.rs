//! Model-comparison metrics: predictive RMSE with a 95% credible interval,
//! and DIC split into its fit and penalty parts.
//!
//! RMSE is computed per retained draw against a truth vector, so its interval
//! reflects posterior-predictive uncertainty. DIC uses the data-model
//! deviance `D(theta) = -2 log N(y; mu, sigma2 I)` with the latent mu treated
//! as a parameter (the lowest focus level), and plugs posterior means of mu
//! and sigma2 into `D_hat`.

use nalgebra::DVector;
use thiserror::Error;

use crate::model::log_normal_iid;
use crate::predict::PredictionResult;
use crate::sampler::PosteriorSamples;
use crate::scalar::{cvt, Scalar};
use crate::stats;

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("dimension mismatch: {message}")]
    Dimension { message: String },
    #[error("need at least {needed} retained draws, have {have}")]
    TooFewDraws { needed: usize, have: usize },
    #[error("draw {index} carries non-positive sigma2 = {value}; sampler invariant violated")]
    InvalidDraw { index: usize, value: f64 },
}

/// Per-draw root mean squared error against `truth`, reduced to
/// (mean, 2.5% quantile, 97.5% quantile) over the retained draws.
pub fn rmse_ci<T: Scalar>(
    pred: &PredictionResult<T>,
    truth: &DVector<T>,
) -> Result<(T, T, T), EvaluateError> {
    let n_star = pred.n_targets();
    if truth.len() != n_star {
        return Err(EvaluateError::Dimension {
            message: format!(
                "prediction covers {n_star} units but truth has {} entries",
                truth.len()
            ),
        });
    }
    let n_draws = pred.n_draws();
    if n_draws == 0 {
        return Err(EvaluateError::TooFewDraws { needed: 1, have: 0 });
    }
    let inv_n = T::one() / cvt::<T>(n_star as f64);
    let per_draw: Vec<T> = (0..n_draws)
        .map(|d| {
            let mut sum_sq = T::zero();
            for k in 0..n_star {
                let e = pred.draws[(d, k)] - truth[k];
                sum_sq += e * e;
            }
            (sum_sq * inv_n).sqrt()
        })
        .collect();
    Ok((
        stats::mean(&per_draw),
        stats::quantile(&per_draw, 0.025),
        stats::quantile(&per_draw, 0.975),
    ))
}

/// DIC and its decomposition. `dic = dbar + pd` holds by construction;
/// `pd = dbar - d_hat` may be negative for pathological posteriors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DicDecomposition<T> {
    pub dic: T,
    /// Posterior mean deviance (measure of fit).
    pub dbar: T,
    /// Effective parameter count (penalty).
    pub pd: T,
    /// Deviance at the posterior means of (mu, sigma2).
    pub d_hat: T,
}

/// Deviance information criterion over retained draws.
///
/// Running means are accumulated with Welford updates, so a degenerate chain
/// of identical draws yields `pd = 0` and `dic = dbar` exactly.
pub fn dic<T: Scalar>(
    samples: &PosteriorSamples<T>,
    y: &DVector<T>,
) -> Result<DicDecomposition<T>, EvaluateError> {
    let n = y.len();
    let n_draws = samples.n_draws();
    if n_draws < 2 {
        return Err(EvaluateError::TooFewDraws { needed: 2, have: n_draws });
    }
    let mut dbar = T::zero();
    let mut mean_mu: DVector<T> = DVector::zeros(n);
    let mut mean_sigma2 = T::zero();
    for (index, state) in samples.pooled_states().enumerate() {
        if state.mu.len() != n {
            return Err(EvaluateError::Dimension {
                message: format!(
                    "draw {index} has mu of length {} but y has {n} entries",
                    state.mu.len()
                ),
            });
        }
        if !(state.sigma2 > T::zero()) {
            return Err(EvaluateError::InvalidDraw {
                index,
                value: state.sigma2.to_f64().unwrap_or(f64::NAN),
            });
        }
        let count = cvt::<T>((index + 1) as f64);
        dbar += (deviance(y, &state.mu, state.sigma2) - dbar) / count;
        mean_sigma2 += (state.sigma2 - mean_sigma2) / count;
        let mut step = &state.mu - &mean_mu;
        step /= count;
        mean_mu += step;
    }
    let d_hat = deviance(y, &mean_mu, mean_sigma2);
    let pd = dbar - d_hat;
    Ok(DicDecomposition { dic: dbar + pd, dbar, pd, d_hat })
}

/// `-2 log N(y; mu, sigma2 I)`.
fn deviance<T: Scalar>(y: &DVector<T>, mu: &DVector<T>, sigma2: T) -> T {
    let resid = y - mu;
    -cvt::<T>(2.0) * log_normal_iid(resid.norm_squared(), sigma2, y.len())
}

/// One model's evaluation row: RMSE interval plus the DIC decomposition.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelMetrics {
    pub rmse_mean: f64,
    pub rmse_lo: f64,
    pub rmse_hi: f64,
    pub dic: f64,
    pub dbar: f64,
    pub pd: f64,
}

impl ModelMetrics {
    pub fn new(rmse: (f64, f64, f64), dic: DicDecomposition<f64>) -> Self {
        ModelMetrics {
            rmse_mean: rmse.0,
            rmse_lo: rmse.1,
            rmse_hi: rmse.2,
            dic: dic.dic,
            dbar: dic.dbar,
            pd: dic.pd,
        }
    }

    /// Field-wise mean, used to aggregate replications.
    pub fn mean_of(items: &[ModelMetrics]) -> ModelMetrics {
        assert!(!items.is_empty(), "cannot aggregate zero replications");
        let n = items.len() as f64;
        let mut sum = ModelMetrics {
            rmse_mean: 0.0,
            rmse_lo: 0.0,
            rmse_hi: 0.0,
            dic: 0.0,
            dbar: 0.0,
            pd: 0.0,
        };
        for m in items {
            sum.rmse_mean += m.rmse_mean;
            sum.rmse_lo += m.rmse_lo;
            sum.rmse_hi += m.rmse_hi;
            sum.dic += m.dic;
            sum.dbar += m.dbar;
            sum.pd += m.pd;
        }
        ModelMetrics {
            rmse_mean: sum.rmse_mean / n,
            rmse_lo: sum.rmse_lo / n,
            rmse_hi: sum.rmse_hi / n,
            dic: sum.dic / n,
            dbar: sum.dbar / n,
            pd: sum.pd / n,
        }
    }
}

/// Both models' metrics for one simulated replication.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReplicationReport {
    pub seed: u64,
    pub hybrid: ModelMetrics,
    pub baseline: ModelMetrics,
}

/// Full comparison over replications: per-replication rows, aggregate means,
/// win counts, and reproducibility metadata.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StudyReport {
    pub replications: Vec<ReplicationReport>,
    /// Field-wise means over replications.
    pub hybrid: ModelMetrics,
    pub baseline: ModelMetrics,
    /// Replications where the hybrid model had strictly lower RMSE mean.
    pub hybrid_rmse_wins: usize,
    /// Replications where the hybrid model had strictly lower DIC.
    pub hybrid_dic_wins: usize,
    /// Per-replication seeds, in replication order.
    pub seeds: Vec<u64>,
    /// Hash of the resolved simulation configuration.
    pub config_hash: String,
}

impl StudyReport {
    pub fn from_replications(replications: Vec<ReplicationReport>, config_hash: String) -> Self {
        assert!(!replications.is_empty(), "a study needs at least one replication");
        let hybrid = ModelMetrics::mean_of(
            &replications.iter().map(|r| r.hybrid).collect::<Vec<_>>(),
        );
        let baseline = ModelMetrics::mean_of(
            &replications.iter().map(|r| r.baseline).collect::<Vec<_>>(),
        );
        let hybrid_rmse_wins = replications
            .iter()
            .filter(|r| r.hybrid.rmse_mean < r.baseline.rmse_mean)
            .count();
        let hybrid_dic_wins =
            replications.iter().filter(|r| r.hybrid.dic < r.baseline.dic).count();
        let seeds = replications.iter().map(|r| r.seed).collect();
        StudyReport {
            replications,
            hybrid,
            baseline,
            hybrid_rmse_wins,
            hybrid_dic_wins,
            seeds,
            config_hash,
        }
    }

    /// Human-readable comparison table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let reps = self.replications.len();
        out.push_str(&format!(
            "model             rmse (95% ci)              dic = fit + penalty   wins (of {reps})\n"
        ));
        let row = |name: &str, m: &ModelMetrics, rmse_wins: usize, dic_wins: usize| {
            format!(
                "{name:<17} {:.4} ({:.4}, {:.4})   {:.2} = {:.2} + {:.2}   rmse {rmse_wins}, dic {dic_wins}\n",
                m.rmse_mean, m.rmse_lo, m.rmse_hi, m.dic, m.dbar, m.pd
            )
        };
        out.push_str(&row(
            "hybrid",
            &self.hybrid,
            self.hybrid_rmse_wins,
            self.hybrid_dic_wins,
        ));
        out.push_str(&row(
            "truncated-moran",
            &self.baseline,
            reps - self.hybrid_rmse_wins,
            reps - self.hybrid_dic_wins,
        ));
        out
    }
}
