//! Field and ensemble evaluation metrics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::forward::RainField;
use crate::gp1d::OraclePosterior1D;
use crate::rng::{normal_vector, stream_rng};
use crate::{par, Error, Result};

pub const DEFAULT_PROJECTIONS: usize = 128;
pub const MIN_QUANTILE_ENSEMBLE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldMetrics {
    pub rmse: f64,
    /// `None` when either field is constant.
    pub pcc: Option<f64>,
    /// `Σ recon − Σ reference`; positive means overestimation.
    pub cum_rain_diff: f64,
}

pub fn field_metrics(recon: &RainField, reference: &RainField) -> Result<FieldMetrics> {
    if recon.grid.shape() != reference.grid.shape() {
        return Err(Error::GridMismatch {
            expected: reference.grid.shape(),
            found: recon.grid.shape(),
        });
    }
    field_metrics_values(&recon.values, &reference.values)
}

pub fn field_metrics_values(recon: &[f64], reference: &[f64]) -> Result<FieldMetrics> {
    if recon.len() != reference.len() || recon.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "field metrics",
            expected: reference.len(),
            found: recon.len(),
        });
    }
    let n = recon.len() as f64;
    let mse = recon.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let (ma, mb) = (recon.iter().sum::<f64>() / n, reference.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in recon.iter().zip(reference) {
        let (da, db) = (a - ma, b - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    let pcc = if saa > 0.0 && sbb > 0.0 {
        Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
    } else {
        None
    };
    Ok(FieldMetrics {
        rmse: mse.sqrt(),
        pcc,
        cum_rain_diff: recon.iter().sum::<f64>() - reference.iter().sum::<f64>(),
    })
}

/// Linear-interpolated empirical quantile of sorted data (`q ∈ [0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// 1-D 2-Wasserstein distance between empirical distributions. Equal sizes
/// use the sorted coupling; otherwise both quantile functions are evaluated
/// at `max(n_a, n_b)` midpoint levels.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let sq = if a.len() == b.len() {
        a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
    } else {
        let k = a.len().max(b.len());
        (0..k)
            .map(|i| {
                let q = (i as f64 + 0.5) / k as f64;
                (quantile_sorted(&a, q) - quantile_sorted(&b, q)).powi(2)
            })
            .sum::<f64>()
            / k as f64
    };
    sq.sqrt()
}

/// Mean 1-D `W_2` over `n_projections` random unit directions; direction `p`
/// comes from RNG stream `p` of `seed`.
pub fn sliced_wasserstein(
    samples_a: &[DVector<f64>],
    samples_b: &[DVector<f64>],
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    if samples_a.len() < 2 || samples_b.len() < 2 {
        return Err(Error::UndersizedEnsemble {
            got: samples_a.len().min(samples_b.len()),
            need: 2,
        });
    }
    if n_projections == 0 {
        return Err(Error::invalid("at least one projection is required"));
    }
    let d = samples_a[0].len();
    if let Some(bad) = samples_a.iter().chain(samples_b).find(|s| s.len() != d) {
        return Err(Error::DimensionMismatch {
            what: "sample dimension",
            expected: d,
            found: bad.len(),
        });
    }
    let per = par::map_indexed(n_projections, |p| {
        let mut u = normal_vector(&mut stream_rng(seed, p as u64), d);
        let norm = u.norm();
        u /= norm;
        let pa: Vec<f64> = samples_a.iter().map(|s| s.dot(&u)).collect();
        let pb: Vec<f64> = samples_b.iter().map(|s| s.dot(&u)).collect();
        wasserstein_1d(&pa, &pb)
    });
    Ok(per.iter().sum::<f64>() / n_projections as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetrics {
    pub sliced_wasserstein: f64,
    pub mean_l2: f64,
    pub q05_l2: f64,
    pub q95_l2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileErrors {
    pub mean_l2: f64,
    pub q05_l2: f64,
    pub q95_l2: f64,
}

/// Pointwise 5% and 95% ensemble quantiles against `mean ± z_q σ` of the
/// oracle, plus the ensemble-mean error, all as ℓ₂ norms over the grid.
pub fn quantile_errors(ensemble: &[DVector<f64>], oracle: &OraclePosterior1D) -> Result<QuantileErrors> {
    if ensemble.len() < MIN_QUANTILE_ENSEMBLE {
        return Err(Error::UndersizedEnsemble {
            got: ensemble.len(),
            need: MIN_QUANTILE_ENSEMBLE,
        });
    }
    let n = oracle.mean.len();
    if let Some(bad) = ensemble.iter().find(|s| s.len() != n) {
        return Err(Error::DimensionMismatch {
            what: "ensemble member",
            expected: n,
            found: bad.len(),
        });
    }
    let z = Normal::standard().inverse_cdf(0.95);
    let sd = oracle.std_dev();
    let (mut e_mean, mut e05, mut e95) = (0.0, 0.0, 0.0);
    let mut col = vec![0.0; ensemble.len()];
    for k in 0..n {
        for (c, s) in col.iter_mut().zip(ensemble) {
            *c = s[k];
        }
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        col.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&col, 0.05) - (oracle.mean[k] - z * sd[k]);
        let hi = quantile_sorted(&col, 0.95) - (oracle.mean[k] + z * sd[k]);
        e_mean += (mean - oracle.mean[k]).powi(2);
        e05 += lo * lo;
        e95 += hi * hi;
    }
    Ok(QuantileErrors {
        mean_l2: e_mean.sqrt(),
        q05_l2: e05.sqrt(),
        q95_l2: e95.sqrt(),
    })
}

/// Ensemble metrics against oracle draws and the oracle's marginals.
pub fn ensemble_metrics(
    ensemble: &[DVector<f64>],
    oracle: &OraclePosterior1D,
    oracle_draws: &[DVector<f64>],
    n_projections: usize,
    seed: u64,
) -> Result<EnsembleMetrics> {
    let q = quantile_errors(ensemble, oracle)?;
    Ok(EnsembleMetrics {
        sliced_wasserstein: sliced_wasserstein(ensemble, oracle_draws, n_projections, seed)?,
        mean_l2: q.mean_l2,
        q05_l2: q.q05_l2,
        q95_l2: q.q95_l2,
    })
}

/// Normal-approximation 95% confidence interval of a mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

pub fn mean_ci95(values: &[f64]) -> Option<ConfidenceInterval> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let half_width = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Normal::standard().inverse_cdf(0.975) * (var / n as f64).sqrt()
    } else {
        f64::NAN
    };
    Some(ConfidenceInterval { mean, half_width, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub method: String,
    pub field_index: usize,
    #[serde(flatten)]
    pub metrics: FieldMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub ci95_half_width: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub header: String,
    pub rows: Vec<FieldRow>,
    pub aggregate: Vec<AggregateRow>,
}

impl MetricsReport {
    pub fn new(header: impl Into<String>, rows: Vec<FieldRow>) -> Self {
        let mut methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
        methods.dedup();
        let mut seen = std::collections::BTreeSet::new();
        methods.retain(|m| seen.insert(*m));
        let mut aggregate = Vec::new();
        for m in methods {
            let sel: Vec<&FieldRow> = rows.iter().filter(|r| r.method == m).collect();
            let series: [(&str, Vec<f64>); 3] = [
                ("rmse", sel.iter().map(|r| r.metrics.rmse).collect()),
                ("pcc", sel.iter().filter_map(|r| r.metrics.pcc).collect()),
                ("cum_rain_diff", sel.iter().map(|r| r.metrics.cum_rain_diff).collect()),
            ];
            for (name, vals) in series {
                if let Some(ci) = mean_ci95(&vals) {
                    aggregate.push(AggregateRow {
                        method: m.to_string(),
                        metric: name.to_string(),
                        mean: ci.mean,
                        ci95_half_width: ci.half_width,
                        n: ci.n,
                    });
                }
            }
        }
        Self {
            header: header.into(),
            rows,
            aggregate,
        }
    }
}
