use serde::{Deserialize, Serialize};

use super::{bilinear_sample, check_links, idw_interpolate, path_average_rate, IdwConfig, VirtualGauge};
use crate::forward::{PowerLawParams, RainField};
use crate::grid::{GridSpec, LinkSegment};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmzConfig {
    pub k_points: usize,
    pub n_iters: usize,
    pub idw: IdwConfig,
}

impl Default for GmzConfig {
    fn default() -> Self {
        Self {
            k_points: 5,
            n_iters: 20,
            idw: IdwConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmzResult {
    pub field: RainField,
    /// Final gauge set, `k_points` per link in link order.
    pub gauges: Vec<VirtualGauge>,
    /// Largest relative per-link attenuation mismatch after the last projection.
    pub max_consistency_error: f64,
}

/// Rescales `rates` so their mean attenuation `a r^b` equals `target`.
/// All-zero input is replaced by the uniform path-average rate.
fn project(rates: &mut [f64], target: f64, p: &PowerLawParams) {
    if target <= 0.0 {
        rates.iter_mut().for_each(|r| *r = 0.0);
        return;
    }
    let mean = rates.iter().map(|r| p.a * r.powf(p.b)).sum::<f64>() / rates.len() as f64;
    if mean > 0.0 {
        let scale = (target / mean).powf(1.0 / p.b);
        rates.iter_mut().for_each(|r| *r *= scale);
    } else {
        let uniform = (target / p.a).powf(1.0 / p.b);
        rates.iter_mut().for_each(|r| *r = uniform);
    }
}

fn consistency_error(rates: &[f64], target: f64, p: &PowerLawParams) -> f64 {
    let mean = rates.iter().map(|r| p.a * r.powf(p.b)).sum::<f64>() / rates.len() as f64;
    if target <= 0.0 {
        mean
    } else {
        (mean - target).abs() / target
    }
}

/// GMZ reconstruction: `k_points` gauges per link at evenly spaced
/// positions `(k + ½)/K`, alternating IDW, bilinear resampling and a
/// per-link multiplicative projection onto the measured attenuation per
/// unit length.
pub fn gmz_reconstruct(
    grid: &GridSpec,
    segments: &[LinkSegment],
    y: &[f64],
    params: &[PowerLawParams],
    cfg: &GmzConfig,
) -> Result<GmzResult> {
    check_links(segments, y, params)?;
    if cfg.k_points == 0 {
        return Err(Error::invalid("GMZ needs at least one point per link"));
    }
    if segments.is_empty() {
        return Err(Error::EmptyInput("GMZ needs at least one link"));
    }
    let k = cfg.k_points;
    let positions: Vec<[f64; 2]> = segments
        .iter()
        .flat_map(|s| (0..k).map(move |j| s.point_at((j as f64 + 0.5) / k as f64)))
        .collect();
    let targets: Vec<f64> = segments.iter().zip(y).map(|(s, yi)| yi.max(0.0) / s.length()).collect();
    let mut rates: Vec<f64> = segments
        .iter()
        .zip(y)
        .zip(params)
        .flat_map(|((s, yi), p)| std::iter::repeat_n(path_average_rate(*yi, s.length(), p), k))
        .collect();
    let gauges_of = |rates: &[f64]| -> Result<Vec<VirtualGauge>> {
        positions.iter().zip(rates).map(|(pos, r)| VirtualGauge::new(*pos, *r)).collect()
    };
    for _ in 0..cfg.n_iters {
        let field = idw_interpolate(&gauges_of(&rates)?, grid, &cfg.idw)?.field;
        for (i, chunk) in rates.chunks_mut(k).enumerate() {
            for (j, r) in chunk.iter_mut().enumerate() {
                *r = bilinear_sample(grid, &field.values, positions[i * k + j]);
            }
            project(chunk, targets[i], &params[i]);
        }
    }
    let max_consistency_error = rates
        .chunks(k)
        .enumerate()
        .map(|(i, c)| consistency_error(c, targets[i], &params[i]))
        .fold(0.0, f64::max);
    let gauges = gauges_of(&rates)?;
    let field = idw_interpolate(&gauges, grid, &cfg.idw)?.field;
    Ok(GmzResult {
        field,
        gauges,
        max_consistency_error,
    })
}
