use serde::{Deserialize, Serialize};

use super::{distance, VirtualGauge};
use crate::forward::RainField;
use crate::grid::GridSpec;
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdwConfig {
    pub power: f64,
    /// Region of influence radius, in grid coordinates.
    pub roi: f64,
    pub eps: f64,
}

impl Default for IdwConfig {
    fn default() -> Self {
        Self {
            power: 2.0,
            roi: 6.0,
            eps: 1e-6,
        }
    }
}

impl IdwConfig {
    pub fn new(power: f64, roi: f64) -> Result<Self> {
        if !(power > 0.0 && roi > 0.0) {
            return Err(Error::invalid(format!("IDW needs p > 0 and roi > 0, got p={power}, roi={roi}")));
        }
        Ok(Self {
            power,
            roi,
            ..Self::default()
        })
    }
}

#[derive(Debug, Clone)]
pub struct IdwField {
    pub field: RainField,
    /// Cells with at least one gauge inside the radius.
    pub coverage: Vec<bool>,
}

/// Normalized weights of the gauges within `roi` of `point`. Gauges closer
/// than `eps` take all the weight, shared equally.
pub fn idw_weights(gauges: &[VirtualGauge], point: [f64; 2], cfg: &IdwConfig) -> Vec<(usize, f64)> {
    let near: Vec<(usize, f64)> = gauges
        .iter()
        .enumerate()
        .map(|(i, g)| (i, distance(g.position, point)))
        .filter(|(_, d)| *d <= cfg.roi)
        .collect();
    let coincident: Vec<usize> = near.iter().filter(|(_, d)| *d <= cfg.eps).map(|(i, _)| *i).collect();
    if !coincident.is_empty() {
        let w = 1.0 / coincident.len() as f64;
        return coincident.into_iter().map(|i| (i, w)).collect();
    }
    let raw: Vec<(usize, f64)> = near.into_iter().map(|(i, d)| (i, d.powf(-cfg.power))).collect();
    let total: f64 = raw.iter().map(|(_, w)| w).sum();
    raw.into_iter().map(|(i, w)| (i, w / total)).collect()
}

pub fn idw_interpolate(gauges: &[VirtualGauge], grid: &GridSpec, cfg: &IdwConfig) -> Result<IdwField> {
    if gauges.is_empty() {
        return Err(Error::EmptyInput("IDW needs at least one gauge"));
    }
    let cells = par::map_indexed(grid.cells(), |k| {
        let center = grid.cell_center(k / grid.width, k % grid.width);
        let w = idw_weights(gauges, center, cfg);
        if w.is_empty() {
            (0.0, false)
        } else {
            (w.iter().map(|(i, wi)| wi * gauges[*i].value).sum::<f64>(), true)
        }
    });
    let (values, coverage) = cells.into_iter().unzip();
    Ok(IdwField {
        field: RainField::from_clamped(*grid, values)?,
        coverage,
    })
}
