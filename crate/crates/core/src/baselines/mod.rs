//! Deterministic meteorological reconstructions from link observations:
//! inverse distance weighting of midpoint virtual gauges, the iterative
//! multi-gauge GMZ scheme, and ordinary kriging.

mod gmz;
mod idw;
mod kriging;

pub use gmz::{gmz_reconstruct, GmzConfig, GmzResult};
pub use idw::{idw_interpolate, idw_weights, IdwConfig, IdwField};
pub use kriging::{
    empirical_variogram, fit_variogram_l1, ordinary_krige, KrigingResult, OrdinaryKriging, Variogram,
    VariogramBin, VARIOGRAM_BINS, VARIOGRAM_STARTS,
};

use serde::{Deserialize, Serialize};

use crate::forward::PowerLawParams;
use crate::grid::{GridSpec, LinkSegment};
use crate::{Error, Result};

/// Point measurement. `value` is a rain rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualGauge {
    pub position: [f64; 2],
    pub value: f64,
}

impl VirtualGauge {
    pub fn new(position: [f64; 2], value: f64) -> Result<Self> {
        if !position.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFiniteCoordinate("gauge position"));
        }
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::invalid(format!("gauge value must be non-negative, got {value}")));
        }
        Ok(Self { position, value })
    }
}

pub(crate) fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_links(segments: &[LinkSegment], y: &[f64], params: &[PowerLawParams]) -> Result<()> {
    if y.len() != segments.len() {
        return Err(Error::DimensionMismatch {
            what: "link observations",
            expected: segments.len(),
            found: y.len(),
        });
    }
    if params.len() != segments.len() {
        return Err(Error::DimensionMismatch {
            what: "power-law parameters",
            expected: segments.len(),
            found: params.len(),
        });
    }
    if let Some(i) = segments.iter().position(|s| !(s.length() > 0.0)) {
        return Err(Error::invalid(format!("link {i} has zero length")));
    }
    Ok(())
}

/// Path-average rain rate `(Y/(aL))^{1/b}`, zero for `Y ≤ 0`.
pub fn path_average_rate(y: f64, length: f64, p: &PowerLawParams) -> f64 {
    if y <= 0.0 {
        0.0
    } else {
        (y / (p.a * length)).powf(1.0 / p.b)
    }
}

/// One gauge per link at its midpoint carrying the path-average rate.
pub fn links_to_midpoint_gauges(
    segments: &[LinkSegment],
    y: &[f64],
    params: &[PowerLawParams],
) -> Result<Vec<VirtualGauge>> {
    check_links(segments, y, params)?;
    segments
        .iter()
        .zip(y)
        .zip(params)
        .map(|((s, yi), p)| VirtualGauge::new(s.midpoint(), path_average_rate(*yi, s.length(), p)))
        .collect()
}

/// Bilinear interpolation between cell centres, clamped at the border.
pub fn bilinear_sample(grid: &GridSpec, values: &[f64], p: [f64; 2]) -> f64 {
    let fx = ((p[0] - grid.origin[0]) / grid.spacing[0] - 0.5).clamp(0.0, (grid.width - 1) as f64);
    let fy = ((p[1] - grid.origin[1]) / grid.spacing[1] - 0.5).clamp(0.0, (grid.height - 1) as f64);
    let (c0, r0) = (fx.floor() as usize, fy.floor() as usize);
    let (c1, r1) = ((c0 + 1).min(grid.width - 1), (r0 + 1).min(grid.height - 1));
    let (tx, ty) = (fx - c0 as f64, fy - r0 as f64);
    let v = |r, c| values[grid.index(r, c)];
    (1.0 - ty) * ((1.0 - tx) * v(r0, c0) + tx * v(r0, c1)) + ty * ((1.0 - tx) * v(r1, c0) + tx * v(r1, c1))
}

/// Settings shared by the three baselines, as stored in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub p: f64,
    pub roi: f64,
    pub points_per_link: usize,
    pub n_iterations: usize,
    /// Fixed variogram; fitted by L1 when absent.
    pub variogram: Option<Variogram>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let idw = IdwConfig::default();
        Self {
            p: idw.power,
            roi: idw.roi,
            points_per_link: 5,
            n_iterations: 20,
            variogram: None,
        }
    }
}

impl BaselineConfig {
    pub fn idw(&self) -> Result<IdwConfig> {
        IdwConfig::new(self.p, self.roi)
    }

    pub fn gmz(&self) -> Result<GmzConfig> {
        Ok(GmzConfig {
            k_points: self.points_per_link,
            n_iters: self.n_iterations,
            idw: self.idw()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Baseline {
    #[serde(rename = "IDW")]
    Idw,
    #[serde(rename = "GMZ")]
    Gmz,
    #[serde(rename = "OK")]
    Kriging,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::Idw, Baseline::Gmz, Baseline::Kriging];

    pub fn tag(self) -> &'static str {
        match self {
            Baseline::Idw => "IDW",
            Baseline::Gmz => "GMZ",
            Baseline::Kriging => "OK",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.tag().eq_ignore_ascii_case(tag))
            .ok_or_else(|| Error::UnknownAlgorithm {
                tag: tag.to_string(),
                known: Self::ALL.iter().map(|b| b.tag()).collect::<Vec<_>>().join(", "),
            })
    }

    /// Runs the baseline and returns the reconstructed (non-negative) values.
    pub fn reconstruct(
        self,
        grid: &GridSpec,
        segments: &[LinkSegment],
        y: &[f64],
        params: &[PowerLawParams],
        cfg: &BaselineConfig,
    ) -> Result<Vec<f64>> {
        match self {
            Baseline::Idw => {
                let gauges = links_to_midpoint_gauges(segments, y, params)?;
                Ok(idw_interpolate(&gauges, grid, &cfg.idw()?)?.field.values)
            }
            Baseline::Gmz => Ok(gmz_reconstruct(grid, segments, y, params, &cfg.gmz()?)?.field.values),
            Baseline::Kriging => {
                let gauges = links_to_midpoint_gauges(segments, y, params)?;
                let vario = match cfg.variogram {
                    Some(v) => v,
                    None => fit_variogram_l1(&gauges, grid.half_diagonal())?,
                };
                Ok(ordinary_krige(&gauges, grid, &vario)?.field.values)
            }
        }
    }
}
