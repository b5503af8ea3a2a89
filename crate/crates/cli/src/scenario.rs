//! Synthetic networks, reference fields and observation models.

use anyhow::{bail, Context, Result};
use nalgebra::DVector;
use rainfield::censored::sample_censored_fields;
use rainfield::diffusion::{ancestral_sample, karras_schedule, load_external_denoiser, Denoiser, GaussianDenoiser};
use rainfield::forward::{NoiseModel, ObservationModel, RainField};
use rainfield::grid::{load_topology, GridSpec, LinkRecord, LinkSegment};
use rainfield::rng::{derive_seed, stream_rng};
use rand::Rng;

use crate::config::{ExperimentConfig, NoiseConfig, NoiseKindConfig, PriorSource, Scenario, TopologySource};

pub const FEW_LONG_LINKS: usize = 25;
pub const FEW_LONG_MIN_FRACTION: f64 = 0.6;
pub const MANY_SHORT_LINKS: usize = 100;
pub const MANY_SHORT_CELLS: (f64, f64) = (2.0, 4.0);
const CML_LINK_CELLS: (f64, f64) = (3.0, 20.0);

pub fn grid_of(cfg: &ExperimentConfig) -> Result<GridSpec> {
    let g = cfg.grid;
    Ok(GridSpec::new(g.height, g.width, [0.0, 0.0], [g.spacing, g.spacing])?)
}

/// Segment of length `length` with uniform orientation and a uniform
/// position among those keeping both endpoints inside the domain.
fn place_segment<R: Rng>(grid: &GridSpec, length: f64, rng: &mut R) -> Result<LinkSegment> {
    let (w, h) = (grid.width as f64 * grid.spacing[0], grid.height as f64 * grid.spacing[1]);
    for _ in 0..100_000 {
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let (dx, dy) = (length * theta.cos(), length * theta.sin());
        let (sx, sy) = (w - dx.abs(), h - dy.abs());
        if sx <= 0.0 || sy <= 0.0 {
            continue;
        }
        let cx = grid.origin[0] + dx.abs() / 2.0 + rng.random_range(0.0..sx);
        let cy = grid.origin[1] + dy.abs() / 2.0 + rng.random_range(0.0..sy);
        return Ok(LinkSegment::new([cx - dx / 2.0, cy - dy / 2.0], [cx + dx / 2.0, cy + dy / 2.0]));
    }
    bail!("could not place a link of length {length} in a {w}x{h} domain")
}

/// Synthetic topology for the scenario; σ is filled in from the noise model.
pub fn synthesize_topology(cfg: &ExperimentConfig, grid: &GridSpec, links: usize) -> Result<Vec<LinkRecord>> {
    let mut rng = stream_rng(derive_seed(cfg.seed, "topology"), 0);
    let cell = grid.spacing[0].min(grid.spacing[1]);
    let diagonal = 2.0 * grid.half_diagonal();
    let (count, lo, hi) = match cfg.scenario {
        Scenario::AblationFewLong => (FEW_LONG_LINKS, FEW_LONG_MIN_FRACTION * diagonal, 0.9 * diagonal),
        Scenario::AblationManyShort => (MANY_SHORT_LINKS, MANY_SHORT_CELLS.0 * cell, MANY_SHORT_CELLS.1 * cell),
        Scenario::CmlSynthetic => (links, CML_LINK_CELLS.0 * cell, CML_LINK_CELLS.1 * cell),
        Scenario::Gp1d => bail!("the gp1d scenario has no link topology"),
    };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let length = rng.random_range(lo..=hi);
        let seg = place_segment(grid, length, &mut rng)?;
        out.push(LinkRecord {
            link_id: format!("L{i:03}"),
            x0: seg.start[0],
            y0: seg.start[1],
            x1: seg.end[0],
            y1: seg.end[1],
            a: cfg.power_law.a,
            b: cfg.power_law.b,
            sigma: cfg.noise.sigma,
        });
    }
    Ok(out)
}

pub fn noise_model(noise: &NoiseConfig, links: &[LinkRecord]) -> Result<NoiseModel> {
    Ok(match noise.kind {
        NoiseKindConfig::Isotropic => NoiseModel::isotropic(noise.sigma, links.len()),
        NoiseKindConfig::Heteroscedastic => {
            NoiseModel::heteroscedastic(noise.sigma, links.iter().map(|l| l.segment().length()).collect())?
        }
    })
}

/// Topology with per-link σ set from the configured noise model.
pub fn resolve_topology(cfg: &ExperimentConfig, grid: &GridSpec) -> Result<Vec<LinkRecord>> {
    let mut links = match &cfg.topology {
        TopologySource::Synthesize { links } => synthesize_topology(cfg, grid, *links)?,
        TopologySource::File { path } => {
            load_topology(path).with_context(|| format!("loading topology {}", path.display()))?
        }
    };
    if links.is_empty() {
        bail!("topology has no links");
    }
    let noise = noise_model(&cfg.noise, &links)?;
    for (l, s) in links.iter_mut().zip(&noise.sigmas) {
        l.sigma = *s;
    }
    Ok(links)
}

pub fn observation_model(grid: &GridSpec, links: &[LinkRecord]) -> Result<ObservationModel> {
    Ok(ObservationModel::from_records(*grid, links, None)?)
}

/// Schedule used to draw unconditional samples from an external denoiser.
pub fn reference_schedule() -> Result<rainfield::diffusion::NoiseSchedule> {
    Ok(karras_schedule(200, 2e-3, 80.0, 7.0)?)
}

/// Reference fields from the configured prior, clamped at zero.
pub fn reference_fields(cfg: &ExperimentConfig, grid: &GridSpec) -> Result<Vec<RainField>> {
    let seed = derive_seed(cfg.seed, "reference");
    let n = cfg.n_fields;
    let raw: Vec<Vec<f64>> = match &cfg.prior {
        PriorSource::GaussianAnalytic { mean, variance, lengthscale } => {
            let den = GaussianDenoiser::rbf_on_grid(grid, *mean, *variance, *lengthscale)?;
            (0..n).map(|i| den.sample_prior(seed, i as u64).as_slice().to_vec()).collect()
        }
        PriorSource::ExternalDenoiser { path } => {
            let den = load_external_denoiser(path)?;
            if den.dim() != grid.cells() {
                bail!("external denoiser dimension {} does not match the grid ({} cells)", den.dim(), grid.cells());
            }
            ancestral_sample(&reference_schedule()?, &den, seed, n)?
                .into_iter()
                .map(|v: DVector<f64>| v.as_slice().to_vec())
                .collect()
        }
        PriorSource::CensoredGp(params) => sample_censored_fields(params, grid, n, seed)?
            .into_iter()
            .map(|f| f.values)
            .collect(),
    };
    raw.into_iter().map(|v| Ok(RainField::from_clamped(*grid, v)?)).collect()
}
