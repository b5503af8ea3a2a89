//! Path-integrated power-law measurement operator and Gaussian likelihood.
//!
//! Link `i` observes `y_i = a_i Σ_k Δ^i_k [x]_k^{b_i} + σ_i z_i`. The map is
//! linear in `u = x^b` and exactly linear in `x` when every `b_i = 1`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid::{GridSpec, LinkRecord, LinkSegment, LinkWeights};
use crate::rng::{standard_normal, stream_rng};
use crate::{grid, Error, Result};

/// Base used for `x^(b-1)` when `b < 1` or the rain rate is zero.
pub const GRADIENT_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Non-negative gridded rain rate (mm/h), stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RainField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl RainField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells() {
            return Err(Error::DimensionMismatch {
                what: "rain field values",
                expected: grid.cells(),
                found: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeRain { index, value });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.cells()])
    }

    /// Clamps negative entries to zero (diffusion iterates, kriging output).
    pub fn from_clamped(grid: GridSpec, mut values: Vec<f64>) -> Result<Self> {
        for v in &mut values {
            *v = v.max(0.0);
        }
        Self::new(grid, values)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.grid.index(row, col)]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawParams {
    pub a: f64,
    pub b: f64,
}

impl PowerLawParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::invalid(format!("power-law constants must be positive, got a={a}, b={b}")));
        }
        Ok(Self { a, b })
    }

    pub fn linear() -> Self {
        Self { a: 1.0, b: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Isotropic,
    Heteroscedastic,
    /// Per-link values taken as given (topology file column).
    PerLink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub base_sigma: f64,
    pub link_lengths: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl NoiseModel {
    pub fn isotropic(sigma: f64, links: usize) -> Self {
        Self {
            kind: NoiseKind::Isotropic,
            base_sigma: sigma,
            link_lengths: Vec::new(),
            sigmas: vec![sigma; links],
        }
    }

    /// `σ_i = (σ/2)(1 + L_i / L_max)`: longer links are noisier.
    pub fn heteroscedastic(sigma: f64, link_lengths: Vec<f64>) -> Result<Self> {
        let l_max = link_lengths.iter().copied().fold(0.0, f64::max);
        if !(l_max > 0.0) {
            return Err(Error::invalid("heteroscedastic noise needs a positive link length"));
        }
        let sigmas = link_lengths
            .iter()
            .map(|l| 0.5 * sigma * (1.0 + l / l_max))
            .collect();
        Ok(Self {
            kind: NoiseKind::Heteroscedastic,
            base_sigma: sigma,
            link_lengths,
            sigmas,
        })
    }

    pub fn per_link(sigmas: Vec<f64>) -> Self {
        let base = sigmas.iter().copied().fold(0.0, f64::max);
        Self {
            kind: NoiseKind::PerLink,
            base_sigma: base,
            link_lengths: Vec::new(),
            sigmas,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.base_sigma *= factor;
        for s in &mut out.sigmas {
            *s *= factor;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y: Vec<f64>,
}

/// Links, their power-law constants and the noise model over one grid.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    pub grid: GridSpec,
    pub weights: Vec<LinkWeights>,
    pub params: Vec<PowerLawParams>,
    pub noise: NoiseModel,
}

impl ObservationModel {
    pub fn new(
        grid: GridSpec,
        weights: Vec<LinkWeights>,
        params: Vec<PowerLawParams>,
        noise: NoiseModel,
    ) -> Result<Self> {
        let m = weights.len();
        if m == 0 {
            return Err(Error::EmptyInput("observation model needs at least one link"));
        }
        if params.len() != m {
            return Err(Error::DimensionMismatch {
                what: "power-law parameters",
                expected: m,
                found: params.len(),
            });
        }
        if noise.sigmas.len() != m {
            return Err(Error::DimensionMismatch {
                what: "noise sigmas",
                expected: m,
                found: noise.sigmas.len(),
            });
        }
        Ok(Self {
            grid,
            weights,
            params,
            noise,
        })
    }

    /// Traces the segments and assembles the model.
    pub fn from_segments(
        grid: GridSpec,
        segments: &[LinkSegment],
        params: Vec<PowerLawParams>,
        noise: NoiseModel,
    ) -> Result<Self> {
        let weights = grid::build_network_weights(&grid, segments)?;
        Self::new(grid, weights, params, noise)
    }

    /// Model from topology-file records; per-link σ from the file unless
    /// `noise` overrides it.
    pub fn from_records(grid: GridSpec, links: &[LinkRecord], noise: Option<NoiseModel>) -> Result<Self> {
        let segments: Vec<_> = links.iter().map(LinkRecord::segment).collect();
        let params = links
            .iter()
            .map(|l| PowerLawParams::new(l.a, l.b))
            .collect::<Result<Vec<_>>>()?;
        let noise = noise.unwrap_or_else(|| NoiseModel::per_link(links.iter().map(|l| l.sigma).collect()));
        Self::from_segments(grid, &segments, params, noise)
    }

    pub fn links(&self) -> usize {
        self.weights.len()
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.noise.sigmas
    }

    pub fn with_noise(&self, noise: NoiseModel) -> Result<Self> {
        Self::new(self.grid, self.weights.clone(), self.params.clone(), noise)
    }

    /// Same links with every exponent replaced by 1.
    pub fn linearized(&self) -> Self {
        let mut out = self.clone();
        for p in &mut out.params {
            p.b = 1.0;
        }
        out
    }

    fn check_grid(&self, x: &RainField) -> Result<()> {
        if x.grid.shape() != self.grid.shape() {
            return Err(Error::GridMismatch {
                expected: self.grid.shape(),
                found: x.grid.shape(),
            });
        }
        Ok(())
    }

    fn check_values_len(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.grid.cells() {
            return Err(Error::DimensionMismatch {
                what: "field values",
                expected: self.grid.cells(),
                found: values.len(),
            });
        }
        Ok(())
    }

    fn check_sigmas(&self) -> Result<()> {
        match self.noise.sigmas.iter().position(|s| !(*s > 0.0)) {
            Some(index) => Err(Error::DegenerateNoise { index }),
            None => Ok(()),
        }
    }

    /// Noise-free link attenuations `a_i Σ_k Δ^i_k x_k^{b_i}`.
    pub fn forward(&self, x: &RainField) -> Result<Vec<f64>> {
        self.check_grid(x)?;
        if let Some((index, &value)) = x.values.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeRain { index, value });
        }
        Ok(self.forward_clamped(&x.values))
    }

    /// Forward map on arbitrary values, negative entries treated as zero.
    pub fn forward_clamped(&self, values: &[f64]) -> Vec<f64> {
        let w = self.grid.width;
        self.weights
            .iter()
            .zip(&self.params)
            .map(|(lw, p)| p.a * lw.weighted_sum(w, |k| clamped_pow(values[k], p.b)))
            .collect()
    }

    /// Transposed Jacobian of [`Self::forward_clamped`] at `values` applied to
    /// a link-space vector `v`. The derivative of `x^b` uses
    /// `b · max(x, ε)^{b-1}` where `b < 1` or `x ≤ 0`.
    pub fn vjp_clamped(&self, values: &[f64], v: &[f64]) -> Vec<f64> {
        let w = self.grid.width;
        let mut out = vec![0.0; values.len()];
        for ((lw, p), vi) in self.weights.iter().zip(&self.params).zip(v) {
            if *vi == 0.0 {
                continue;
            }
            for e in &lw.entries {
                let k = e.row * w + e.col;
                out[k] += vi * p.a * e.length * power_derivative(values[k], p.b);
            }
        }
        out
    }

    /// Noisy observation `forward(x) + Σ z`, deterministic in `seed`.
    pub fn sample_observation(&self, x: &RainField, seed: u64) -> Result<Observation> {
        let clean = self.forward(x)?;
        let mut rng = stream_rng(seed, 0);
        let y = clean
            .iter()
            .zip(&self.noise.sigmas)
            .map(|(m, s)| m + s * standard_normal(&mut rng))
            .collect();
        Ok(Observation { y })
    }

    /// Exact Gaussian log-density `log N(y; M(x), diag σ²)`, including the
    /// `-Σ log σ_i - (m/2) log 2π` normalization.
    pub fn log_likelihood(&self, x: &RainField, y: &Observation) -> Result<f64> {
        self.check_grid(x)?;
        self.log_likelihood_values(&x.values, y)
    }

    pub fn log_likelihood_values(&self, values: &[f64], y: &Observation) -> Result<f64> {
        self.check_values_len(values)?;
        self.check_obs(y)?;
        self.check_sigmas()?;
        let pred = self.forward_clamped(values);
        Ok(gaussian_log_density(&y.y, &pred, &self.noise.sigmas))
    }

    /// Gradient of [`Self::log_likelihood`] with respect to every cell,
    /// row-major.
    pub fn grad_log_likelihood(&self, x: &RainField, y: &Observation) -> Result<Vec<f64>> {
        self.check_grid(x)?;
        self.grad_log_likelihood_values(&x.values, y)
    }

    pub fn grad_log_likelihood_values(&self, values: &[f64], y: &Observation) -> Result<Vec<f64>> {
        self.check_values_len(values)?;
        self.check_obs(y)?;
        self.check_sigmas()?;
        let pred = self.forward_clamped(values);
        let weighted: Vec<f64> = y
            .y
            .iter()
            .zip(&pred)
            .zip(&self.noise.sigmas)
            .map(|((yi, mi), s)| (yi - mi) / (s * s))
            .collect();
        Ok(self.vjp_clamped(values, &weighted))
    }

    /// `Σ_i v_i a_i Δ^i` evaluated on the linear (b = 1) operator.
    pub fn adjoint_linear(&self, v: &[f64]) -> Vec<f64> {
        let w = self.grid.width;
        let mut out = vec![0.0; self.grid.cells()];
        for ((lw, p), vi) in self.weights.iter().zip(&self.params).zip(v) {
            for e in &lw.entries {
                out[e.row * w + e.col] += vi * p.a * e.length;
            }
        }
        out
    }

    fn check_obs(&self, y: &Observation) -> Result<()> {
        if y.y.len() != self.links() {
            return Err(Error::DimensionMismatch {
                what: "observation",
                expected: self.links(),
                found: y.y.len(),
            });
        }
        Ok(())
    }
}

pub(crate) fn clamped_pow(x: f64, b: f64) -> f64 {
    let x = x.max(0.0);
    if b == 1.0 {
        x
    } else {
        x.powf(b)
    }
}

pub(crate) fn power_derivative(x: f64, b: f64) -> f64 {
    if b == 1.0 {
        return 1.0;
    }
    let base = if b < 1.0 || x <= 0.0 { x.max(GRADIENT_FLOOR) } else { x };
    b * base.powf(b - 1.0)
}

/// `log N(y; mean, diag σ²)`.
pub fn gaussian_log_density(y: &[f64], mean: &[f64], sigmas: &[f64]) -> f64 {
    y.iter()
        .zip(mean)
        .zip(sigmas)
        .map(|((yi, mi), s)| {
            let r = (yi - mi) / s;
            -0.5 * r * r - s.ln() - 0.5 * LN_2PI
        })
        .sum()
}

const FIELD_MAGIC: &[u8; 4] = b"RFLD";

/// Binary field layout: `"RFLD"`, `u32 H`, `u32 W`, `H·W` little-endian f64
/// values in row-major order.
pub fn write_field_binary<W: Write>(mut w: W, height: usize, width: usize, values: &[f64]) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::DimensionMismatch {
            what: "field values",
            expected: height * width,
            found: values.len(),
        });
    }
    let h = u32::try_from(height).map_err(|_| Error::invalid("field height exceeds u32"))?;
    let wd = u32::try_from(width).map_err(|_| Error::invalid("field width exceeds u32"))?;
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&h.to_le_bytes())?;
    w.write_all(&wd.to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a binary field; returns `(H, W, values)`.
pub fn read_field_binary<R: Read>(mut r: R) -> Result<(usize, usize, Vec<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(Error::Format(format!("bad field magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let h = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let w = u32::from_le_bytes(b4) as usize;
    let mut values = Vec::with_capacity(h * w);
    let mut b8 = [0u8; 8];
    for _ in 0..h * w {
        r.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after field", rest.len())));
    }
    Ok((h, w, values))
}

pub fn save_field(path: &Path, field: &RainField) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_field_binary(file, field.grid.height, field.grid.width, &field.values)
}

/// Loads a binary field onto the unit grid of its stored shape.
pub fn load_field(path: &Path) -> Result<RainField> {
    let (h, w, values) = read_field_binary(std::io::BufReader::new(std::fs::File::open(path)?))?;
    RainField::new(GridSpec::unit(h, w), values)
}

/// Debug CSV: one line per grid row, comma-separated values.
pub fn write_field_csv<W: Write>(w: W, width: usize, values: &[f64]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in values.chunks(width.max(1)) {
        wtr.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_field_csv<R: Read>(r: R) -> Result<(usize, usize, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("field csv: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::DimensionMismatch {
                    what: "field csv row",
                    expected: w,
                    found: row.len(),
                })
            }
            _ => {}
        }
        values.extend(row);
        height += 1;
    }
    Ok((height, width.unwrap_or(0), values))
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRow {
    link_id: String,
    y: f64,
}

/// Observation CSV `link_id,y`.
pub fn write_observation_csv<W: Write>(w: W, link_ids: &[String], obs: &Observation) -> Result<()> {
    if link_ids.len() != obs.y.len() {
        return Err(Error::DimensionMismatch {
            what: "link ids",
            expected: obs.y.len(),
            found: link_ids.len(),
        });
    }
    let mut wtr = csv::Writer::from_writer(w);
    for (id, y) in link_ids.iter().zip(&obs.y) {
        wtr.serialize(ObservationRow {
            link_id: id.clone(),
            y: *y,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_observation_csv<R: Read>(r: R) -> Result<(Vec<String>, Observation)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut ids = Vec::new();
    let mut y = Vec::new();
    for row in rdr.deserialize::<ObservationRow>() {
        let row = row?;
        if !row.y.is_finite() {
            return Err(Error::Format(format!("non-finite observation for {}", row.link_id)));
        }
        ids.push(row.link_id);
        y.push(row.y);
    }
    Ok((ids, Observation { y }))
}
