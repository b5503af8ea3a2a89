//! Censored, power-transformed Gaussian-process prior for rain intermittency.
//!
//! `X(s) = max(0, V(s))^β` with `V ~ GP(μ, k)` and
//! `k(s, s') = σ² [exp(−½ (s−s')ᵀ diag(ℓ₁, ℓ₂)⁻² (s−s')) + δ·1{s = s'}]`,
//! where `ℓ₁` acts along columns (x), `ℓ₂` along rows (y) and `δ` is a fixed
//! relative nugget. Parameters are estimated by Monte Carlo EM with
//! coordinatewise Gibbs imputation (β = 1) or Metropolis-within-Gibbs (β > 1).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::grid::GridSpec;
use crate::rng::{derive_seed, normal_vector, stream_rng};
use crate::{par, Error, Result};

/// Largest grid for which the dense `HW x HW` kernel is factorized.
pub const MAX_CELLS: usize = 4096;
/// Relative nugget added to the kernel diagonal.
pub const NUGGET: f64 = 1e-2;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoredGpParams {
    pub mu: f64,
    pub lengthscales: [f64; 2],
    pub variance: f64,
    pub beta: f64,
}

impl CensoredGpParams {
    pub fn new(mu: f64, lengthscales: [f64; 2], variance: f64, beta: f64) -> Result<Self> {
        let p = Self {
            mu,
            lengthscales,
            variance,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscales.iter().all(|l| *l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(format!("lengthscales must be positive, got {:?}", self.lengthscales)));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::invalid(format!("variance must be positive, got {}", self.variance)));
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be at least 1, got {}", self.beta)));
        }
        if !self.mu.is_finite() {
            return Err(Error::invalid("mu must be finite"));
        }
        Ok(())
    }
}

/// Non-negative field with its zero mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoredField {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub censor_mask: Vec<bool>,
}

impl CensoredField {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::DimensionMismatch {
                what: "censored field",
                expected: height * width,
                found: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::NegativeRain { index, value });
        }
        let censor_mask = values.iter().map(|v| *v == 0.0).collect();
        Ok(Self {
            height,
            width,
            values,
            censor_mask,
        })
    }

    pub fn censored_fraction(&self) -> f64 {
        self.censor_mask.iter().filter(|m| **m).count() as f64 / self.values.len() as f64
    }
}

fn check_size(cells: usize) -> Result<()> {
    if cells > MAX_CELLS {
        return Err(Error::TooLarge {
            cells,
            limit: MAX_CELLS,
        });
    }
    Ok(())
}

/// Unit-variance correlation matrix with nugget over the cell centres.
pub fn correlation_matrix(grid: &GridSpec, lengthscales: [f64; 2]) -> DMatrix<f64> {
    let centers = grid.centers();
    let n = centers.len();
    DMatrix::from_fn(n, n, |i, j| {
        let dx = (centers[i][0] - centers[j][0]) / lengthscales[0];
        let dy = (centers[i][1] - centers[j][1]) / lengthscales[1];
        (-0.5 * (dx * dx + dy * dy)).exp() + if i == j { NUGGET } else { 0.0 }
    })
}

fn kernel_cholesky(grid: &GridSpec, params: &CensoredGpParams) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(correlation_matrix(grid, params.lengthscales) * params.variance)
        .ok_or_else(|| Error::NotPositiveDefinite("censored-GP kernel".into()))
}

/// Draws `max(0, V)^β` with `V ~ N(μ1, Γ)`.
pub fn sample_censored_field(params: &CensoredGpParams, grid: &GridSpec, seed: u64) -> Result<CensoredField> {
    params.validate()?;
    check_size(grid.cells())?;
    let chol = kernel_cholesky(grid, params)?;
    sample_with_factor(&chol, params, grid, seed, 0)
}

/// `count` independent fields, field `i` from RNG stream `i`.
pub fn sample_censored_fields(
    params: &CensoredGpParams,
    grid: &GridSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<CensoredField>> {
    params.validate()?;
    check_size(grid.cells())?;
    let chol = kernel_cholesky(grid, params)?;
    par::try_map_indexed(count, |i| sample_with_factor(&chol, params, grid, seed, i as u64))
}

fn sample_with_factor(
    chol: &Cholesky<f64, Dyn>,
    params: &CensoredGpParams,
    grid: &GridSpec,
    seed: u64,
    stream: u64,
) -> Result<CensoredField> {
    let z = normal_vector(&mut stream_rng(seed, stream), grid.cells());
    let v = chol.l() * z;
    let values = v.iter().map(|vi| forward_transform(vi + params.mu, params.beta)).collect();
    CensoredField::new(grid.height, grid.width, values)
}

fn forward_transform(v: f64, beta: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else if beta == 1.0 {
        v
    } else {
        v.powf(beta)
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

fn std_normal_inv_cdf(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Exact draw from `N(m, s²)` truncated to `(−∞, 0]` by inverse transform.
/// Far tails (`Φ(−m/s) < 1e-300`) use the exponential tail limit.
pub fn truncated_normal_nonpositive<R: Rng + ?Sized>(m: f64, s: f64, rng: &mut R) -> f64 {
    let b = -m / s;
    let u: f64 = rng.sample(Open01);
    let p = std_normal_cdf(b);
    let z = if p > 1e-300 {
        std_normal_inv_cdf(u * p).min(b)
    } else {
        b + u.ln() / b.abs()
    };
    (m + s * z).min(0.0)
}

/// Precision-form model used by the imputation chains.
struct ChainModel {
    mu: f64,
    sd: f64,
    beta: f64,
    precision: DMatrix<f64>,
}

impl ChainModel {
    fn new(grid: &GridSpec, params: &CensoredGpParams) -> Result<Self> {
        params.validate()?;
        check_size(grid.cells())?;
        let precision = kernel_cholesky(grid, params)?.inverse();
        Ok(Self {
            mu: params.mu,
            sd: params.variance.sqrt(),
            beta: params.beta,
            precision,
        })
    }

    /// Gaussian conditional `(mean, sd)` of cell `i` given the others.
    fn conditional(&self, v: &[f64], i: usize) -> (f64, f64) {
        let row = self.precision.row(i);
        let qii = row[i];
        let mut acc = 0.0;
        for (j, vj) in v.iter().enumerate() {
            if j != i {
                acc += row[j] * (vj - self.mu);
            }
        }
        (self.mu - acc / qii, (1.0 / qii).sqrt())
    }
}

/// State of one imputation chain in latent (`V`) scale.
struct Chain<'a> {
    model: &'a ChainModel,
    censored: Vec<usize>,
    v: Vec<f64>,
    proposals: usize,
    accepted: usize,
}

impl<'a> Chain<'a> {
    fn new(model: &'a ChainModel, field: &CensoredField, init: Option<&[f64]>) -> Self {
        let b = model.beta;
        let v = match init {
            Some(v) => v.to_vec(),
            None => field
                .values
                .iter()
                .map(|x| if *x > 0.0 { inverse_transform(*x, b) } else { model.mu.min(0.0) - 0.8 * model.sd })
                .collect(),
        };
        let censored = (0..v.len()).filter(|i| field.censor_mask[*i]).collect();
        Self {
            model,
            censored,
            v,
            proposals: 0,
            accepted: 0,
        }
    }

    fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let beta = self.model.beta;
        for idx in 0..self.censored.len() {
            let i = self.censored[idx];
            let (m, s) = self.model.conditional(&self.v, i);
            // proposal in transformed scale u = −|v|^β from the β = 1 conditional
            let u_new = truncated_normal_nonpositive(m, s, rng);
            self.proposals += 1;
            if beta == 1.0 {
                self.v[i] = u_new;
                self.accepted += 1;
                continue;
            }
            let u_old = -(-self.v[i]).max(0.0).powf(beta);
            let log_ratio = mwg_log_weight(u_new, m, s, beta) - mwg_log_weight(u_old, m, s, beta);
            let accept = log_ratio >= 0.0 || {
                let a: f64 = rng.sample(Open01);
                a.ln() < log_ratio
            };
            if accept {
                self.v[i] = -(-u_new).powf(1.0 / beta);
                self.accepted += 1;
            }
        }
    }
}

fn inverse_transform(x: f64, beta: f64) -> f64 {
    if beta == 1.0 {
        x
    } else {
        x.powf(1.0 / beta)
    }
}

/// `log π(u) − log q(u)` for a censored cell in transformed scale, with
/// target `N(g(u); m, s²)|g'(u)|`, `g(u) = −|u|^{1/β}`, and proposal
/// `N(u; m, s²)` (both truncated to `u ≤ 0`).
fn mwg_log_weight(u: f64, m: f64, s: f64, beta: f64) -> f64 {
    let a = u.abs().max(f64::MIN_POSITIVE);
    let g = -a.powf(1.0 / beta);
    let log_jac = -beta.ln() + (1.0 / beta - 1.0) * a.ln();
    let zt = (g - m) / s;
    let zq = (u - m) / s;
    -0.5 * zt * zt + log_jac + 0.5 * zq * zq
}

/// Coordinatewise Gibbs imputation of the censored latents (β = 1). Returns
/// the latent field after `n_sweeps` sweeps.
pub fn gibbs_impute(
    params: &CensoredGpParams,
    grid: &GridSpec,
    field: &CensoredField,
    n_sweeps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if params.beta != 1.0 {
        return Err(Error::invalid(format!("Gibbs imputation needs beta = 1, got {}", params.beta)));
    }
    Ok(mwg_impute(params, grid, field, n_sweeps, seed)?.0)
}

/// Metropolis-within-Gibbs imputation for β ≥ 1 with the β = 1 conditional
/// as proposal. Returns the latent field and the acceptance rate. At β = 1
/// every proposal is accepted without drawing, so the chain equals
/// [`gibbs_impute`] for the same seed.
///
/// The importance weight of this independence proposal grows like
/// `|u|^{1/β − 1}` near zero, so for β ≥ 2 the chain still converges but
/// holding times near the censoring threshold are heavy-tailed.
pub fn mwg_impute(
    params: &CensoredGpParams,
    grid: &GridSpec,
    field: &CensoredField,
    n_sweeps: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    check_field(grid, field)?;
    let model = ChainModel::new(grid, params)?;
    let mut chain = Chain::new(&model, field, None);
    let mut rng = stream_rng(seed, 0);
    for _ in 0..n_sweeps {
        chain.sweep(&mut rng);
    }
    Ok((chain.v, acceptance(chain.accepted, chain.proposals)))
}

fn acceptance(accepted: usize, proposals: usize) -> f64 {
    if proposals == 0 {
        1.0
    } else {
        accepted as f64 / proposals as f64
    }
}

fn check_field(grid: &GridSpec, field: &CensoredField) -> Result<()> {
    if (field.height, field.width) != grid.shape() {
        return Err(Error::GridMismatch {
            expected: grid.shape(),
            found: (field.height, field.width),
        });
    }
    Ok(())
}

/// First and second empirical moments of latent fields.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    pub count: usize,
    pub mean: DVector<f64>,
    pub second: DMatrix<f64>,
}

impl SufficientStats {
    pub fn from_latents<'a>(n: usize, latents: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut sum = DVector::zeros(n);
        let mut second = DMatrix::zeros(n, n);
        let mut count = 0;
        for v in latents {
            let v = DVector::from_column_slice(v);
            second.ger(1.0, &v, &v, 1.0);
            sum += v;
            count += 1;
        }
        let c = count.max(1) as f64;
        Self {
            count,
            mean: sum / c,
            second: second / c,
        }
    }
}

/// Profile Gaussian log-likelihood at `lengthscales`, with the closed-form
/// `μ` and `σ²` maximizers. `None` if the kernel does not factorize.
pub fn profile_log_likelihood(
    grid: &GridSpec,
    stats: &SufficientStats,
    lengthscales: [f64; 2],
) -> Option<(f64, f64, f64)> {
    let n = grid.cells();
    let chol = Cholesky::new(correlation_matrix(grid, lengthscales))?;
    let ones = DVector::from_element(n, 1.0);
    let k1 = chol.solve(&ones);
    let mu = k1.dot(&stats.mean) / k1.dot(&ones);
    let cov = &stats.second - (&stats.mean * ones.transpose() + &ones * stats.mean.transpose()) * mu
        + DMatrix::from_element(n, n, mu * mu);
    let kinv_c = chol.solve(&cov);
    let variance = kinv_c.trace() / n as f64;
    if !(variance > 0.0 && variance.is_finite()) {
        return None;
    }
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let ll = -0.5 * stats.count as f64 * (n as f64 * (LN_2PI + variance.ln() + 1.0) + logdet);
    Some((ll, mu, variance))
}

/// Bounds and restarts of the lengthscale search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub min_lengthscale: f64,
    pub max_lengthscale: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            min_lengthscale: 0.2,
            max_lengthscale: 20.0,
            max_iters: 200,
            tol: 1e-7,
        }
    }
}

/// Bounded projected-gradient ascent in log-lengthscale space with central
/// finite-difference gradients and backtracking, restarted from `current`
/// and two fixed points; never returns a value below the one at `current`.
pub fn m_step(
    grid: &GridSpec,
    stats: &SufficientStats,
    current: [f64; 2],
    search: &SearchConfig,
) -> Result<(f64, [f64; 2], f64, f64)> {
    let (lo, hi) = (search.min_lengthscale.ln(), search.max_lengthscale.ln());
    let clamp = |p: [f64; 2]| [p[0].clamp(lo, hi), p[1].clamp(lo, hi)];
    let f = |p: [f64; 2]| {
        profile_log_likelihood(grid, stats, [p[0].exp(), p[1].exp()])
            .map(|r| r.0)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let span = (grid.height.max(grid.width) as f64 / 2.0).max(1.0);
    let starts = [
        clamp([current[0].ln(), current[1].ln()]),
        clamp([0.0, 0.0]),
        clamp([span.ln(), span.ln()]),
    ];
    let mut best: Option<([f64; 2], f64)> = None;
    for start in starts {
        let mut p = start;
        let mut fp = f(p);
        if !fp.is_finite() {
            continue;
        }
        let mut step = 0.5;
        for _ in 0..search.max_iters {
            let h = 1e-5;
            let g = [
                (f(clamp([p[0] + h, p[1]])) - f(clamp([p[0] - h, p[1]]))) / (2.0 * h),
                (f(clamp([p[0], p[1] + h])) - f(clamp([p[0], p[1] - h]))) / (2.0 * h),
            ];
            let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
            if !gn.is_finite() || gn == 0.0 {
                break;
            }
            let dir = [g[0] / gn, g[1] / gn];
            let mut improved = false;
            let mut s = step * 2.0;
            while s > 1e-10 {
                let q = clamp([p[0] + s * dir[0], p[1] + s * dir[1]]);
                let fq = f(q);
                if fq > fp {
                    let gain = fq - fp;
                    p = q;
                    fp = fq;
                    step = s;
                    improved = gain > search.tol * fp.abs().max(1.0);
                    break;
                }
                s *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if best.is_none_or(|(_, bf)| fp > bf) {
            best = Some((p, fp));
        }
    }
    let (p, _) = best.ok_or_else(|| Error::NotPositiveDefinite("no admissible lengthscale found".into()))?;
    let ls = [p[0].exp(), p[1].exp()];
    let (ll, mu, var) = profile_log_likelihood(grid, stats, ls).expect("best point factorizes");
    Ok((ll, ls, mu, var))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub em_iters: usize,
    /// Sweeps per E-step; the first half is discarded as burn-in.
    pub gibbs_sweeps: usize,
    pub search: SearchConfig,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            em_iters: 20,
            gibbs_sweeps: 10,
            search: SearchConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmIterate {
    pub iteration: usize,
    pub mu: f64,
    pub lengthscales: [f64; 2],
    pub variance: f64,
    pub log_likelihood: f64,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaTrace {
    pub beta: f64,
    pub iterates: Vec<EmIterate>,
    pub params: CensoredGpParams,
    /// Held-out score; higher is better. `None` when only one β is fitted.
    pub selection_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub selected: CensoredGpParams,
    pub traces: Vec<BetaTrace>,
    pub held_out_fields: Vec<usize>,
}

/// EM estimate at fixed β over `fields`.
pub fn em_fit_beta(
    grid: &GridSpec,
    fields: &[&CensoredField],
    beta: f64,
    cfg: &EmConfig,
) -> Result<BetaTrace> {
    if fields.is_empty() {
        return Err(Error::EmptyInput("censored-GP fit needs at least one field"));
    }
    check_size(grid.cells())?;
    for f in fields {
        check_field(grid, f)?;
    }
    if cfg.em_iters == 0 || cfg.gibbs_sweeps == 0 {
        return Err(Error::invalid("em_iters and gibbs_sweeps must be at least 1"));
    }
    let n = grid.cells();
    let to_latent = |x: f64| if x > 0.0 { inverse_transform(x, beta) } else { 0.0 };
    let init: Vec<f64> = fields.iter().flat_map(|f| f.values.iter().map(|x| to_latent(*x))).collect();
    let m0 = init.iter().sum::<f64>() / init.len() as f64;
    let v0 = (init.iter().map(|v| (v - m0).powi(2)).sum::<f64>() / init.len() as f64).max(1e-6);
    let l0 = (grid.height.min(grid.width) as f64 / 4.0).max(1.0) * grid.spacing[0].min(grid.spacing[1]);
    let mut params = CensoredGpParams::new(m0, [l0, l0], v0, beta)?;
    let mut states: Vec<Option<Vec<f64>>> = vec![None; fields.len()];
    let mut iterates = Vec::with_capacity(cfg.em_iters);
    let keep_from = cfg.gibbs_sweeps / 2;
    let all_observed = fields.iter().all(|f| !f.censor_mask.iter().any(|m| *m));
    for it in 0..cfg.em_iters {
        let model = ChainModel::new(grid, &params)?;
        let seed = derive_seed(cfg.seed, &format!("em-beta{beta}-iter{it}"));
        let results = par::map_indexed(fields.len(), |k| {
            let mut chain = Chain::new(&model, fields[k], states[k].as_deref());
            let mut rng = stream_rng(seed, k as u64);
            let mut kept = Vec::new();
            if all_observed {
                kept.push(chain.v.clone());
            } else {
                for s in 0..cfg.gibbs_sweeps {
                    chain.sweep(&mut rng);
                    if s >= keep_from {
                        kept.push(chain.v.clone());
                    }
                }
            }
            (chain.v, kept, chain.accepted, chain.proposals)
        });
        let (mut acc, mut prop) = (0, 0);
        let mut kept_all = Vec::new();
        for (k, (v, kept, a, p)) in results.into_iter().enumerate() {
            states[k] = Some(v);
            kept_all.extend(kept);
            acc += a;
            prop += p;
        }
        let stats = SufficientStats::from_latents(n, kept_all.iter().map(|v| v.as_slice()));
        let (ll, ls, mu, var) = m_step(grid, &stats, params.lengthscales, &cfg.search)?;
        params = CensoredGpParams::new(mu, ls, var, beta)?;
        iterates.push(EmIterate {
            iteration: it,
            mu,
            lengthscales: ls,
            variance: var,
            log_likelihood: ll / stats.count.max(1) as f64 * fields.len() as f64,
            acceptance_rate: acceptance(acc, prop),
        });
    }
    Ok(BetaTrace {
        beta,
        iterates,
        params,
        selection_score: None,
    })
}

/// Held-out marginal pseudo-log-likelihood of fields in the observed `X`
/// scale: censored cells contribute `log Φ(−μ/σ)`, positive cells the
/// transformed normal density with its Jacobian. Because it is a proper
/// density in `X`, rescaling the data shifts every β's score equally.
pub fn held_out_score(params: &CensoredGpParams, fields: &[&CensoredField]) -> f64 {
    let sd = params.variance.sqrt();
    let b = params.beta;
    let log_zero = std_normal_cdf(-params.mu / sd).max(f64::MIN_POSITIVE).ln();
    let mut total = 0.0;
    let mut count = 0usize;
    for f in fields {
        for x in &f.values {
            count += 1;
            if *x == 0.0 {
                total += log_zero;
            } else {
                let v = inverse_transform(*x, b);
                let z = (v - params.mu) / sd;
                let log_jac = -b.ln() + (1.0 / b - 1.0) * x.ln();
                total += -0.5 * z * z - sd.ln() - 0.5 * LN_2PI + log_jac;
            }
        }
    }
    total / count.max(1) as f64
}

/// Fits every β in `beta_grid` and returns the one with the best held-out
/// score. With two or more candidates and at least five fields, every fifth
/// field is held out of fitting and used for scoring.
pub fn em_fit(grid: &GridSpec, fields: &[CensoredField], beta_grid: &[f64], cfg: &EmConfig) -> Result<FitReport> {
    if fields.is_empty() {
        return Err(Error::EmptyInput("censored-GP fit needs at least one field"));
    }
    if beta_grid.is_empty() {
        return Err(Error::EmptyInput("beta grid"));
    }
    let split = beta_grid.len() > 1 && fields.len() >= 5;
    let held_out: Vec<usize> = if split {
        (0..fields.len()).filter(|i| i % 5 == 4).collect()
    } else {
        Vec::new()
    };
    let fit: Vec<&CensoredField> = fields
        .iter()
        .enumerate()
        .filter(|(i, _)| !held_out.contains(i))
        .map(|(_, f)| f)
        .collect();
    let score_set: Vec<&CensoredField> = if split {
        held_out.iter().map(|i| &fields[*i]).collect()
    } else {
        fields.iter().collect()
    };
    let mut traces = Vec::with_capacity(beta_grid.len());
    for &beta in beta_grid {
        let mut trace = em_fit_beta(grid, &fit, beta, cfg)?;
        if beta_grid.len() > 1 {
            trace.selection_score = Some(held_out_score(&trace.params, &score_set));
        }
        traces.push(trace);
    }
    let selected = traces
        .iter()
        .max_by(|a, b| {
            a.selection_score
                .unwrap_or(0.0)
                .total_cmp(&b.selection_score.unwrap_or(0.0))
                .then(b.beta.total_cmp(&a.beta))
        })
        .expect("non-empty beta grid")
        .params;
    Ok(FitReport {
        selected,
        traces,
        held_out_fields: held_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::unit(4, 5)
    }

    #[test]
    fn deep_censoring_and_symmetry() {
        let g = grid();
        let deep = CensoredGpParams::new(-10.0, [2.0, 2.0], 1.0, 1.0).unwrap();
        let fields = sample_censored_fields(&deep, &g, 100, 1).unwrap();
        let frac: f64 = fields.iter().map(|f| f.censored_fraction()).sum::<f64>() / 100.0;
        assert!(frac > 0.999);
        let sym = CensoredGpParams::new(0.0, [0.3, 0.3], 1.0, 1.0).unwrap();
        let fields = sample_censored_fields(&sym, &GridSpec::unit(10, 10), 100, 2).unwrap();
        let frac: f64 = fields.iter().map(|f| f.censored_fraction()).sum::<f64>() / 100.0;
        assert!((frac - 0.5).abs() < 0.05, "{frac}");
    }

    #[test]
    fn guard_and_validation() {
        let big = GridSpec::unit(65, 64);
        let p = CensoredGpParams::new(0.0, [1.0, 1.0], 1.0, 1.0).unwrap();
        assert!(matches!(sample_censored_field(&p, &big, 0), Err(Error::TooLarge { .. })));
        assert!(CensoredGpParams::new(0.0, [1.0, 1.0], 1.0, 0.5).is_err());
        assert!(CensoredGpParams::new(0.0, [0.0, 1.0], 1.0, 1.0).is_err());
        assert!(matches!(
            em_fit(&grid(), &[], &[1.0], &EmConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn imputation_respects_support() {
        let g = grid();
        let p = CensoredGpParams::new(0.1, [1.5, 1.5], 1.0, 1.0).unwrap();
        let f = sample_censored_field(&p, &g, 4).unwrap();
        let v = gibbs_impute(&p, &g, &f, 5, 9).unwrap();
        for ((vi, xi), m) in v.iter().zip(&f.values).zip(&f.censor_mask) {
            if *m {
                assert!(*vi <= 0.0);
            } else {
                assert_eq!(vi, xi);
            }
        }
    }

    #[test]
    fn uncensored_field_is_returned_unchanged() {
        let g = grid();
        let p = CensoredGpParams::new(5.0, [1.5, 1.5], 0.1, 1.0).unwrap();
        let f = CensoredField::new(4, 5, (1..=20).map(|k| k as f64 * 0.1).collect()).unwrap();
        assert_eq!(gibbs_impute(&p, &g, &f, 3, 0).unwrap(), f.values);
        let _ = p;
    }

    #[test]
    fn mwg_at_unit_beta_is_gibbs() {
        let g = grid();
        let p = CensoredGpParams::new(0.0, [1.2, 2.0], 1.0, 1.0).unwrap();
        let f = sample_censored_field(&p, &g, 8).unwrap();
        let (v, acc) = mwg_impute(&p, &g, &f, 7, 3).unwrap();
        assert_eq!(v, gibbs_impute(&p, &g, &f, 7, 3).unwrap());
        assert_eq!(acc, 1.0);
        let p2 = CensoredGpParams { beta: 1.6, ..p };
        let f2 = sample_censored_field(&p2, &g, 8).unwrap();
        let (v2, acc2) = mwg_impute(&p2, &g, &f2, 7, 3).unwrap();
        assert!(acc2 > 0.0 && acc2 <= 1.0);
        assert!(v2.iter().zip(&f2.censor_mask).all(|(v, m)| !*m || *v <= 0.0));
    }

    #[test]
    fn truncated_normal_far_tail() {
        let mut rng = stream_rng(0, 0);
        for m in [-3.0, 0.0, 2.0, 50.0] {
            for _ in 0..200 {
                let v = truncated_normal_nonpositive(m, 1.0, &mut rng);
                assert!(v <= 0.0 && v.is_finite());
            }
        }
    }
}
