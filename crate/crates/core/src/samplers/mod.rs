//! Training-free posterior samplers driven by a denoiser and a likelihood.
//!
//! Every sampler is a pure function of its inputs and `cfg.seed`. Ensemble
//! member `i` owns RNG stream `i`, so output does not depend on thread count.

mod daps;
mod dps;
mod likelihood;
mod reddiff;
mod tds;

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use daps::daps_sample;
pub use dps::dps_sample;
pub use likelihood::{LinearGaussianLikelihood, LinkLikelihood, Likelihood, NoObservations};
pub use reddiff::reddiff_sample;
pub use tds::{normalize_log_weights, tds_sample};

use crate::diffusion::{karras_schedule, Denoiser, NoiseSchedule};
use crate::{Error, Result};

/// Sampler hyperparameters. Field names follow the usual table of
/// `n_steps`, `gamma`, `n_particles`, `tau`, `mcmc_steps`, `eta0`, `n_ode`,
/// `min_ratio`, `lr`, `obs_weight`, `grad_term_weight`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub algorithm: String,
    pub n_steps: usize,
    pub gamma: f64,
    pub n_particles: usize,
    pub tau: f64,
    pub mcmc_steps: usize,
    pub eta0: f64,
    pub n_ode: usize,
    pub min_ratio: f64,
    pub lr: f64,
    pub obs_weight: f64,
    pub grad_term_weight: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub seed: u64,
    pub batch: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::gp(Algorithm::Dps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "DPS")]
    Dps,
    #[serde(rename = "TDS")]
    Tds,
    #[serde(rename = "DAPS")]
    Daps,
    #[serde(rename = "RedDiff")]
    RedDiff,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Dps, Algorithm::Tds, Algorithm::Daps, Algorithm::RedDiff];

    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Dps => "DPS",
            Algorithm::Tds => "TDS",
            Algorithm::Daps => "DAPS",
            Algorithm::RedDiff => "RedDiff",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        sampler_registry().lookup(tag).map(|e| e.algorithm)
    }
}

impl SamplerConfig {
    fn base(algorithm: Algorithm) -> Self {
        Self {
            algorithm: algorithm.tag().to_string(),
            n_steps: 320,
            gamma: 4.0,
            n_particles: 10,
            tau: 1.0,
            mcmc_steps: 100,
            eta0: 5e-4,
            n_ode: 5,
            min_ratio: 0.01,
            lr: 0.1,
            obs_weight: 1.0,
            grad_term_weight: 1.0,
            sigma_min: 2e-3,
            sigma_max: 100.0,
            rho: 7.0,
            seed: 0,
            batch: 500,
        }
    }

    /// Hyperparameters of the 1-D Gaussian-process benchmark.
    pub fn gp(algorithm: Algorithm) -> Self {
        let mut c = Self::base(algorithm);
        match algorithm {
            Algorithm::Dps | Algorithm::Tds => {}
            Algorithm::Daps => c.n_steps = 100,
            Algorithm::RedDiff => {
                c.n_steps = 1000;
                c.rho = 5.0;
            }
        }
        c
    }

    /// Hyperparameters for rain fields observed by links.
    pub fn cml(algorithm: Algorithm) -> Self {
        let mut c = Self::base(algorithm);
        c.sigma_max = 80.0;
        c.batch = 10;
        match algorithm {
            Algorithm::Dps => {
                c.n_steps = 420;
                c.gamma = 1.0;
            }
            Algorithm::Tds => {
                c.n_steps = 420;
                c.gamma = 1.0;
                c.n_particles = 4;
            }
            Algorithm::Daps => {
                c.n_steps = 100;
                c.mcmc_steps = 50;
                c.eta0 = 2e-4;
            }
            Algorithm::RedDiff => {
                c.n_steps = 1000;
                c.rho = 5.0;
                c.lr = 5e-3;
            }
        }
        c
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        karras_schedule(self.n_steps, self.sigma_min, self.sigma_max, self.rho)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_steps", self.n_steps),
            ("n_particles", self.n_particles),
            ("n_ode", self.n_ode),
            ("batch", self.batch),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be at least 1")));
        }
        let nonneg = [
            ("gamma", self.gamma),
            ("tau", self.tau),
            ("eta0", self.eta0),
            ("lr", self.lr),
            ("obs_weight", self.obs_weight),
            ("grad_term_weight", self.grad_term_weight),
        ];
        if let Some((name, v)) = nonneg.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
        }
        if !(self.min_ratio > 0.0 && self.min_ratio <= 1.0) {
            return Err(Error::invalid(format!("min_ratio must be in (0, 1], got {}", self.min_ratio)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnostics {
    pub final_log_likelihood: f64,
    /// Effective sample size before each TDS step.
    pub ess_trace: Vec<f64>,
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub algorithm: Algorithm,
    pub samples: Vec<DVector<f64>>,
    pub diagnostics: Vec<SampleDiagnostics>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> DVector<f64> {
        let n = self.samples.first().map_or(0, |s| s.len());
        let mut m = DVector::zeros(n);
        for s in &self.samples {
            m += s;
        }
        m / self.samples.len().max(1) as f64
    }

    pub(crate) fn from_results(
        algorithm: Algorithm,
        lik: &dyn Likelihood,
        results: Vec<(DVector<f64>, SampleDiagnostics)>,
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(results.len());
        let mut diagnostics = Vec::with_capacity(results.len());
        for (i, (s, mut d)) in results.into_iter().enumerate() {
            if let Some(k) = s.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    sampler: algorithm.tag(),
                    step: 0,
                    detail: format!("sample {i} entry {k}"),
                });
            }
            d.final_log_likelihood = lik.log_density(&s);
            samples.push(s);
            diagnostics.push(d);
        }
        Ok(Self {
            algorithm,
            samples,
            diagnostics,
        })
    }
}

pub(crate) fn check_shapes(den: &dyn Denoiser, lik: &dyn Likelihood) -> Result<()> {
    if den.dim() != lik.dim() {
        return Err(Error::DimensionMismatch {
            what: "likelihood state",
            expected: den.dim(),
            found: lik.dim(),
        });
    }
    Ok(())
}

pub(crate) fn check_finite(sampler: &'static str, step: usize, what: &str, v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            sampler,
            step,
            detail: format!("{what} is not finite"),
        })
    }
}

pub type SamplerFn = fn(&NoiseSchedule, &dyn Denoiser, &dyn Likelihood, &SamplerConfig) -> Result<Ensemble>;

#[derive(Clone, Copy)]
pub struct RegistryEntry {
    pub algorithm: Algorithm,
    pub run: SamplerFn,
}

impl std::fmt::Debug for RegistryEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegistryEntry").field("algorithm", &self.algorithm).finish()
    }
}

/// Tag-to-sampler map. MGPS, MGDM and CREPE are reserved: defined in their
/// own publications and not implemented here.
#[derive(Debug, Clone)]
pub struct SamplerRegistry {
    entries: BTreeMap<&'static str, RegistryEntry>,
    reserved: BTreeMap<&'static str, &'static str>,
}

impl SamplerRegistry {
    pub fn lookup(&self, tag: &str) -> Result<RegistryEntry> {
        if let Some(e) = self.entries.get(tag) {
            return Ok(*e);
        }
        if let Some((_, e)) = self.entries.iter().find(|(k, _)| k.eq_ignore_ascii_case(tag)) {
            return Ok(*e);
        }
        if let Some((k, reference)) = self.reserved.iter().find(|(k, _)| k.eq_ignore_ascii_case(tag)) {
            return Err(Error::NotImplemented {
                tag: (*k).to_string(),
                reference,
            });
        }
        Err(Error::UnknownAlgorithm {
            tag: tag.to_string(),
            known: self.entries.keys().copied().collect::<Vec<_>>().join(", "),
        })
    }

    pub fn tags(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn reserved_tags(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.reserved.keys().copied()
    }
}

pub fn sampler_registry() -> SamplerRegistry {
    let mut entries = BTreeMap::new();
    let table: [(Algorithm, SamplerFn); 4] = [
        (Algorithm::Dps, dps_sample),
        (Algorithm::Tds, tds_sample),
        (Algorithm::Daps, daps_sample),
        (Algorithm::RedDiff, reddiff_sample),
    ];
    for (algorithm, run) in table {
        entries.insert(algorithm.tag(), RegistryEntry { algorithm, run });
    }
    let reserved = BTreeMap::from([
        ("MGPS", "midpoint-guidance posterior sampling, 2025"),
        ("MGDM", "mixture-based Gibbs diffusion posterior sampling, 2025"),
        ("CREPE", "replica-exchange diffusion posterior sampling, 2025"),
    ]);
    SamplerRegistry { entries, reserved }
}

/// Builds the schedule from `cfg` and runs the sampler named by
/// `cfg.algorithm`.
pub fn run_sampler(den: &dyn Denoiser, lik: &dyn Likelihood, cfg: &SamplerConfig) -> Result<Ensemble> {
    let entry = sampler_registry().lookup(&cfg.algorithm)?;
    let schedule = cfg.schedule()?;
    (entry.run)(&schedule, den, lik, cfg)
}
