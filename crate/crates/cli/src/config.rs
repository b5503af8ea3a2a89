//! Experiment configuration files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rainfield::baselines::BaselineConfig;
use rainfield::censored::CensoredGpParams;
use rainfield::gp1d::BenchmarkConfig;
use rainfield::samplers::{Algorithm, SamplerConfig};
use serde::{Deserialize, Serialize};

/// Default output root when neither `--out` nor `output_dir` is given.
pub const OUTPUT_ROOT_ENV: &str = "RAINFIELD_OUT";
pub const DEFAULT_RUNTIME_CAP: f64 = 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Gp1d,
    CmlSynthetic,
    AblationFewLong,
    AblationManyShort,
}

impl Scenario {
    pub fn tag(self) -> &'static str {
        match self {
            Scenario::Gp1d => "gp1d",
            Scenario::CmlSynthetic => "cml-synthetic",
            Scenario::AblationFewLong => "ablation-few-long",
            Scenario::AblationManyShort => "ablation-many-short",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub height: usize,
    pub width: usize,
    pub spacing: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            height: 36,
            width: 48,
            spacing: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum TopologySource {
    /// Scenario-specific synthetic network; `links` applies to cml-synthetic.
    Synthesize { links: usize },
    File { path: PathBuf },
}

impl Default for TopologySource {
    fn default() -> Self {
        TopologySource::Synthesize { links: 60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKindConfig {
    Isotropic,
    Heteroscedastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub kind: NoiseKindConfig,
    pub sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKindConfig::Isotropic,
            sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawConfig {
    pub a: f64,
    pub b: f64,
}

impl Default for PowerLawConfig {
    fn default() -> Self {
        Self { a: 0.3, b: 1.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorSource {
    GaussianAnalytic { mean: f64, variance: f64, lengthscale: f64 },
    ExternalDenoiser { path: PathBuf },
    CensoredGp(CensoredGpParams),
}

impl Default for PriorSource {
    fn default() -> Self {
        PriorSource::GaussianAnalytic {
            mean: 1.0,
            variance: 1.0,
            lengthscale: 6.0,
        }
    }
}

impl PriorSource {
    pub fn tag(&self) -> &'static str {
        match self {
            PriorSource::GaussianAnalytic { .. } => "gaussian-analytic",
            PriorSource::ExternalDenoiser { .. } => "external-denoiser",
            PriorSource::CensoredGp(_) => "censored-gp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmFitConfig {
    /// Top-left window `[height, width]` of each reference field to fit.
    pub window: [usize; 2],
    pub beta_grid: Vec<f64>,
    pub em_iters: usize,
    pub gibbs_sweeps: usize,
}

impl Default for EmFitConfig {
    fn default() -> Self {
        Self {
            window: [8, 8],
            beta_grid: vec![1.0],
            em_iters: 20,
            gibbs_sweeps: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub grid: GridConfig,
    pub topology: TopologySource,
    pub power_law: PowerLawConfig,
    pub noise: NoiseConfig,
    /// Generates the reference fields and, unless `sampler_prior` is set,
    /// drives the samplers.
    pub prior: PriorSource,
    pub sampler_prior: Option<PriorSource>,
    pub samplers: Vec<SamplerConfig>,
    pub baselines: Vec<String>,
    pub baseline_config: BaselineConfig,
    pub n_fields: usize,
    pub seed: u64,
    pub runtime_cap_seconds: f64,
    pub output_dir: Option<PathBuf>,
    pub gp1d: BenchmarkConfig,
    pub oracle_draws: usize,
    /// Oracle draws compared against each gp1d ensemble.
    pub sw_oracle_draws: usize,
    pub em_fit: EmFitConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::CmlSynthetic,
            grid: GridConfig::default(),
            topology: TopologySource::default(),
            power_law: PowerLawConfig::default(),
            noise: NoiseConfig::default(),
            prior: PriorSource::default(),
            sampler_prior: None,
            samplers: vec![SamplerConfig::cml(Algorithm::Dps)],
            baselines: vec!["IDW".into(), "GMZ".into(), "OK".into()],
            baseline_config: BaselineConfig::default(),
            n_fields: 4,
            seed: 0,
            runtime_cap_seconds: DEFAULT_RUNTIME_CAP,
            output_dir: None,
            gp1d: BenchmarkConfig::default(),
            oracle_draws: 10_000,
            sw_oracle_draws: 500,
            em_fit: EmFitConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// The GP benchmark with all four samplers at their benchmark settings.
    pub fn gp1d() -> Self {
        Self {
            scenario: Scenario::Gp1d,
            samplers: Algorithm::ALL.iter().map(|a| SamplerConfig::gp(*a)).collect(),
            baselines: Vec::new(),
            n_fields: 1,
            ..Self::default()
        }
    }

    /// Defaults for `scenario`.
    pub fn for_scenario(scenario: Scenario) -> Self {
        match scenario {
            Scenario::Gp1d => Self::gp1d(),
            other => Self {
                scenario: other,
                ..Self::default()
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samplers.is_empty() && self.baselines.is_empty() {
            bail!("config requests no methods");
        }
        if !(self.runtime_cap_seconds > 0.0) {
            bail!("runtime cap must be positive, got {}", self.runtime_cap_seconds);
        }
        if self.n_fields == 0 {
            bail!("n_fields must be at least 1");
        }
        if self.scenario == Scenario::Gp1d && self.samplers.is_empty() {
            bail!("the gp1d scenario needs at least one sampler");
        }
        if !(self.noise.sigma > 0.0) {
            bail!("noise sigma must be positive");
        }
        Ok(())
    }

    /// Output directory: explicit override, then `output_dir`, then
    /// `$RAINFIELD_OUT/<scenario>`, then `runs/<scenario>`.
    pub fn resolve_output(&self, explicit: Option<&Path>) -> PathBuf {
        if let Some(p) = explicit {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output_dir {
            return p.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(self.scenario.tag())
    }
}
