//! The `simulate`, `reconstruct`, `evaluate`, `oracle` and `em-fit` commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DVector;
use rainfield::baselines::Baseline;
use rainfield::censored::{em_fit as fit_censored, CensoredField, EmConfig};
use rainfield::diffusion::{load_external_denoiser, Denoiser, GaussianDenoiser};
use rainfield::forward::{
    read_field_binary, read_observation_csv, write_field_binary, write_observation_csv, Observation,
};
use rainfield::gp1d::{oracle_posterior, Benchmark, BenchmarkConfig, OraclePosterior1D};
use rainfield::grid::{read_topology, write_topology, GridSpec, LinkRecord};
use rainfield::metrics::{ensemble_metrics, field_metrics_values, sliced_wasserstein, FieldRow, MetricsReport, DEFAULT_PROJECTIONS};
use rainfield::rng::derive_seed;
use rainfield::samplers::{run_sampler, Algorithm, Ensemble, LinearGaussianLikelihood, Likelihood, LinkLikelihood, SamplerConfig};
use rainfield::{linalg, par};
use serde::Serialize;

use crate::config::{ExperimentConfig, PriorSource, Scenario};
use crate::io;
use crate::manifest::{MethodFailure, MethodTiming, Reduction, RunManifest, RunWriter};
use crate::scenario;

pub const BENCHMARK_FILE: &str = "benchmark.json";
pub const GP_OBSERVATIONS: &str = "observations.csv";
pub const TOPOLOGY_FILE: &str = "topology.csv";
const MIN_STEPS: usize = 10;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub parallel_methods: bool,
}

pub fn reference_path(i: usize) -> String {
    format!("references/field_{i:03}.rfld")
}

pub fn observation_path(i: usize) -> String {
    format!("observations/obs_{i:03}.csv")
}

pub fn ensemble_path(method: &str, i: usize) -> String {
    format!("ensembles/{method}/field_{i:03}.csv")
}

pub fn baseline_path(method: &str, i: usize) -> String {
    format!("baselines/{method}/field_{i:03}.rfld")
}

fn read(dir: &Path, rel: &str) -> Result<Vec<u8>> {
    let path = dir.join(rel);
    std::fs::read(&path).with_context(|| format!("reading {}", path.display()))
}

fn field_bytes(height: usize, width: usize, values: &[f64]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_field_binary(&mut buf, height, width, values)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec_pretty(v)?)
}

fn reference_note(cfg: &ExperimentConfig) -> String {
    format!(
        "reference fields: synthetic draws from the {} prior, clamped at zero (radar references are not available)",
        cfg.prior.tag()
    )
}

// ---------------------------------------------------------------- simulate

pub fn simulate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let mut w = RunWriter::create(&opts.out, RunManifest::new("simulate", cfg))?;
    if cfg.scenario == Scenario::Gp1d {
        let bench = Benchmark::build(cfg.gp1d.clone())?;
        w.write(BENCHMARK_FILE, bench.config.to_json()?.as_bytes())?;
        let ids: Vec<String> = (0..bench.y.len()).map(|i| format!("I{i:02}")).collect();
        let mut buf = Vec::new();
        write_observation_csv(&mut buf, &ids, &Observation { y: bench.y.as_slice().to_vec() })?;
        w.write(GP_OBSERVATIONS, &buf)?;
        w.manifest.seeds.insert("gp1d".into(), bench.config.seed);
        w.manifest.notes.push(format!(
            "{}-point grid on [-5, 5], lengthscale {}, {} interval observations, sigma {}",
            bench.grid.len(),
            bench.config.lengthscale,
            bench.intervals.len(),
            bench.config.sigma
        ));
        return w.finish();
    }
    let grid = scenario::grid_of(cfg)?;
    let links = scenario::resolve_topology(cfg, &grid)?;
    let mut buf = Vec::new();
    write_topology(&mut buf, &links)?;
    w.write(TOPOLOGY_FILE, &buf)?;
    audit_sigmas(cfg, &links, &mut w.manifest);
    let model = scenario::observation_model(&grid, &links)?;
    let fields = scenario::reference_fields(cfg, &grid)?;
    let ids: Vec<String> = links.iter().map(|l| l.link_id.clone()).collect();
    let obs_seed = derive_seed(cfg.seed, "observations");
    for (i, f) in fields.iter().enumerate() {
        w.write(&reference_path(i), &field_bytes(grid.height, grid.width, &f.values)?)?;
        let obs = model.sample_observation(f, derive_seed(obs_seed, &i.to_string()))?;
        let mut buf = Vec::new();
        write_observation_csv(&mut buf, &ids, &obs)?;
        w.write(&observation_path(i), &buf)?;
    }
    for (k, v) in [
        ("topology", derive_seed(cfg.seed, "topology")),
        ("reference", derive_seed(cfg.seed, "reference")),
        ("observations", obs_seed),
    ] {
        w.manifest.seeds.insert(k.into(), v);
    }
    w.manifest.notes.push(reference_note(cfg));
    w.finish()
}

fn audit_sigmas(cfg: &ExperimentConfig, links: &[LinkRecord], m: &mut RunManifest) {
    let lo = links.iter().map(|l| l.sigma).fold(f64::INFINITY, f64::min);
    let hi = links.iter().map(|l| l.sigma).fold(0.0, f64::max);
    let s = cfg.noise.sigma;
    let ok = match cfg.noise.kind {
        crate::config::NoiseKindConfig::Heteroscedastic => lo > s / 2.0 && hi <= s,
        crate::config::NoiseKindConfig::Isotropic => lo == s && hi == s,
    };
    m.audits.insert(
        "noise_sigma_bounds".into(),
        serde_json::json!({ "kind": cfg.noise.kind, "sigma": s, "min": lo, "max": hi, "within_bounds": ok }),
    );
}

// ------------------------------------------------------------- reconstruct

#[derive(Debug, Clone)]
enum MethodKind {
    Sampler(SamplerConfig),
    Baseline(String),
}

#[derive(Debug, Clone)]
struct MethodSpec {
    name: String,
    kind: MethodKind,
}

fn method_specs(cfg: &ExperimentConfig) -> Vec<MethodSpec> {
    let mut out: Vec<MethodSpec> = Vec::new();
    let mut push = |base: String, kind: MethodKind| {
        let mut name = base.clone();
        let mut k = 2;
        while out.iter().any(|m| m.name == name) {
            name = format!("{base}-{k}");
            k += 1;
        }
        out.push(MethodSpec { name, kind });
    };
    for s in &cfg.samplers {
        let base = Algorithm::parse(&s.algorithm).map(|a| a.tag().to_string()).unwrap_or_else(|_| s.algorithm.clone());
        push(base, MethodKind::Sampler(s.clone()));
    }
    if cfg.scenario != Scenario::Gp1d {
        for b in &cfg.baselines {
            let base = Baseline::parse(b).map(|b| b.tag().to_string()).unwrap_or_else(|_| b.clone());
            push(base, MethodKind::Baseline(b.clone()));
        }
    }
    out
}

/// One problem instance the samplers and baselines are run on.
enum Problem {
    Gp1d {
        denoiser: GaussianDenoiser,
        likelihood: LinearGaussianLikelihood,
    },
    Cml {
        grid: GridSpec,
        links: Vec<LinkRecord>,
        observations: Vec<Observation>,
        denoiser: Option<std::result::Result<Box<dyn Denoiser>, String>>,
    },
}

struct MethodOutcome {
    files: Vec<(String, Vec<u8>)>,
    reductions: Vec<Reduction>,
}

/// Loads the gp1d benchmark and its stored observation vector.
pub fn load_gp_problem(dir: &Path) -> Result<(Benchmark, OraclePosterior1D)> {
    let config = BenchmarkConfig::from_json(std::str::from_utf8(&read(dir, BENCHMARK_FILE)?)?)?;
    let mut bench = Benchmark::build(config)?;
    let (_, obs) = read_observation_csv(read(dir, GP_OBSERVATIONS)?.as_slice())?;
    if obs.y.len() != bench.intervals.len() {
        bail!("observation file has {} values for {} intervals", obs.y.len(), bench.intervals.len());
    }
    bench.y = DVector::from_vec(obs.y);
    let oracle = oracle_posterior(&bench.kernel, &bench.intervals, &bench.y, &bench.grid)?;
    bench.oracle = oracle.clone();
    Ok((bench, oracle))
}

fn build_sampler_prior(source: &PriorSource, grid: &GridSpec) -> std::result::Result<Box<dyn Denoiser>, String> {
    match source {
        PriorSource::GaussianAnalytic { mean, variance, lengthscale } => GaussianDenoiser::rbf_on_grid(grid, *mean, *variance, *lengthscale)
            .map(|d| Box::new(d) as Box<dyn Denoiser>)
            .map_err(|e| e.to_string()),
        PriorSource::ExternalDenoiser { path } => load_external_denoiser(path)
            .map_err(|e| e.to_string())
            .and_then(|d| {
                if d.dim() == grid.cells() {
                    Ok(Box::new(d) as Box<dyn Denoiser>)
                } else {
                    Err(format!("external denoiser dimension {} does not match {} grid cells", d.dim(), grid.cells()))
                }
            }),
        PriorSource::CensoredGp(_) => Err("a censored-GP prior cannot drive a diffusion sampler; set sampler_prior".into()),
    }
}

fn load_problem(cfg: &ExperimentConfig, dir: &Path, needs_denoiser: bool) -> Result<Problem> {
    if cfg.scenario == Scenario::Gp1d {
        let (bench, _) = load_gp_problem(dir)?;
        let n = bench.grid.len();
        let denoiser = GaussianDenoiser::new(DVector::zeros(n), bench.prior_cov.clone())?;
        let m = bench.intervals.len();
        let likelihood = LinearGaussianLikelihood::new(bench.operator.clone(), bench.y.as_slice().to_vec(), vec![bench.config.sigma; m])?;
        return Ok(Problem::Gp1d { denoiser, likelihood });
    }
    let grid = scenario::grid_of(cfg)?;
    let links = read_topology(read(dir, TOPOLOGY_FILE)?.as_slice())?;
    let mut observations = Vec::with_capacity(cfg.n_fields);
    for i in 0..cfg.n_fields {
        let (ids, obs) = read_observation_csv(read(dir, &observation_path(i))?.as_slice())?;
        if ids.len() != links.len() || ids.iter().zip(&links).any(|(a, l)| *a != l.link_id) {
            bail!("observation file {} does not match the topology", observation_path(i));
        }
        observations.push(obs);
    }
    let denoiser = needs_denoiser.then(|| build_sampler_prior(cfg.sampler_prior.as_ref().unwrap_or(&cfg.prior), &grid));
    Ok(Problem::Cml {
        grid,
        links,
        observations,
        denoiser,
    })
}

/// Shrinks TDS particles, then step counts, until the predicted batch time
/// fits `cap`.
fn fit_to_cap(
    name: &str,
    field_index: usize,
    cfg: &SamplerConfig,
    pilot_seconds: f64,
    cap: f64,
    reductions: &mut Vec<Reduction>,
) -> SamplerConfig {
    let mut out = cfg.clone();
    let waves = cfg.batch.div_ceil(par::current_threads().max(1)) as f64;
    let mut predicted = pilot_seconds * waves;
    let is_tds = Algorithm::parse(&cfg.algorithm).is_ok_and(|a| a == Algorithm::Tds);
    while predicted > cap {
        let (parameter, from) = if is_tds && out.n_particles > 1 {
            ("n_particles", out.n_particles)
        } else if out.n_steps > MIN_STEPS {
            ("n_steps", out.n_steps)
        } else {
            break;
        };
        let to = if parameter == "n_steps" { (from / 2).max(MIN_STEPS) } else { (from / 2).max(1) };
        predicted *= to as f64 / from as f64;
        if parameter == "n_steps" {
            out.n_steps = to;
        } else {
            out.n_particles = to;
        }
        reductions.push(Reduction {
            method: name.to_string(),
            field_index,
            parameter: parameter.into(),
            from,
            to,
            predicted_seconds: predicted,
        });
    }
    out
}

fn run_capped(
    name: &str,
    field_index: usize,
    den: &dyn Denoiser,
    lik: &dyn Likelihood,
    cfg: &SamplerConfig,
    cap: f64,
    reductions: &mut Vec<Reduction>,
) -> Result<Ensemble> {
    cfg.validate()?;
    let started = Instant::now();
    run_sampler(den, lik, &cfg.clone().with_batch(1))?;
    let pilot = started.elapsed().as_secs_f64();
    let fitted = fit_to_cap(name, field_index, cfg, pilot, cap, reductions);
    Ok(run_sampler(den, lik, &fitted)?)
}

fn run_method(spec: &MethodSpec, cfg: &ExperimentConfig, problem: &Problem) -> Result<MethodOutcome> {
    let mut files = Vec::new();
    let mut reductions = Vec::new();
    let cap = cfg.runtime_cap_seconds;
    match (&spec.kind, problem) {
        (MethodKind::Sampler(s), Problem::Gp1d { denoiser, likelihood }) => {
            let sc = s.clone().with_seed(derive_seed(cfg.seed, &format!("{}-field0", spec.name)));
            let ens = run_capped(&spec.name, 0, denoiser, likelihood, &sc, cap, &mut reductions)?;
            files.push((ensemble_path(&spec.name, 0), io::vectors_to_csv(&ens.samples)?));
        }
        (MethodKind::Sampler(s), Problem::Cml { grid, links, observations, denoiser }) => {
            let den = match denoiser {
                Some(Ok(d)) => d.as_ref(),
                Some(Err(e)) => bail!("{e}"),
                None => bail!("no denoiser configured"),
            };
            let model = scenario::observation_model(grid, links)?;
            for (i, obs) in observations.iter().enumerate() {
                let lik = LinkLikelihood::new(model.clone(), obs)?;
                let sc = s.clone().with_seed(derive_seed(cfg.seed, &format!("{}-field{i}", spec.name)));
                let ens = run_capped(&spec.name, i, den, &lik, &sc, cap, &mut reductions)?;
                let clamped: Vec<DVector<f64>> = ens.samples.iter().map(|v| v.map(|x| x.max(0.0))).collect();
                files.push((ensemble_path(&spec.name, i), io::vectors_to_csv(&clamped)?));
            }
        }
        (MethodKind::Baseline(tag), Problem::Cml { grid, links, observations, .. }) => {
            let b = Baseline::parse(tag)?;
            let segs: Vec<_> = links.iter().map(LinkRecord::segment).collect();
            let params = links
                .iter()
                .map(|l| rainfield::forward::PowerLawParams::new(l.a, l.b))
                .collect::<rainfield::Result<Vec<_>>>()?;
            for (i, obs) in observations.iter().enumerate() {
                let values = b.reconstruct(grid, &segs, &obs.y, &params, &cfg.baseline_config)?;
                files.push((baseline_path(&spec.name, i), field_bytes(grid.height, grid.width, &values)?));
            }
        }
        (MethodKind::Baseline(_), Problem::Gp1d { .. }) => bail!("baselines need a link network"),
    }
    Ok(MethodOutcome { files, reductions })
}

pub fn reconstruct(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let specs = method_specs(cfg);
    let needs_denoiser = specs.iter().any(|s| matches!(s.kind, MethodKind::Sampler(_)));
    let problem = load_problem(cfg, &opts.out, needs_denoiser)?;
    let run_one = |spec: &MethodSpec| {
        let started = Instant::now();
        let result = run_method(spec, cfg, &problem);
        (result, started.elapsed().as_secs_f64())
    };
    let results: Vec<(Result<MethodOutcome>, f64)> = if opts.parallel_methods {
        std::thread::scope(|s| {
            let handles: Vec<_> = specs.iter().map(|spec| s.spawn(move || run_one(spec))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| (Err(anyhow!("method thread panicked")), 0.0)))
                .collect()
        })
    } else {
        specs.iter().map(run_one).collect()
    };
    let mut w = RunWriter::create(&opts.out, RunManifest::new("reconstruct", cfg))?;
    for (spec, (result, seconds)) in specs.iter().zip(results) {
        w.manifest.timings.push(MethodTiming {
            method: spec.name.clone(),
            seconds,
        });
        match result {
            Ok(outcome) => {
                for (rel, bytes) in &outcome.files {
                    w.write(rel, bytes)?;
                }
                w.manifest.reductions.extend(outcome.reductions);
            }
            Err(e) => {
                eprintln!("method {} failed: {e:#}", spec.name);
                w.manifest.failures.push(MethodFailure {
                    method: spec.name.clone(),
                    error: format!("{e:#}"),
                });
            }
        }
    }
    if cfg.scenario == Scenario::Gp1d && !cfg.baselines.is_empty() {
        w.manifest.notes.push("baselines skipped: the gp1d scenario has no link network".into());
    }
    if cfg.scenario != Scenario::Gp1d {
        w.manifest.notes.push("sampler ensembles are clamped at zero before writing".into());
    }
    for r in &w.manifest.reductions {
        eprintln!(
            "runtime cap: {} field {} {} {} -> {} (predicted {:.1}s)",
            r.method, r.field_index, r.parameter, r.from, r.to, r.predicted_seconds
        );
    }
    w.finish()
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleRow {
    pub method: String,
    #[serde(flatten)]
    pub metrics: rainfield::metrics::EnsembleMetrics,
}

/// Methods with outputs listed in the reconstruct manifest, in run order.
fn produced_methods(rec: &RunManifest) -> Vec<(String, bool)> {
    let mut out: Vec<(String, bool)> = Vec::new();
    for t in &rec.timings {
        let ens = rec.files.iter().any(|f| f.path.starts_with(&format!("ensembles/{}/", t.method)));
        let base = rec.files.iter().any(|f| f.path.starts_with(&format!("baselines/{}/", t.method)));
        if ens || base {
            out.push((t.method.clone(), ens));
        }
    }
    out
}

fn oracle_draws(cfg: &ExperimentConfig, dir: &Path, oracle: &OraclePosterior1D, count: usize) -> Result<Vec<DVector<f64>>> {
    let path = dir.join("oracle/draws.csv");
    if path.exists() {
        let mut draws = io::csv_to_vectors(&read(dir, "oracle/draws.csv")?)?;
        if draws.len() >= count {
            draws.truncate(count);
            return Ok(draws);
        }
    }
    Ok(oracle.sample(count, derive_seed(cfg.seed, "oracle-draws")))
}

pub fn evaluate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let dir = &opts.out;
    let rec = RunManifest::load(dir, "reconstruct")?;
    let methods = produced_methods(&rec);
    let mut w = RunWriter::create(dir, RunManifest::new("evaluate", cfg))?;
    if cfg.scenario == Scenario::Gp1d {
        let (bench, oracle) = load_gp_problem(dir)?;
        let draws = oracle_draws(cfg, dir, &oracle, cfg.sw_oracle_draws)?;
        let sw_seed = derive_seed(cfg.seed, "sliced-wasserstein");
        w.manifest.seeds.insert("sliced_wasserstein".into(), sw_seed);
        let mut rows = Vec::new();
        for (m, _) in methods.iter().filter(|(_, ens)| *ens) {
            let ens = io::csv_to_vectors(&read(dir, &ensemble_path(m, 0))?)?;
            let metrics = ensemble_metrics(&ens, &oracle, &draws, DEFAULT_PROJECTIONS, sw_seed)?;
            let mut grid_rows = Vec::new();
            let mean = ens.iter().fold(DVector::zeros(bench.grid.len()), |a, s| a + s) / ens.len() as f64;
            for (k, x) in bench.grid.iter().enumerate() {
                let mut col: Vec<f64> = ens.iter().map(|s| s[k]).collect();
                col.sort_by(f64::total_cmp);
                grid_rows.push(vec![
                    *x,
                    mean[k],
                    rainfield::metrics::quantile_sorted(&col, 0.05),
                    rainfield::metrics::quantile_sorted(&col, 0.95),
                ]);
            }
            w.write(&format!("plots/{m}/quantiles.csv"), &io::rows_to_csv(grid_rows.iter().map(|r| r.as_slice()))?)?;
            rows.push(EnsembleRow {
                method: m.clone(),
                metrics,
            });
        }
        let sd = oracle.std_dev();
        let oracle_rows: Vec<Vec<f64>> = bench.grid.iter().enumerate().map(|(k, x)| vec![*x, oracle.mean[k], sd[k]]).collect();
        w.write("plots/oracle/moments.csv", &io::rows_to_csv(oracle_rows.iter().map(|r| r.as_slice()))?)?;
        let half = draws.len() / 2;
        let floor = sliced_wasserstein(&draws[..half], &draws[half..2 * half], DEFAULT_PROJECTIONS, sw_seed)?;
        w.manifest.audits.insert("oracle_split_half_sw".into(), serde_json::json!(floor));
        let mut table = String::from("method,sliced_wasserstein,mean_l2,q05_l2,q95_l2\n");
        for r in &rows {
            let e = &r.metrics;
            table.push_str(&format!("{},{},{},{},{}\n", r.method, e.sliced_wasserstein, e.mean_l2, e.q05_l2, e.q95_l2));
        }
        w.write("metrics/ensemble.csv", table.as_bytes())?;
        w.write("metrics/ensemble.json", &json_bytes(&rows)?)?;
        return w.finish();
    }
    let grid = scenario::grid_of(cfg)?;
    let mut refs = Vec::with_capacity(cfg.n_fields);
    for i in 0..cfg.n_fields {
        let (h, wd, v) = read_field_binary(read(dir, &reference_path(i))?.as_slice())?;
        if (h, wd) != grid.shape() {
            bail!("reference {i} is {h}x{wd}, expected {:?}", grid.shape());
        }
        w.write(&format!("plots/reference/field_{i:03}.csv"), &io::field_grid_csv(grid.width, &v)?)?;
        refs.push(v);
    }
    let mut rows = Vec::new();
    for (m, is_ensemble) in &methods {
        let count = rec
            .files
            .iter()
            .filter(|f| f.path.starts_with(&format!("{}/{m}/", if *is_ensemble { "ensembles" } else { "baselines" })))
            .count();
        if count != refs.len() {
            bail!("method {m} has {count} outputs for {} reference fields", refs.len());
        }
        for (i, reference) in refs.iter().enumerate() {
            let point = if *is_ensemble {
                let ens = io::csv_to_vectors(&read(dir, &ensemble_path(m, i))?)?;
                let n = reference.len();
                if ens.is_empty() || ens.iter().any(|s| s.len() != n) {
                    bail!("ensemble {m}/{i} does not match the grid");
                }
                (ens.iter().fold(DVector::zeros(n), |a, s| a + s) / ens.len() as f64).as_slice().to_vec()
            } else {
                read_field_binary(read(dir, &baseline_path(m, i))?.as_slice())?.2
            };
            rows.push(FieldRow {
                method: m.clone(),
                field_index: i,
                metrics: field_metrics_values(&point, reference)?,
            });
            w.write(&format!("plots/{m}/field_{i:03}.csv"), &io::field_grid_csv(grid.width, &point)?)?;
        }
    }
    let report = MetricsReport::new(reference_note(cfg), rows);
    let mut fields_csv = String::from("method,field_index,rmse,pcc,cum_rain_diff\n");
    for r in &report.rows {
        let pcc = r.metrics.pcc.map(|p| p.to_string()).unwrap_or_default();
        fields_csv.push_str(&format!("{},{},{},{},{}\n", r.method, r.field_index, r.metrics.rmse, pcc, r.metrics.cum_rain_diff));
    }
    let mut agg_csv = String::from("method,metric,mean,ci95_half_width,n\n");
    for a in &report.aggregate {
        agg_csv.push_str(&format!("{},{},{},{},{}\n", a.method, a.metric, a.mean, a.ci95_half_width, a.n));
    }
    w.write("metrics/fields.csv", fields_csv.as_bytes())?;
    w.write("metrics/aggregate.csv", agg_csv.as_bytes())?;
    w.write("metrics/report.json", &json_bytes(&report)?)?;
    w.manifest.notes.push(report.header.clone());
    w.finish()
}

// ------------------------------------------------------------------ oracle

pub fn oracle(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    if cfg.scenario != Scenario::Gp1d {
        bail!("the oracle is only defined for the gp1d scenario");
    }
    let (_, oracle) = load_gp_problem(&opts.out)?;
    let mut w = RunWriter::create(&opts.out, RunManifest::new("oracle", cfg))?;
    let mut cov = oracle.cov.clone();
    linalg::mirror_upper(&mut cov);
    let seed = derive_seed(cfg.seed, "oracle-draws");
    let draws = oracle.sample(cfg.oracle_draws, seed);
    w.write("oracle/mean.csv", &io::rows_to_csv(oracle.mean.iter().map(std::slice::from_ref))?)?;
    w.write("oracle/cov.csv", &io::matrix_to_csv(&cov)?)?;
    w.write("oracle/draws.csv", &io::vectors_to_csv(&draws)?)?;
    w.manifest.seeds.insert("oracle_draws".into(), seed);
    let half = draws.len() / 2;
    if half > 0 {
        let sw_seed = derive_seed(cfg.seed, "sliced-wasserstein");
        let sw = sliced_wasserstein(&draws[..half], &draws[half..2 * half], DEFAULT_PROJECTIONS, sw_seed)?;
        w.manifest.audits.insert("split_half_sw".into(), serde_json::json!(sw));
    }
    w.finish()
}

// ------------------------------------------------------------------ em-fit

pub fn em_fit(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    if cfg.scenario == Scenario::Gp1d {
        bail!("em-fit needs gridded reference fields");
    }
    let grid = scenario::grid_of(cfg)?;
    let [h, wd] = cfg.em_fit.window;
    if h == 0 || wd == 0 || h > grid.height || wd > grid.width {
        bail!("em-fit window {h}x{wd} does not fit the {}x{} grid", grid.height, grid.width);
    }
    let mut fields = Vec::with_capacity(cfg.n_fields);
    for i in 0..cfg.n_fields {
        let (_, full_w, v) = read_field_binary(read(&opts.out, &reference_path(i))?.as_slice())?;
        let crop: Vec<f64> = (0..h).flat_map(|r| v[r * full_w..r * full_w + wd].iter().copied()).collect();
        fields.push(CensoredField::new(h, wd, crop)?);
    }
    let window = GridSpec::new(h, wd, [0.0, 0.0], grid.spacing)?;
    let em = EmConfig {
        em_iters: cfg.em_fit.em_iters,
        gibbs_sweeps: cfg.em_fit.gibbs_sweeps,
        seed: derive_seed(cfg.seed, "em-fit"),
        ..EmConfig::default()
    };
    let report = fit_censored(&window, &fields, &cfg.em_fit.beta_grid, &em)?;
    let mut w = RunWriter::create(&opts.out, RunManifest::new("em-fit", cfg))?;
    w.manifest.seeds.insert("em_fit".into(), em.seed);
    let censored = fields.iter().map(|f| f.censored_fraction()).sum::<f64>() / fields.len() as f64;
    w.manifest.audits.insert("censored_fraction".into(), serde_json::json!(censored));
    w.write("em_fit/report.json", &json_bytes(&report)?)?;
    w.finish()
}
