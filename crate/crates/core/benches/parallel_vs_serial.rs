use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;
use rainfield::baselines::{ordinary_krige, Variogram, VirtualGauge};
use rainfield::diffusion::{ancestral_sample, karras_schedule, GaussianDenoiser};
use rainfield::forward::{NoiseModel, ObservationModel, PowerLawParams, RainField};
use rainfield::grid::{build_network_weights, GridSpec, LinkSegment};
use rainfield::metrics::sliced_wasserstein;
use rainfield::par;
use rainfield::rng::stream_rng;
use rainfield::samplers::{run_sampler, Algorithm, LinkLikelihood, SamplerConfig};
use rand::Rng;

const MODES: [(&str, Option<usize>); 2] = [("serial", Some(1)), ("parallel", None)];

fn run_mode<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(t) => par::with_threads(t, f),
        None => f(),
    }
}

fn segments(grid: &GridSpec, n: usize, seed: u64) -> Vec<LinkSegment> {
    let mut rng = stream_rng(seed, 0);
    let (w, h) = (grid.width as f64, grid.height as f64);
    (0..n)
        .map(|_| {
            LinkSegment::new(
                [rng.random_range(0.0..w), rng.random_range(0.0..h)],
                [rng.random_range(0.0..w), rng.random_range(0.0..h)],
            )
        })
        .collect()
}

fn bench_geometry(c: &mut Criterion) {
    let grid = GridSpec::unit(36, 48);
    let segs = segments(&grid, 400, 1);
    let mut g = c.benchmark_group("build_network_weights");
    for (name, threads) in MODES {
        g.bench_function(BenchmarkId::new(name, segs.len()), |b| {
            b.iter(|| run_mode(threads, || build_network_weights(&grid, &segs).unwrap()))
        });
    }
    g.finish();
}

fn bench_ancestral(c: &mut Criterion) {
    let grid = GridSpec::unit(12, 16);
    let den = GaussianDenoiser::rbf_on_grid(&grid, 1.0, 1.0, 3.0).unwrap();
    let schedule = karras_schedule(50, 2e-3, 80.0, 7.0).unwrap();
    let mut g = c.benchmark_group("ancestral_sample");
    g.sample_size(10);
    for (name, threads) in MODES {
        g.bench_function(BenchmarkId::new(name, 32), |b| {
            b.iter(|| run_mode(threads, || ancestral_sample(&schedule, &den, 3, 32).unwrap()))
        });
    }
    g.finish();
}

fn bench_dps(c: &mut Criterion) {
    let grid = GridSpec::unit(12, 16);
    let den = GaussianDenoiser::rbf_on_grid(&grid, 1.0, 1.0, 3.0).unwrap();
    let segs = segments(&grid, 20, 2);
    let params = vec![PowerLawParams::new(0.3, 1.1).unwrap(); segs.len()];
    let model = ObservationModel::from_segments(grid, &segs, params, NoiseModel::isotropic(0.1, segs.len())).unwrap();
    let obs = model.sample_observation(&RainField::constant(grid, 1.0).unwrap(), 4).unwrap();
    let lik = LinkLikelihood::new(model, &obs).unwrap();
    let mut cfg = SamplerConfig::cml(Algorithm::Dps).with_batch(8);
    cfg.n_steps = 50;
    let mut g = c.benchmark_group("dps_batch");
    g.sample_size(10);
    for (name, threads) in MODES {
        g.bench_function(BenchmarkId::new(name, cfg.batch), |b| {
            b.iter(|| run_mode(threads, || run_sampler(&den, &lik, &cfg).unwrap()))
        });
    }
    g.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let mut rng = stream_rng(5, 0);
    let mut draws = |n: usize| -> Vec<DVector<f64>> {
        (0..n).map(|_| DVector::from_fn(50, |_, _| rng.random_range(-1.0..1.0))).collect()
    };
    let (a, b) = (draws(500), draws(500));
    let mut g = c.benchmark_group("sliced_wasserstein");
    for (name, threads) in MODES {
        g.bench_function(BenchmarkId::new(name, 128), |bench| {
            bench.iter(|| run_mode(threads, || sliced_wasserstein(&a, &b, 128, 0).unwrap()))
        });
    }
    g.finish();
}

fn bench_kriging(c: &mut Criterion) {
    let grid = GridSpec::unit(36, 48);
    let mut rng = stream_rng(6, 0);
    let gauges: Vec<VirtualGauge> = (0..60)
        .map(|_| VirtualGauge::new([rng.random_range(0.0..48.0), rng.random_range(0.0..36.0)], rng.random_range(0.0..5.0)).unwrap())
        .collect();
    let vario = Variogram::new(0.1, 1.0, 6.0).unwrap();
    let mut g = c.benchmark_group("ordinary_krige");
    for (name, threads) in MODES {
        g.bench_function(BenchmarkId::new(name, gauges.len()), |b| {
            b.iter(|| run_mode(threads, || ordinary_krige(&gauges, &grid, &vario).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_geometry, bench_ancestral, bench_dps, bench_metrics, bench_kriging);
criterion_main!(benches);
