#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use rainfield::samplers::{Algorithm, SamplerConfig};
use rainfield_cli::commands::{evaluate, reconstruct, simulate, RunOptions};
use rainfield_cli::config::{GridConfig, TopologySource};
use rainfield_cli::{ExperimentConfig, RunManifest};

pub fn quick_sampler(alg: Algorithm) -> SamplerConfig {
    let mut s = SamplerConfig::cml(alg).with_batch(4);
    s.n_steps = 40;
    s.mcmc_steps = 5;
    s.n_particles = s.n_particles.min(4);
    s
}

/// A 12x16 synthetic CML scene that runs end to end in well under a second.
pub fn small_cml() -> ExperimentConfig {
    ExperimentConfig {
        grid: GridConfig {
            height: 12,
            width: 16,
            spacing: 1.0,
        },
        topology: TopologySource::Synthesize { links: 20 },
        samplers: vec![quick_sampler(Algorithm::Dps), quick_sampler(Algorithm::Tds)],
        n_fields: 2,
        seed: 3,
        ..ExperimentConfig::default()
    }
}

pub fn opts(dir: &Path) -> RunOptions {
    RunOptions {
        out: dir.to_path_buf(),
        parallel_methods: false,
    }
}

pub struct Run {
    pub simulate: RunManifest,
    pub reconstruct: RunManifest,
    pub evaluate: RunManifest,
}

impl Run {
    /// Every output hash of the three stages, keyed by `stage:path`.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        [&self.simulate, &self.reconstruct, &self.evaluate]
            .iter()
            .flat_map(|m| m.hashes().into_iter().map(move |(k, v)| (format!("{}:{k}", m.command), v)))
            .collect()
    }
}

pub fn run_pipeline(cfg: &ExperimentConfig, o: &RunOptions) -> Run {
    Run {
        simulate: simulate(cfg, o).unwrap(),
        reconstruct: reconstruct(cfg, o).unwrap(),
        evaluate: evaluate(cfg, o).unwrap(),
    }
}

pub fn in_tempdir(cfg: &ExperimentConfig, parallel_methods: bool) -> (tempfile::TempDir, Run) {
    let dir = tempfile::tempdir().unwrap();
    let o = RunOptions {
        parallel_methods,
        ..opts(dir.path())
    };
    let run = run_pipeline(cfg, &o);
    (dir, run)
}
