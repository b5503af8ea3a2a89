use nalgebra::DVector;
use rand::Rng;

use super::{check_shapes, Algorithm, Ensemble, Likelihood, SampleDiagnostics, SamplerConfig};
use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::rng::{normal_vector, stream_rng};
use crate::{par, Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn reddiff_member<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    den: &dyn Denoiser,
    lik: &dyn Likelihood,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let smax = schedule.sigma_max();
    let mut mu = den.denoise(smax, &(normal_vector(rng, den.dim()) * smax))?;
    let mut m1 = DVector::zeros(mu.len());
    let mut m2 = DVector::zeros(mu.len());
    for (k, t) in (1..=schedule.steps()).rev().enumerate() {
        let st = schedule.sigma(t);
        let xt = &mu + normal_vector(rng, mu.len()) * st;
        let prior_term = &mu - den.denoise(st, &xt)?;
        let mut grad = prior_term * cfg.grad_term_weight;
        if cfg.obs_weight != 0.0 {
            grad -= lik.gradient(&mu) * cfg.obs_weight;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                sampler: "RedDiff",
                step: t,
                detail: "loss gradient".into(),
            });
        }
        m1 = m1 * BETA1 + &grad * (1.0 - BETA1);
        m2 = m2 * BETA2 + grad.map(|g| g * g) * (1.0 - BETA2);
        let c1 = 1.0 - BETA1.powi(k as i32 + 1);
        let c2 = 1.0 - BETA2.powi(k as i32 + 1);
        mu -= m1.zip_map(&m2, |a, b| cfg.lr * (a / c1) / ((b / c2).sqrt() + ADAM_EPS));
    }
    Ok(mu)
}

/// Variational regularization: Adam on a mean field `μ` with loss gradient
/// `obs_weight · (−∇ log p(y|μ)) + grad_term_weight · (μ − D_t(μ + σ_t ε))`
/// over descending levels, fresh `ε` each step.
pub fn reddiff_sample(
    schedule: &NoiseSchedule,
    den: &dyn Denoiser,
    lik: &dyn Likelihood,
    cfg: &SamplerConfig,
) -> Result<Ensemble> {
    cfg.validate()?;
    check_shapes(den, lik)?;
    let results = par::try_map_indexed(cfg.batch, |i| {
        let mut rng = stream_rng(cfg.seed, i as u64);
        reddiff_member(schedule, den, lik, cfg, &mut rng).map(|s| (s, SampleDiagnostics::default()))
    })?;
    Ensemble::from_results(Algorithm::RedDiff, lik, results)
}
