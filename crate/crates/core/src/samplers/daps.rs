use nalgebra::DVector;
use rand::Rng;

use super::{check_shapes, Algorithm, Ensemble, Likelihood, SampleDiagnostics, SamplerConfig};
use crate::diffusion::{karras_schedule, Denoiser, NoiseSchedule};
use crate::rng::{normal_vector, stream_rng};
use crate::{par, Error, Result};

const DIVERGENCE_NORM: f64 = 1e6;

/// Deterministic Euler pass of the probability-flow ODE from `sigma` to 0
/// over `n_ode` Karras sub-levels.
fn ode_denoise(
    den: &dyn Denoiser,
    x: &DVector<f64>,
    sigma: f64,
    n_ode: usize,
    sigma_min: f64,
    rho: f64,
) -> Result<DVector<f64>> {
    let sub = if sigma > sigma_min * (1.0 + 1e-4) {
        karras_schedule(n_ode, sigma_min, sigma, rho)?.sigmas
    } else {
        vec![0.0, sigma]
    };
    let mut x = x.clone();
    for k in (1..sub.len()).rev() {
        let (s1, s0) = (sub[k], sub[k - 1]);
        let d = den.denoise(s1, &x)?;
        x = &x + (&x - d) * ((s0 - s1) / s1);
    }
    Ok(x)
}

fn daps_chain<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    den: &dyn Denoiser,
    lik: &dyn Likelihood,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let steps = schedule.steps();
    let mut x = normal_vector(rng, den.dim()) * schedule.sigma_max();
    let mut x0 = x.clone();
    for (i, t) in (1..=steps).rev().enumerate() {
        let st = schedule.sigma(t);
        let x0_hat = ode_denoise(den, &x, st, cfg.n_ode, schedule.sigma_min, schedule.rho)?;
        let r2 = (st * st).max(cfg.min_ratio);
        let eta = cfg.eta0 * (1.0 + (i as f64 / steps as f64) * (cfg.min_ratio - 1.0));
        x0 = x0_hat.clone();
        if eta > 0.0 {
            let noise_scale = (2.0 * eta).sqrt();
            for _ in 0..cfg.mcmc_steps {
                let grad = lik.gradient(&x0) - (&x0 - &x0_hat) / r2;
                x0 += grad * eta + normal_vector(rng, x0.len()) * noise_scale;
                let norm = x0.norm();
                if !norm.is_finite() || norm > DIVERGENCE_NORM {
                    return Err(Error::Diverged {
                        sampler: "DAPS",
                        step: t,
                        norm,
                    });
                }
            }
        }
        if t > 1 {
            x = &x0 + normal_vector(rng, x0.len()) * schedule.sigma(t - 1);
        }
    }
    Ok(x0)
}

/// Decoupled annealing: at each level, an ODE estimate of `x_0`, unadjusted
/// Langevin steps on `log p(y|x_0) + log N(x_0; x̂_0, r_t² I)` with
/// `r_t² = max(σ_t², min_ratio)`, then re-noising to the next level. The
/// step size decays linearly from `eta0` to `eta0 · min_ratio`.
pub fn daps_sample(
    schedule: &NoiseSchedule,
    den: &dyn Denoiser,
    lik: &dyn Likelihood,
    cfg: &SamplerConfig,
) -> Result<Ensemble> {
    cfg.validate()?;
    check_shapes(den, lik)?;
    let results = par::try_map_indexed(cfg.batch, |i| {
        let mut rng = stream_rng(cfg.seed, i as u64);
        daps_chain(schedule, den, lik, cfg, &mut rng).map(|s| (s, SampleDiagnostics::default()))
    })?;
    Ensemble::from_results(Algorithm::Daps, lik, results)
}
