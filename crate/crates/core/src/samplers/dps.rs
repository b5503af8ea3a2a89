use nalgebra::DVector;
use rand::Rng;

use super::{check_finite, check_shapes, Algorithm, Ensemble, Likelihood, SampleDiagnostics, SamplerConfig};
use crate::diffusion::{BridgeStep, Denoiser, NoiseSchedule};
use crate::rng::{normal_vector, stream_rng};
use crate::{par, Result};

/// Guidance move `γ J_Dᵀ ∇_{x̂} log p(y | x̂) / ‖Σ⁻²r‖` at `x̂ = D_t(x_t)`,
/// where `r = y − M(x̂)` and `Σ⁻²r` is the precision-weighted residual.
/// Zero without observations or with a zero residual.
pub(crate) fn guidance_move(
    den: &dyn Denoiser,
    lik: &dyn Likelihood,
    sigma_t: f64,
    x_t: &DVector<f64>,
    x0: &DVector<f64>,
    gamma: f64,
) -> Result<DVector<f64>> {
    let w = lik.weighted_residual(x0);
    let norm = w.norm();
    if w.is_empty() || norm == 0.0 || gamma == 0.0 {
        return Ok(DVector::zeros(x_t.len()));
    }
    let g = lik.vjp(x0, &w);
    Ok(den.vjp(sigma_t, x_t, &g)? * (gamma / norm))
}

pub(crate) fn dps_chain<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    den: &dyn Denoiser,
    lik: &dyn Likelihood,
    gamma: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let steps = schedule.steps();
    let mut x = normal_vector(rng, den.dim()) * schedule.sigma_max();
    for t in (2..=steps).rev() {
        let st = schedule.sigma(t);
        let x0 = den.denoise(st, &x)?;
        let step = BridgeStep::new(schedule, t - 1, t)?;
        let mv = guidance_move(den, lik, st, &x, &x0, gamma)?;
        check_finite("DPS", t, "guidance", &mv)?;
        let noise = normal_vector(rng, x.len()) * step.variance.sqrt();
        x = step.mean(&x, &x0) + noise + mv;
    }
    den.denoise(schedule.sigma(1), &x)
}

/// Diffusion posterior sampling: ancestral reverse steps plus a normalized
/// likelihood-gradient move through the denoiser.
pub fn dps_sample(
    schedule: &NoiseSchedule,
    den: &dyn Denoiser,
    lik: &dyn Likelihood,
    cfg: &SamplerConfig,
) -> Result<Ensemble> {
    cfg.validate()?;
    check_shapes(den, lik)?;
    let results = par::try_map_indexed(cfg.batch, |i| {
        let mut rng = stream_rng(cfg.seed, i as u64);
        dps_chain(schedule, den, lik, cfg.gamma, &mut rng).map(|s| (s, SampleDiagnostics::default()))
    })?;
    Ensemble::from_results(Algorithm::Dps, lik, results)
}
