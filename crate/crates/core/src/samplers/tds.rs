use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::dps::guidance_move;
use super::{check_finite, check_shapes, Algorithm, Ensemble, Likelihood, SampleDiagnostics, SamplerConfig};
use crate::diffusion::{BridgeStep, Denoiser, NoiseSchedule};
use crate::forward::gaussian_log_density;
use crate::rng::{normal_vector, stream_rng};
use crate::{par, Error, Result};

/// Normalized weights and effective sample size from log-weights, computed
/// relative to the maximum. `None` if no weight is finite.
pub fn normalize_log_weights(log_w: &[f64]) -> Option<(Vec<f64>, f64)> {
    let max = log_w.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut w: Vec<f64> = log_w
        .iter()
        .map(|v| if v.is_nan() { 0.0 } else { (v - max).exp() })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    let ess = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
    Some((w, ess))
}

fn multinomial<R: Rng + ?Sized>(w: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let dist = WeightedIndex::new(w).expect("normalized weights are valid");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Intermediate likelihood surrogate `N(y; M(x̂), diag(σ_i² + (τσ_t)²))`.
fn log_twist(lik: &dyn Likelihood, x0: &DVector<f64>, tau: f64, sigma_t: f64) -> f64 {
    let extra = (tau * sigma_t).powi(2);
    let sig: Vec<f64> = lik.noise_sigmas().iter().map(|s| (s * s + extra).sqrt()).collect();
    gaussian_log_density(lik.observations(), lik.predict(x0).as_slice(), &sig)
}

struct Particle {
    x: DVector<f64>,
    x0: DVector<f64>,
    log_twist: f64,
}

fn tds_run<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    den: &dyn Denoiser,
    lik: &dyn Likelihood,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(DVector<f64>, SampleDiagnostics)> {
    let steps = schedule.steps();
    let n = cfg.n_particles;
    let st = schedule.sigma_max();
    let mut particles = Vec::with_capacity(n);
    for _ in 0..n {
        let x = normal_vector(rng, den.dim()) * st;
        let x0 = den.denoise(st, &x)?;
        let lt = log_twist(lik, &x0, cfg.tau, st);
        particles.push(Particle { x, x0, log_twist: lt });
    }
    let mut log_w: Vec<f64> = particles.iter().map(|p| p.log_twist).collect();
    let mut diag = SampleDiagnostics::default();

    for t in (2..=steps).rev() {
        let (w, ess) = normalize_log_weights(&log_w).ok_or(Error::WeightUnderflow { step: t })?;
        diag.ess_trace.push(ess);
        if ess < n as f64 / 2.0 {
            let idx = multinomial(&w, n, rng);
            particles = idx
                .into_iter()
                .map(|k| Particle {
                    x: particles[k].x.clone(),
                    x0: particles[k].x0.clone(),
                    log_twist: particles[k].log_twist,
                })
                .collect();
            log_w = vec![0.0; n];
            diag.resamples += 1;
        }
        let sigma_t = schedule.sigma(t);
        let sigma_l = schedule.sigma(t - 1);
        let step = BridgeStep::new(schedule, t - 1, t)?;
        let sd = step.variance.sqrt();
        for (p, lw) in particles.iter_mut().zip(log_w.iter_mut()) {
            let mean = step.mean(&p.x, &p.x0);
            let mv = guidance_move(den, lik, sigma_t, &p.x, &p.x0, cfg.gamma)?;
            check_finite("TDS", t, "guidance", &mv)?;
            let z = normal_vector(rng, p.x.len());
            let noise = z * sd;
            let xn = &mean + &noise + &mv;
            // proposal N(mean + mv, v) versus prior kernel N(mean, v)
            let d_prior = &noise + &mv;
            let log_prior_over_proposal = if step.variance > 0.0 {
                (noise.norm_squared() - d_prior.norm_squared()) / (2.0 * step.variance)
            } else {
                0.0
            };
            let x0n = den.denoise(sigma_l, &xn)?;
            let lt = log_twist(lik, &x0n, cfg.tau, sigma_l);
            *lw += lt - p.log_twist + log_prior_over_proposal;
            *p = Particle {
                x: xn,
                x0: x0n,
                log_twist: lt,
            };
        }
    }
    let (w, _) = normalize_log_weights(&log_w).ok_or(Error::WeightUnderflow { step: 1 })?;
    let pick = if n == 1 { 0 } else { multinomial(&w, 1, rng)[0] };
    Ok((particles.swap_remove(pick).x0, diag))
}

/// Twisted sequential Monte Carlo: DPS-guided proposals reweighted by an
/// inflated-noise intermediate likelihood, with multinomial resampling when
/// the effective sample size drops below half the particle count.
///
/// Each ensemble member is one independent particle system of
/// `cfg.n_particles` particles, resolved to a single draw by a final
/// weighted pick.
pub fn tds_sample(
    schedule: &NoiseSchedule,
    den: &dyn Denoiser,
    lik: &dyn Likelihood,
    cfg: &SamplerConfig,
) -> Result<Ensemble> {
    cfg.validate()?;
    check_shapes(den, lik)?;
    let results = par::try_map_indexed(cfg.batch, |i| {
        let mut rng = stream_rng(cfg.seed, i as u64);
        tds_run(schedule, den, lik, cfg, &mut rng)
    })?;
    Ensemble::from_results(Algorithm::Tds, lik, results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_normalize() {
        let (w, ess) = normalize_log_weights(&[0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(w.iter().all(|v| (*v - 0.25).abs() < 1e-15));
        assert!((ess - 4.0).abs() < 1e-12);
        let (w, ess) = normalize_log_weights(&[-1e6, 0.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(w[1], 1.0);
        assert!((ess - 1.0).abs() < 1e-12);
        assert!(normalize_log_weights(&[f64::NEG_INFINITY; 3]).is_none());
        assert!(normalize_log_weights(&[-800.0, -801.0]).is_some());
    }
}
