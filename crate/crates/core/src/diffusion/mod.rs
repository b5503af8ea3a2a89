//! Variance-exploding diffusion: noise schedules, bridge kernels, the denoiser
//! interface and unconditional ancestral sampling.
//!
//! Level `t` corrupts `x_0` as `x_t = x_0 + σ_t ε`. Reverse steps draw from the
//! bridge `q_{ℓ|0,t}(· | D_t(x_t), x_t)`.

mod external;
mod gaussian;
mod schedule;

use nalgebra::DVector;
use rand::Rng;

pub use external::{load_external_denoiser, DenoiserGraph, GraphNode};
pub use gaussian::{GaussianDenoiser, NonNegative};
pub use schedule::{karras_schedule, NoiseSchedule};

use crate::rng::{normal_vector, stream_rng};
use crate::{par, Error, Result};

/// Posterior-mean predictor `D(σ, x) ≈ E[x_0 | x_σ = x]`.
///
/// Implementations must be callable concurrently on distinct states.
pub trait Denoiser: Send + Sync {
    /// State dimension.
    fn dim(&self) -> usize;

    fn denoise(&self, sigma: f64, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Transposed Jacobian of `denoise` at `x`, applied to `v`. The default is
    /// the identity surrogate, which treats `D` as locally input-preserving.
    fn vjp(&self, sigma: f64, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let _ = (sigma, x);
        Ok(v.clone())
    }

    /// Whether [`Denoiser::vjp`] is exact rather than the identity surrogate.
    fn exact_vjp(&self) -> bool {
        false
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn denoise(&self, sigma: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).denoise(sigma, x)
    }
    fn vjp(&self, sigma: f64, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).vjp(sigma, x, v)
    }
    fn exact_vjp(&self) -> bool {
        (**self).exact_vjp()
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn denoise(&self, sigma: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).denoise(sigma, x)
    }
    fn vjp(&self, sigma: f64, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).vjp(sigma, x, v)
    }
    fn exact_vjp(&self) -> bool {
        (**self).exact_vjp()
    }
}

/// Mean and variance of `q_{ℓ|0,t}`: the mean is `γ x_t + (1-γ) x̂_0` and the
/// variance is `σ_ℓ²(1-γ)` with `γ = σ_ℓ²/σ_t²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeStep {
    pub gamma: f64,
    pub variance: f64,
}

impl BridgeStep {
    pub fn new(schedule: &NoiseSchedule, l: usize, t: usize) -> Result<Self> {
        if l >= t || t > schedule.steps() {
            return Err(Error::InvalidLevel { l, t });
        }
        let (sl, st) = (schedule.sigma(l), schedule.sigma(t));
        let gamma = (sl * sl) / (st * st);
        Ok(Self {
            gamma,
            variance: sl * sl * (1.0 - gamma),
        })
    }

    pub fn mean(&self, x_t: &DVector<f64>, x0_hat: &DVector<f64>) -> DVector<f64> {
        x_t * self.gamma + x0_hat * (1.0 - self.gamma)
    }
}

/// One draw from the bridge kernel between levels `l < t`. `l = 0` returns
/// `x0_hat` exactly.
pub fn bridge_sample<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    l: usize,
    t: usize,
    x0_hat: &DVector<f64>,
    x_t: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let step = BridgeStep::new(schedule, l, t)?;
    let mean = step.mean(x_t, x0_hat);
    if step.variance == 0.0 {
        return Ok(mean);
    }
    Ok(mean + normal_vector(rng, x_t.len()) * step.variance.sqrt())
}

/// Unconditional reverse diffusion for `batch` independent chains. Chain `i`
/// uses RNG stream `i` of `seed`; the last step returns `D` at level 1.
pub fn ancestral_sample<D: Denoiser + ?Sized>(
    schedule: &NoiseSchedule,
    den: &D,
    seed: u64,
    batch: usize,
) -> Result<Vec<DVector<f64>>> {
    par::try_map_indexed(batch, |i| {
        let mut rng = stream_rng(seed, i as u64);
        ancestral_chain(schedule, den, &mut rng)
    })
}

pub(crate) fn ancestral_chain<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    den: &D,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let steps = schedule.steps();
    let mut x = normal_vector(rng, den.dim()) * schedule.sigma_max();
    for t in (2..=steps).rev() {
        let x0 = den.denoise(schedule.sigma(t), &x)?;
        x = bridge_sample(schedule, t - 1, t, &x0, &x, rng)?;
    }
    den.denoise(schedule.sigma(1), &x)
}
