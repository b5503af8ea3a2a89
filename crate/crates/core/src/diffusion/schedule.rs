use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Increasing noise levels `0 = σ_0 < σ_1 < … < σ_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigmas: Vec<f64>,
    pub rho: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl NoiseSchedule {
    /// Number of positive levels `T`.
    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[self.steps()]
    }
}

/// Karras (EDM) spacing: `σ_i = (σ_max^{1/ρ} + (1 − i/(T−1))(σ_min^{1/ρ} − σ_max^{1/ρ}))^ρ`
/// over `T` positive levels in increasing order, with `σ_0 = 0` prepended.
/// `T = 1` yields the single level `σ_max`.
pub fn karras_schedule(steps: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one level"));
    }
    if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
        return Err(Error::invalid(format!(
            "schedule needs 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"
        )));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::invalid(format!("rho must be positive, got {rho}")));
    }
    let mut sigmas = Vec::with_capacity(steps + 1);
    sigmas.push(0.0);
    if steps == 1 {
        sigmas.push(sigma_max);
    } else {
        let (lo, hi) = (sigma_min.powf(1.0 / rho), sigma_max.powf(1.0 / rho));
        let last = (steps - 1) as f64;
        for i in 0..steps {
            let sigma = if i == 0 {
                sigma_min
            } else if i == steps - 1 {
                sigma_max
            } else {
                (hi + (1.0 - i as f64 / last) * (lo - hi)).powf(rho)
            };
            sigmas.push(sigma);
        }
    }
    if let Some(i) = sigmas.windows(2).position(|w| !(w[0] < w[1])) {
        return Err(Error::invalid(format!("schedule is not strictly increasing at level {}", i + 1)));
    }
    Ok(NoiseSchedule {
        sigmas,
        rho,
        sigma_min,
        sigma_max,
    })
}
