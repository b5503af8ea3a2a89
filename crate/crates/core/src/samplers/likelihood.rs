use nalgebra::{DMatrix, DVector};

use crate::forward::{gaussian_log_density, Observation, ObservationModel};
use crate::{Error, Result};

/// Gaussian observation model `y ~ N(M(x_0), diag σ²)` seen by the samplers.
pub trait Likelihood: Send + Sync {
    /// Length of the state `x_0`.
    fn dim(&self) -> usize;

    fn observations(&self) -> &[f64];

    fn noise_sigmas(&self) -> &[f64];

    /// Noise-free prediction `M(x_0)`.
    fn predict(&self, x0: &DVector<f64>) -> DVector<f64>;

    /// Transposed Jacobian of [`Likelihood::predict`] at `x0` applied to `v`.
    fn vjp(&self, x0: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;

    /// Exact `log N(y; M(x_0), diag σ²)`.
    fn log_density(&self, x0: &DVector<f64>) -> f64 {
        let pred = self.predict(x0);
        gaussian_log_density(self.observations(), pred.as_slice(), self.noise_sigmas())
    }

    /// Precision-weighted residual `(y − M(x_0)) / σ²`.
    fn weighted_residual(&self, x0: &DVector<f64>) -> DVector<f64> {
        let pred = self.predict(x0);
        let y = self.observations();
        let s = self.noise_sigmas();
        DVector::from_fn(y.len(), |i, _| (y[i] - pred[i]) / (s[i] * s[i]))
    }

    /// `∇_{x_0} log p(y | x_0)`.
    fn gradient(&self, x0: &DVector<f64>) -> DVector<f64> {
        self.vjp(x0, &self.weighted_residual(x0))
    }
}

fn check_sigmas(sigmas: &[f64]) -> Result<()> {
    match sigmas.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        Some(index) => Err(Error::DegenerateNoise { index }),
        None => Ok(()),
    }
}

/// No observations: a constant likelihood.
#[derive(Debug, Clone)]
pub struct NoObservations {
    pub dim: usize,
}

impl Likelihood for NoObservations {
    fn dim(&self) -> usize {
        self.dim
    }
    fn observations(&self) -> &[f64] {
        &[]
    }
    fn noise_sigmas(&self) -> &[f64] {
        &[]
    }
    fn predict(&self, _x0: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn vjp(&self, _x0: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
}

/// `y = A x_0 + diag(σ) z`.
#[derive(Debug, Clone)]
pub struct LinearGaussianLikelihood {
    operator: DMatrix<f64>,
    y: Vec<f64>,
    sigmas: Vec<f64>,
}

impl LinearGaussianLikelihood {
    pub fn new(operator: DMatrix<f64>, y: Vec<f64>, sigmas: Vec<f64>) -> Result<Self> {
        if y.len() != operator.nrows() || sigmas.len() != operator.nrows() {
            return Err(Error::DimensionMismatch {
                what: "linear observations",
                expected: operator.nrows(),
                found: if y.len() != operator.nrows() { y.len() } else { sigmas.len() },
            });
        }
        check_sigmas(&sigmas)?;
        Ok(Self { operator, y, sigmas })
    }

    pub fn operator(&self) -> &DMatrix<f64> {
        &self.operator
    }

    /// Exact posterior `N(m, C)` under a Gaussian prior `N(μ, Σ)`.
    pub fn conjugate_posterior(
        &self,
        prior_mean: &DVector<f64>,
        prior_cov: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let a = &self.operator;
        let mut s = a * prior_cov * a.transpose();
        for (i, sig) in self.sigmas.iter().enumerate() {
            s[(i, i)] += sig * sig;
        }
        let chol = nalgebra::Cholesky::new(s).ok_or_else(|| Error::Singular("observation covariance".into()))?;
        let y = DVector::from_column_slice(&self.y);
        let gain_t = chol.solve(&(a * prior_cov));
        let mean = prior_mean + gain_t.tr_mul(&(y - a * prior_mean));
        let mut cov = prior_cov - (a * prior_cov).tr_mul(&gain_t);
        crate::linalg::mirror_upper(&mut cov);
        Ok((mean, cov))
    }
}

impl Likelihood for LinearGaussianLikelihood {
    fn dim(&self) -> usize {
        self.operator.ncols()
    }
    fn observations(&self) -> &[f64] {
        &self.y
    }
    fn noise_sigmas(&self) -> &[f64] {
        &self.sigmas
    }
    fn predict(&self, x0: &DVector<f64>) -> DVector<f64> {
        &self.operator * x0
    }
    fn vjp(&self, _x0: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.operator.tr_mul(v)
    }
}

/// Link observations through the power-law path-integral operator.
/// Negative state entries are treated as zero rain.
#[derive(Debug, Clone)]
pub struct LinkLikelihood {
    model: ObservationModel,
    y: Vec<f64>,
}

impl LinkLikelihood {
    pub fn new(model: ObservationModel, obs: &Observation) -> Result<Self> {
        if obs.y.len() != model.links() {
            return Err(Error::DimensionMismatch {
                what: "observation",
                expected: model.links(),
                found: obs.y.len(),
            });
        }
        check_sigmas(model.sigmas())?;
        Ok(Self { model, y: obs.y.clone() })
    }

    pub fn model(&self) -> &ObservationModel {
        &self.model
    }
}

impl Likelihood for LinkLikelihood {
    fn dim(&self) -> usize {
        self.model.grid.cells()
    }
    fn observations(&self) -> &[f64] {
        &self.y
    }
    fn noise_sigmas(&self) -> &[f64] {
        self.model.sigmas()
    }
    fn predict(&self, x0: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.model.forward_clamped(x0.as_slice()))
    }
    fn vjp(&self, x0: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.model.vjp_clamped(x0.as_slice(), v.as_slice()))
    }
}
