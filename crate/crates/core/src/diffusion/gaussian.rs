use nalgebra::{DMatrix, DVector};

use super::Denoiser;
use crate::grid::GridSpec;
use crate::linalg::psd_eigen;
use crate::rng::{normal_vector, stream_rng};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
enum Basis {
    Dense(DMatrix<f64>),
    /// `Σ_p = R ⊗ C` on a row-major `h x w` field; eigenvectors of `R`
    /// (`h x h`) and `C` (`w x w`).
    Kronecker { rows: DMatrix<f64>, cols: DMatrix<f64> },
}

/// Exact posterior-mean denoiser for a Gaussian prior `N(μ, Σ_p)`:
/// `D(σ, x) = μ + Σ_p(Σ_p + σ²I)⁻¹(x − μ)`, applied in the eigenbasis of `Σ_p`.
#[derive(Debug, Clone)]
pub struct GaussianDenoiser {
    mean: DVector<f64>,
    eigenvalues: DVector<f64>,
    basis: Basis,
}

fn check_psd(cov: &DMatrix<f64>, what: &str) -> Result<()> {
    if !cov.is_square() {
        return Err(Error::invalid(format!("{what} covariance must be square")));
    }
    let scale = cov.amax().max(1.0);
    let asym = (cov - cov.transpose()).amax();
    if asym > 1e-8 * scale {
        return Err(Error::invalid(format!("{what} covariance is not symmetric ({asym:e})")));
    }
    Ok(())
}

fn check_eigen(values: &DVector<f64>, raw_min: f64, what: &str) -> Result<()> {
    let scale = values.amax().max(1.0);
    if raw_min < -1e-8 * scale {
        return Err(Error::NotPositiveDefinite(format!("{what} covariance has eigenvalue {raw_min:e}")));
    }
    Ok(())
}

fn eigen_checked(cov: &DMatrix<f64>, what: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_psd(cov, what)?;
    let sym = (cov + cov.transpose()) * 0.5;
    let raw = nalgebra::SymmetricEigen::new(sym.clone());
    let raw_min = raw.eigenvalues.min();
    let (values, vectors) = psd_eigen(&sym);
    check_eigen(&values, raw_min, what)?;
    Ok((values, vectors))
}

impl GaussianDenoiser {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                what: "prior covariance",
                expected: mean.len(),
                found: cov.nrows(),
            });
        }
        let (eigenvalues, vectors) = eigen_checked(&cov, "prior")?;
        Ok(Self {
            mean,
            eigenvalues,
            basis: Basis::Dense(vectors),
        })
    }

    /// Separable prior on a row-major `h x w` field with covariance
    /// `row_cov ⊗ col_cov`.
    pub fn separable(mean: DVector<f64>, row_cov: &DMatrix<f64>, col_cov: &DMatrix<f64>) -> Result<Self> {
        let (h, w) = (row_cov.nrows(), col_cov.nrows());
        if mean.len() != h * w {
            return Err(Error::DimensionMismatch {
                what: "separable prior mean",
                expected: h * w,
                found: mean.len(),
            });
        }
        let (lr, ur) = eigen_checked(row_cov, "row")?;
        let (lc, uc) = eigen_checked(col_cov, "column")?;
        let eigenvalues = DVector::from_fn(h * w, |k, _| lr[k / w] * lc[k % w]);
        Ok(Self {
            mean,
            eigenvalues,
            basis: Basis::Kronecker { rows: ur, cols: uc },
        })
    }

    /// Stationary squared-exponential prior over the cell centres of `grid`
    /// with constant mean. Separable because the kernel factorizes over axes.
    pub fn rbf_on_grid(grid: &GridSpec, mean: f64, variance: f64, lengthscale: f64) -> Result<Self> {
        if !(variance > 0.0 && lengthscale > 0.0) {
            return Err(Error::invalid("rbf prior needs positive variance and lengthscale"));
        }
        let axis = |n: usize, spacing: f64, var: f64| {
            DMatrix::from_fn(n, n, |i, j| {
                let d = (i as f64 - j as f64) * spacing / lengthscale;
                var * (-0.5 * d * d).exp()
            })
        };
        let rows = axis(grid.height, grid.spacing[1], variance);
        let cols = axis(grid.width, grid.spacing[0], 1.0);
        Self::separable(DVector::from_element(grid.cells(), mean), &rows, &cols)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    fn to_coeffs(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            Basis::Dense(u) => u.tr_mul(v),
            Basis::Kronecker { rows, cols } => {
                let (h, w) = (rows.nrows(), cols.nrows());
                let x = DMatrix::from_row_slice(h, w, v.as_slice());
                let c = rows.tr_mul(&x) * cols;
                DVector::from_iterator(h * w, c.transpose().iter().copied())
            }
        }
    }

    fn from_coeffs(&self, c: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            Basis::Dense(u) => u * c,
            Basis::Kronecker { rows, cols } => {
                let (h, w) = (rows.nrows(), cols.nrows());
                let cm = DMatrix::from_row_slice(h, w, c.as_slice());
                let x = rows * cm * cols.transpose();
                DVector::from_iterator(h * w, x.transpose().iter().copied())
            }
        }
    }

    /// `f(Σ_p) v` for a spectral function `f`.
    fn filter(&self, v: &DVector<f64>, f: impl Fn(f64) -> f64) -> DVector<f64> {
        let mut c = self.to_coeffs(v);
        for (ci, l) in c.iter_mut().zip(self.eigenvalues.iter()) {
            *ci *= f(*l);
        }
        self.from_coeffs(&c)
    }

    fn check_len(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                what: "denoiser input",
                expected: self.mean.len(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `log N(x; μ, Σ_p + σ²I)`.
    pub fn log_density(&self, sigma: f64, x: &DVector<f64>) -> Result<f64> {
        self.check_len(x)?;
        let c = self.to_coeffs(&(x - &self.mean));
        let s2 = sigma * sigma;
        let mut out = -0.5 * LN_2PI * x.len() as f64;
        for (ci, l) in c.iter().zip(self.eigenvalues.iter()) {
            let v = l + s2;
            if v <= 0.0 {
                return Err(Error::NotPositiveDefinite("marginal covariance at sigma 0".into()));
            }
            out -= 0.5 * (ci * ci / v + v.ln());
        }
        Ok(out)
    }

    /// `∇_x log N(x; μ, Σ_p + σ²I)`.
    pub fn score(&self, sigma: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x)?;
        let s2 = sigma * sigma;
        Ok(-self.filter(&(x - &self.mean), |l| 1.0 / (l + s2)))
    }

    /// Dense prior covariance reconstructed from the eigenbasis.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.mean.len();
        let cols: Vec<DVector<f64>> = (0..n)
            .map(|j| {
                let mut e = DVector::zeros(n);
                e[j] = 1.0;
                self.filter(&e, |l| l)
            })
            .collect();
        let mut m = DMatrix::from_columns(&cols);
        crate::linalg::mirror_upper(&mut m);
        m
    }

    /// Exact prior draw `μ + Σ_p^{1/2} z`.
    pub fn sample_prior(&self, seed: u64, stream: u64) -> DVector<f64> {
        let z = normal_vector(&mut stream_rng(seed, stream), self.mean.len());
        let c = z.component_mul(&self.eigenvalues.map(f64::sqrt));
        &self.mean + self.from_coeffs(&c)
    }
}

impl Denoiser for GaussianDenoiser {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn denoise(&self, sigma: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x)?;
        if !(sigma >= 0.0) {
            return Err(Error::invalid(format!("noise level must be non-negative, got {sigma}")));
        }
        if sigma == 0.0 {
            return Ok(x.clone());
        }
        let s2 = sigma * sigma;
        Ok(&self.mean + self.filter(&(x - &self.mean), |l| l / (l + s2)))
    }

    /// `Σ_p(Σ_p + σ²I)⁻¹ v`; the Jacobian is symmetric.
    fn vjp(&self, sigma: f64, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x)?;
        if sigma == 0.0 {
            return Ok(v.clone());
        }
        let s2 = sigma * sigma;
        Ok(self.filter(v, |l| l / (l + s2)))
    }

    fn exact_vjp(&self) -> bool {
        true
    }
}

/// Clamps a denoiser's output at zero, for non-negative rain fields.
#[derive(Debug, Clone)]
pub struct NonNegative<D>(pub D);

impl<D: Denoiser> Denoiser for NonNegative<D> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn denoise(&self, sigma: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.0.denoise(sigma, x)?.map(|v| v.max(0.0)))
    }

    fn vjp(&self, sigma: f64, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let out = self.0.denoise(sigma, x)?;
        let masked = v.zip_map(&out, |vi, oi| if oi > 0.0 { vi } else { 0.0 });
        self.0.vjp(sigma, x, &masked)
    }

    fn exact_vjp(&self) -> bool {
        self.0.exact_vjp()
    }
}
