//! One-dimensional Gaussian-process benchmark with interval-integral
//! observations `y_i = ∫_{a_i}^{b_i} x(s) ds + σ z_i` and its closed-form
//! posterior.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::linalg::{cholesky_jittered, mirror_upper, psd_eigen};
use crate::rng::{normal_vector, stream_rng};
use crate::{par, Error, Result};

pub const DOMAIN: (f64, f64) = (-5.0, 5.0);
pub const JITTER: f64 = 1e-10;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel1D {
    pub lengthscale: f64,
    pub variance: f64,
}

impl RbfKernel1D {
    pub fn new(lengthscale: f64, variance: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::invalid(format!("lengthscale must be positive, got {lengthscale}")));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::invalid(format!("variance must be positive, got {variance}")));
        }
        Ok(Self { lengthscale, variance })
    }

    pub fn eval(&self, s: f64, t: f64) -> f64 {
        let d = (s - t) / self.lengthscale;
        self.variance * (-0.5 * d * d).exp()
    }

    /// `∫_a^b k(s, s') ds'`.
    pub fn interval_integral(&self, a: f64, b: f64, s: f64) -> f64 {
        let l = self.lengthscale;
        let c = SQRT_2 * l;
        self.variance * l * (std::f64::consts::PI / 2.0).sqrt() * (erf((b - s) / c) - erf((a - s) / c))
    }

    /// `∫_{a_i}^{b_i} ∫_{a_j}^{b_j} k(s, s') ds' ds`.
    pub fn double_integral(&self, (ai, bi): (f64, f64), (aj, bj): (f64, f64)) -> f64 {
        let l = self.lengthscale;
        let h = |z: f64| z * erf(z / (SQRT_2 * l)) + (2.0 / std::f64::consts::PI).sqrt() * l * (-z * z / (2.0 * l * l)).exp();
        self.variance
            * l
            * (std::f64::consts::PI / 2.0).sqrt()
            * (h(bi - aj) - h(ai - aj) - h(bi - bj) + h(ai - bj))
    }

    /// Gram matrix on `points`, without jitter.
    pub fn gram(&self, points: &[f64]) -> DMatrix<f64> {
        let n = points.len();
        let mut k = DMatrix::from_fn(n, n, |i, j| self.eval(points[i], points[j]));
        mirror_upper(&mut k);
        k
    }
}

pub fn kernel_interval_integral(kernel: &RbfKernel1D, interval: (f64, f64), s: f64) -> f64 {
    kernel.interval_integral(interval.0, interval.1, s)
}

pub fn kernel_double_integral(kernel: &RbfKernel1D, i: (f64, f64), j: (f64, f64)) -> f64 {
    kernel.double_integral(i, j)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    pub intervals: Vec<(f64, f64)>,
    pub noise_sigma: f64,
}

impl IntervalSet {
    pub fn new(intervals: Vec<(f64, f64)>, noise_sigma: f64) -> Result<Self> {
        for (i, &(a, b)) in intervals.iter().enumerate() {
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::NonFiniteCoordinate("interval"));
            }
            if a > b {
                return Err(Error::invalid(format!("interval {i} has a > b ({a} > {b})")));
            }
            if a < DOMAIN.0 || b > DOMAIN.1 {
                return Err(Error::invalid(format!("interval {i} [{a}, {b}] leaves the domain")));
            }
        }
        if !(noise_sigma >= 0.0) {
            return Err(Error::invalid(format!("noise sigma must be non-negative, got {noise_sigma}")));
        }
        Ok(Self { intervals, noise_sigma })
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Observation covariance `K_yy + σ²I`.
    pub fn observation_cov(&self, kernel: &RbfKernel1D) -> DMatrix<f64> {
        let m = self.len();
        let mut g = DMatrix::from_fn(m, m, |i, j| kernel.double_integral(self.intervals[i], self.intervals[j]));
        mirror_upper(&mut g);
        for i in 0..m {
            g[(i, i)] += self.noise_sigma * self.noise_sigma;
        }
        g
    }

    /// `m x n` matrix of `[k_y(s_k)]_i`.
    pub fn cross_cov(&self, kernel: &RbfKernel1D, grid: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), grid.len(), |i, k| {
            let (a, b) = self.intervals[i];
            kernel.interval_integral(a, b, grid[k])
        })
    }

    /// Exact joint draw of `y ~ N(0, K_yy + σ²I)`.
    pub fn sample_observation(&self, kernel: &RbfKernel1D, seed: u64) -> Result<DVector<f64>> {
        let chol = cholesky_jittered(&self.observation_cov(kernel), JITTER)?;
        let z = normal_vector(&mut stream_rng(seed, 0), self.len());
        Ok(chol.l() * z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePosterior1D {
    pub grid: Vec<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl OraclePosterior1D {
    pub fn std_dev(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| v.max(0.0).sqrt())
    }

    /// `count` exact draws, one RNG stream per draw. Uses a clamped
    /// eigendecomposition since the posterior covariance is rank-deficient
    /// in floating point.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let (values, vectors) = psd_eigen(&self.cov);
        let root = &vectors * DMatrix::from_diagonal(&values.map(f64::sqrt));
        let n = self.grid.len();
        par::map_indexed(count, |i| {
            let z = normal_vector(&mut stream_rng(seed, i as u64), n);
            &self.mean + &root * z
        })
    }
}

/// `mean = k_yᵀ G⁻¹ y`, `cov = K − k_yᵀ G⁻¹ k_y` with `G = K_yy + σ²I`,
/// solved through a Cholesky factorization.
pub fn oracle_posterior(
    kernel: &RbfKernel1D,
    intervals: &IntervalSet,
    y: &DVector<f64>,
    grid: &[f64],
) -> Result<OraclePosterior1D> {
    if y.len() != intervals.len() {
        return Err(Error::DimensionMismatch {
            what: "interval observations",
            expected: intervals.len(),
            found: y.len(),
        });
    }
    let prior = kernel.gram(grid);
    if intervals.is_empty() {
        return Ok(OraclePosterior1D {
            grid: grid.to_vec(),
            mean: DVector::zeros(grid.len()),
            cov: prior,
        });
    }
    let g = intervals.observation_cov(kernel);
    let chol = nalgebra::Cholesky::new(g)
        .ok_or_else(|| Error::Singular("interval observation covariance K_yy + σ²I".into()))?;
    let ky = intervals.cross_cov(kernel, grid);
    let mean = ky.transpose() * chol.solve(y);
    let mut cov = prior - ky.transpose() * chol.solve(&ky);
    mirror_upper(&mut cov);
    Ok(OraclePosterior1D {
        grid: grid.to_vec(),
        mean,
        cov,
    })
}

/// `n` equispaced points spanning `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let h = (hi - lo) / (n - 1) as f64;
            (0..n).map(|k| if k == n - 1 { hi } else { lo + k as f64 * h }).collect()
        }
    }
}

pub fn default_grid(n: usize) -> Vec<f64> {
    linspace(DOMAIN.0, DOMAIN.1, n)
}

/// Exact prior draw from `N(0, K + 1e-10 I)`.
pub fn sample_prior_1d(kernel: &RbfKernel1D, grid: &[f64], seed: u64) -> Result<DVector<f64>> {
    let chol = cholesky_jittered(&kernel.gram(grid), JITTER)?;
    Ok(chol.l() * normal_vector(&mut stream_rng(seed, 0), grid.len()))
}

/// Linear map from grid values to interval integrals of their piecewise-linear
/// interpolant. Grid points must be sorted ascending.
pub fn interval_operator(grid: &[f64], intervals: &[(f64, f64)]) -> DMatrix<f64> {
    let n = grid.len();
    let mut a = DMatrix::zeros(intervals.len(), n);
    for (i, &(lo, hi)) in intervals.iter().enumerate() {
        for k in 0..n.saturating_sub(1) {
            let (s0, s1) = (grid[k], grid[k + 1]);
            let (l, r) = (lo.max(s0), hi.min(s1));
            if r <= l {
                continue;
            }
            let h = s1 - s0;
            let (u0, u1) = ((l - s0) / h, (r - s0) / h);
            let right = 0.5 * (u1 * u1 - u0 * u0);
            a[(i, k)] += h * ((u1 - u0) - right);
            a[(i, k + 1)] += h * right;
        }
    }
    a
}

/// `m` non-overlapping intervals with lengths drawn uniformly from
/// `length_range`, placed in `DOMAIN` with uniformly random gaps.
pub fn random_intervals(m: usize, length_range: (f64, f64), seed: u64) -> Result<Vec<(f64, f64)>> {
    let (lmin, lmax) = length_range;
    let span = DOMAIN.1 - DOMAIN.0;
    if !(lmin > 0.0 && lmin <= lmax) || m as f64 * lmin > span {
        return Err(Error::invalid(format!(
            "{m} intervals of length {lmin}..{lmax} do not fit in the domain"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    for _ in 0..10_000 {
        let lengths: Vec<f64> = (0..m).map(|_| rng.random_range(lmin..=lmax)).collect();
        let total: f64 = lengths.iter().sum();
        if total > span {
            continue;
        }
        let gaps: Vec<f64> = (0..=m).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let gsum: f64 = gaps.iter().sum();
        let slack = span - total;
        let mut x = DOMAIN.0;
        let mut out = Vec::with_capacity(m);
        for (len, gap) in lengths.iter().zip(&gaps) {
            x += gap / gsum * slack;
            out.push((x, (x + len).min(DOMAIN.1)));
            x += len;
        }
        return Ok(out);
    }
    Err(Error::invalid("could not place random intervals"))
}

/// Benchmark configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub lengthscale: f64,
    pub grid_n: usize,
    pub intervals: Vec<[f64; 2]>,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self::random(8, 0.1, 0).expect("eight intervals fit the domain")
    }
}

impl BenchmarkConfig {
    /// `m` random intervals of length 0.8 to 2 with grid and lengthscale
    /// defaults.
    pub fn random(m: usize, sigma: f64, seed: u64) -> Result<Self> {
        let intervals = random_intervals(m, (0.8, 2.0), seed)?
            .into_iter()
            .map(|(a, b)| [a, b])
            .collect();
        Ok(Self {
            lengthscale: 0.6,
            grid_n: 50,
            intervals,
            sigma,
            seed,
        })
    }

    pub fn kernel(&self) -> Result<RbfKernel1D> {
        RbfKernel1D::new(self.lengthscale, 1.0)
    }

    pub fn interval_set(&self) -> Result<IntervalSet> {
        IntervalSet::new(self.intervals.iter().map(|v| (v[0], v[1])).collect(), self.sigma)
    }

    pub fn grid(&self) -> Vec<f64> {
        default_grid(self.grid_n)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything the benchmark needs: kernel, intervals, one observation draw,
/// the oracle posterior and the discretized prior/operator for samplers.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub config: BenchmarkConfig,
    pub kernel: RbfKernel1D,
    pub intervals: IntervalSet,
    pub grid: Vec<f64>,
    pub y: DVector<f64>,
    pub oracle: OraclePosterior1D,
    pub prior_cov: DMatrix<f64>,
    pub operator: DMatrix<f64>,
}

impl Benchmark {
    pub fn build(config: BenchmarkConfig) -> Result<Self> {
        let kernel = config.kernel()?;
        let intervals = config.interval_set()?;
        let grid = config.grid();
        let y = intervals.sample_observation(&kernel, crate::rng::derive_seed(config.seed, "gp1d-y"))?;
        let oracle = oracle_posterior(&kernel, &intervals, &y, &grid)?;
        let mut prior_cov = kernel.gram(&grid);
        for i in 0..grid.len() {
            prior_cov[(i, i)] += JITTER;
        }
        let operator = interval_operator(&grid, &intervals.intervals);
        Ok(Self {
            config,
            kernel,
            intervals,
            grid,
            y,
            oracle,
            prior_cov,
            operator,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> RbfKernel1D {
        RbfKernel1D::new(0.6, 1.0).unwrap()
    }

    #[test]
    fn trivial_integrals() {
        assert_eq!(k().interval_integral(1.0, 1.0, 0.3), 0.0);
        assert!(k().double_integral((0.5, 0.5), (-1.0, 2.0)).abs() < 1e-15);
        let sym = k().interval_integral(-0.7, 1.3, 0.3);
        let half = k().interval_integral(0.3, 1.3, 0.3);
        assert!((sym - 2.0 * half).abs() < 1e-14);
        let (i, j) = ((-1.2, 0.4), (0.1, 2.5));
        assert!((k().double_integral(i, j) - k().double_integral(j, i)).abs() < 1e-14);
        assert!(k().double_integral(i, i) > 0.0);
    }

    #[test]
    fn zero_observation_gives_zero_mean() {
        let iv = IntervalSet::new(vec![(-2.0, -1.0), (1.0, 2.5)], 0.1).unwrap();
        let post = oracle_posterior(&k(), &iv, &DVector::zeros(2), &default_grid(20)).unwrap();
        assert!(post.mean.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn huge_noise_recovers_prior() {
        let iv = IntervalSet::new(vec![(-2.0, -1.0), (1.0, 2.5)], 1e6).unwrap();
        let grid = default_grid(30);
        let y = DVector::from_vec(vec![3.0, -2.0]);
        let post = oracle_posterior(&k(), &iv, &y, &grid).unwrap();
        assert!(post.mean.amax() <= 1e-4);
        assert!(crate::linalg::max_abs_diff(&post.cov, &k().gram(&grid)) <= 1e-4);
    }

    #[test]
    fn singular_noise_free_duplicate_is_reported() {
        let iv = IntervalSet::new(vec![(-1.0, 1.0), (-1.0, 1.0)], 0.0).unwrap();
        let y = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            oracle_posterior(&k(), &iv, &y, &default_grid(10)),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn interval_validation() {
        assert!(IntervalSet::new(vec![(1.0, 0.0)], 0.1).is_err());
        assert!(IntervalSet::new(vec![(-6.0, 0.0)], 0.1).is_err());
        assert!(RbfKernel1D::new(0.0, 1.0).is_err());
    }

    #[test]
    fn operator_integrates_linear_functions_exactly() {
        let grid = default_grid(50);
        let a = interval_operator(&grid, &[(-3.3, 1.7), (0.05, 0.1)]);
        let f = DVector::from_iterator(50, grid.iter().map(|s| 2.0 * s + 1.0));
        let got = &a * f;
        let exact = |lo: f64, hi: f64| (hi * hi + hi) - (lo * lo + lo);
        assert!((got[0] - exact(-3.3, 1.7)).abs() < 1e-12);
        assert!((got[1] - exact(0.05, 0.1)).abs() < 1e-12);
    }

    #[test]
    fn random_intervals_are_disjoint_and_inside() {
        for seed in 0..20 {
            let iv = random_intervals(8, (0.8, 2.0), seed).unwrap();
            assert!(iv.windows(2).all(|w| w[0].1 <= w[1].0 + 1e-12));
            assert!(iv.iter().all(|&(a, b)| a >= DOMAIN.0 && b <= DOMAIN.1 && b - a >= 0.8 - 1e-12));
        }
        assert_eq!(random_intervals(8, (0.8, 2.0), 3).unwrap(), random_intervals(8, (0.8, 2.0), 3).unwrap());
    }

    #[test]
    fn config_json_shape() {
        let c = BenchmarkConfig::default();
        let v: serde_json::Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        for key in ["lengthscale", "grid_n", "intervals", "sigma", "seed"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(BenchmarkConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn prior_sample_seeded() {
        let g = default_grid(20);
        assert_eq!(sample_prior_1d(&k(), &g, 4).unwrap(), sample_prior_1d(&k(), &g, 4).unwrap());
    }
}
