use nalgebra::{DMatrix, DVector, LU, Dyn};
use serde::{Deserialize, Serialize};

use super::{distance, VirtualGauge};
use crate::forward::RainField;
use crate::grid::GridSpec;
use crate::{par, Error, Result};

pub const VARIOGRAM_BINS: usize = 15;
pub const VARIOGRAM_STARTS: usize = 8;
const COINCIDENT: f64 = 1e-12;

/// Exponential variogram `γ(h) = nugget + sill (1 − e^{−h/range})` for
/// `h > 0`, `γ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename = "exponential")]
pub struct Variogram {
    pub nugget: f64,
    pub sill: f64,
    pub range: f64,
}

impl Variogram {
    pub fn new(nugget: f64, sill: f64, range: f64) -> Result<Self> {
        if !(nugget >= 0.0 && sill >= 0.0 && range > 0.0) || !(nugget + sill + range).is_finite() {
            return Err(Error::invalid(format!(
                "variogram needs nugget, sill >= 0 and range > 0, got ({nugget}, {sill}, {range})"
            )));
        }
        Ok(Self { nugget, sill, range })
    }

    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            0.0
        } else {
            self.gamma_right(h)
        }
    }

    /// Right limit, which carries the nugget at zero lag.
    fn gamma_right(&self, h: f64) -> f64 {
        self.nugget + self.sill * (1.0 - (-h / self.range).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    pub lag: f64,
    pub semivariance: f64,
    pub pairs: usize,
}

/// Equal-width lag bins on `(0, max_lag]`; each bin reports its mean pair
/// distance and half the mean squared difference. Empty bins are dropped.
pub fn empirical_variogram(gauges: &[VirtualGauge], max_lag: f64) -> Vec<VariogramBin> {
    let width = max_lag / VARIOGRAM_BINS as f64;
    let mut acc = vec![(0.0, 0.0, 0usize); VARIOGRAM_BINS];
    for i in 0..gauges.len() {
        for j in i + 1..gauges.len() {
            let h = distance(gauges[i].position, gauges[j].position);
            if h <= 0.0 || h > max_lag {
                continue;
            }
            let b = ((h / width).ceil() as usize).clamp(1, VARIOGRAM_BINS) - 1;
            let d = gauges[i].value - gauges[j].value;
            acc[b].0 += h;
            acc[b].1 += 0.5 * d * d;
            acc[b].2 += 1;
        }
    }
    acc.into_iter()
        .filter(|a| a.2 > 0)
        .map(|(h, g, n)| VariogramBin {
            lag: h / n as f64,
            semivariance: g / n as f64,
            pairs: n,
        })
        .collect()
}

fn l1_misfit(bins: &[VariogramBin], nugget: f64, sill: f64, range: f64) -> f64 {
    bins.iter()
        .map(|b| (nugget + sill * (1.0 - (-b.lag / range).exp()) - b.semivariance).abs())
        .sum()
}

/// Exact L1-optimal `(nugget, sill)` in the box `[0, cap]²` at fixed range.
/// The misfit is piecewise linear, so an optimum sits on a vertex: either two
/// bins fitted exactly, or a bound active and one bin fitted exactly.
fn best_linear_part(bins: &[VariogramBin], range: f64, cap: f64) -> (f64, f64, f64) {
    let basis: Vec<f64> = bins.iter().map(|b| 1.0 - (-b.lag / range).exp()).collect();
    let mut cands = vec![(0.0, 0.0)];
    for (i, b) in bins.iter().enumerate() {
        cands.push((0.0, b.semivariance / basis[i]));
        cands.push((b.semivariance, 0.0));
        cands.push((b.semivariance - cap * basis[i], cap));
        cands.push((cap, (b.semivariance - cap) / basis[i]));
        for j in i + 1..bins.len() {
            let det = basis[j] - basis[i];
            if det.abs() > 1e-14 {
                let sill = (bins[j].semivariance - b.semivariance) / det;
                cands.push((b.semivariance - sill * basis[i], sill));
            }
        }
    }
    cands
        .into_iter()
        .filter(|(n, s)| n.is_finite() && s.is_finite())
        .map(|(n, s)| (n.clamp(0.0, cap), s.clamp(0.0, cap)))
        .map(|(n, s)| (l1_misfit(bins, n, s, range), n, s))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("candidate set is never empty")
}

/// Exponential variogram minimizing the L1 misfit to the empirical bins.
/// `(nugget, sill)` are solved exactly for each range; the range is searched
/// in log space within `[0.01, 5]·max_lag` by [`VARIOGRAM_STARTS`]
/// finite-difference descents with backtracking. Constant data give a zero
/// model.
pub fn fit_variogram_l1(gauges: &[VirtualGauge], max_lag: f64) -> Result<Variogram> {
    if gauges.len() < 3 {
        return Err(Error::EmptyInput("variogram fit needs at least three gauges"));
    }
    if !(max_lag > 0.0) {
        return Err(Error::invalid(format!("max lag must be positive, got {max_lag}")));
    }
    let bins = empirical_variogram(gauges, max_lag);
    let top = bins.iter().map(|b| b.semivariance).fold(0.0, f64::max);
    if bins.is_empty() || top <= 0.0 {
        return Variogram::new(0.0, 0.0, max_lag / 3.0);
    }
    let cap = 2.0 * top;
    let (lo, hi) = ((1e-2 * max_lag).ln(), (5.0 * max_lag).ln());
    let f = |t: f64| best_linear_part(&bins, t.clamp(lo, hi).exp(), cap).0;
    let mut best = (f64::INFINITY, lo);
    for s in 0..VARIOGRAM_STARTS {
        let mut t = lo + (hi - lo) * (s as f64 + 0.5) / VARIOGRAM_STARTS as f64;
        let mut ft = f(t);
        let mut step = (hi - lo) / VARIOGRAM_STARTS as f64;
        while step > 1e-9 {
            let h = 1e-6;
            let g = (f(t + h) - f(t - h)) / (2.0 * h);
            let dir = if g > 0.0 { -1.0 } else { 1.0 };
            let cand = (t + dir * step).clamp(lo, hi);
            let fc = f(cand);
            if fc < ft {
                t = cand;
                ft = fc;
                step *= 1.5;
            } else {
                step *= 0.5;
            }
        }
        if ft < best.0 {
            best = (ft, t);
        }
    }
    let range = best.1.exp();
    let (_, nugget, sill) = best_linear_part(&bins, range, cap);
    Variogram::new(nugget, sill, range)
}

/// Factorized ordinary-kriging system over a fixed gauge set.
pub struct OrdinaryKriging<'a> {
    gauges: &'a [VirtualGauge],
    variogram: Variogram,
    lu: LU<f64, Dyn, Dyn>,
}

impl<'a> OrdinaryKriging<'a> {
    pub fn new(gauges: &'a [VirtualGauge], variogram: Variogram) -> Result<Self> {
        if gauges.len() < 2 {
            return Err(Error::EmptyInput("ordinary kriging needs at least two gauges"));
        }
        let n = gauges.len();
        let build = |jitter: f64| {
            DMatrix::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
                (true, true) if i == j => jitter,
                (true, true) => variogram.gamma(distance(gauges[i].position, gauges[j].position)),
                (false, false) => 0.0,
                _ => 1.0,
            })
        };
        let scale = (variogram.nugget + variogram.sill).max(1e-12);
        for jitter in [0.0, 1e-10 * scale] {
            let lu = build(jitter).lu();
            if lu.is_invertible() {
                let probe = lu.solve(&DVector::from_element(n + 1, 1.0));
                if probe.is_some_and(|p| p.iter().all(|v| v.is_finite())) {
                    return Ok(Self {
                        gauges,
                        variogram,
                        lu,
                    });
                }
            }
        }
        Err(Error::Singular("ordinary-kriging system".into()))
    }

    /// Kriging weights and Lagrange multiplier at `point`.
    pub fn weights(&self, point: [f64; 2]) -> (DVector<f64>, f64) {
        let n = self.gauges.len();
        if let Some(i) = self.coincident(point) {
            return (DVector::from_fn(n, |j, _| if j == i { 1.0 } else { 0.0 }), 0.0);
        }
        let rhs = DVector::from_fn(n + 1, |i, _| {
            if i < n {
                self.variogram.gamma(distance(self.gauges[i].position, point))
            } else {
                1.0
            }
        });
        let sol = self.lu.solve(&rhs).expect("factorization checked at construction");
        (sol.rows(0, n).into_owned(), sol[n])
    }

    fn coincident(&self, point: [f64; 2]) -> Option<usize> {
        self.gauges.iter().position(|g| distance(g.position, point) <= COINCIDENT)
    }

    /// Raw estimate and kriging variance `Σ λ_i γ(h_i) + m`, with the
    /// nugget counted at zero lag.
    pub fn predict(&self, point: [f64; 2]) -> (f64, f64) {
        let (lambda, m) = self.weights(point);
        let mut est = 0.0;
        let mut var = m;
        for (g, l) in self.gauges.iter().zip(lambda.iter()) {
            est += l * g.value;
            var += l * self.variogram.gamma_right(distance(g.position, point));
        }
        (est, var.max(0.0))
    }
}

#[derive(Debug, Clone)]
pub struct KrigingResult {
    /// Estimate clamped at zero.
    pub field: RainField,
    pub variance: Vec<f64>,
    pub raw: Vec<f64>,
    pub clamped_cells: usize,
}

pub fn ordinary_krige(gauges: &[VirtualGauge], grid: &GridSpec, variogram: &Variogram) -> Result<KrigingResult> {
    let ok = OrdinaryKriging::new(gauges, *variogram)?;
    let cells = par::map_indexed(grid.cells(), |k| ok.predict(grid.cell_center(k / grid.width, k % grid.width)));
    let (raw, variance): (Vec<f64>, Vec<f64>) = cells.into_iter().unzip();
    let clamped_cells = raw.iter().filter(|v| **v < 0.0).count();
    Ok(KrigingResult {
        field: RainField::from_clamped(*grid, raw.clone())?,
        variance,
        raw,
        clamped_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(x: f64, y: f64, v: f64) -> VirtualGauge {
        VirtualGauge::new([x, y], v).unwrap()
    }

    #[test]
    fn exact_at_gauges_and_symmetric_midpoint() {
        let vario = Variogram::new(0.1, 1.0, 2.0).unwrap();
        let gauges = [g(0.0, 0.0, 1.0), g(4.0, 0.0, 3.0)];
        let ok = OrdinaryKriging::new(&gauges, vario).unwrap();
        assert_eq!(ok.predict([0.0, 0.0]), (1.0, 0.1));
        let (mid, _) = ok.predict([2.0, 0.0]);
        assert!((mid - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_gauges_give_zero_model() {
        let gauges: Vec<_> = (0..6).map(|i| g(i as f64, (i * i) as f64 * 0.3, 2.0)).collect();
        let v = fit_variogram_l1(&gauges, 5.0).unwrap();
        assert_eq!((v.nugget, v.sill), (0.0, 0.0));
        let grid = GridSpec::unit(3, 3);
        let out = ordinary_krige(&gauges, &grid, &v).unwrap();
        assert!(out.field.values.iter().all(|x| (x - 2.0).abs() < 1e-9));
    }

    #[test]
    fn serde_tags_the_model() {
        let v = Variogram::new(0.0, 1.0, 3.0).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        assert!(s.contains("\"model\":\"exponential\""));
        assert_eq!(serde_json::from_str::<Variogram>(&s).unwrap(), v);
    }
}
