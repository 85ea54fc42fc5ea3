use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Weighted least-squares line through `(log N, log error)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% interval for the slope.
    pub interval: [f64; 2],
    /// Weighted residual variance (reduced chi-square when the standard
    /// errors are calibrated).
    pub reduced_chi2: f64,
    pub points: usize,
}

impl RateFit {
    pub fn contains(&self, slope: f64) -> bool {
        self.interval[0] <= slope && slope <= self.interval[1]
    }
}

/// Fits `log e = a + s log N` from `(N, e, se)` triples. Weights are
/// `(e / se)²`, the inverse variance of `log e` to first order; if any
/// standard error is zero all points get equal weight. The slope interval
/// uses the residual scale and Student-t quantiles with `n − 2` degrees of
/// freedom.
pub fn fit_rate(points: &[(f64, f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {}", points.len())));
    }
    for &(n, e, se) in points {
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::Fit(format!("non-positive error {e} at N = {n}")));
        }
        if !(n > 0.0) {
            return Err(Error::Fit(format!("non-positive N = {n}")));
        }
        if !(se >= 0.0) {
            return Err(Error::Fit(format!("invalid standard error {se} at N = {n}")));
        }
    }
    let equal = points.iter().any(|p| p.2 == 0.0);
    let data: Vec<(f64, f64, f64)> = points
        .iter()
        .map(|&(n, e, se)| {
            let w = if equal { 1.0 } else { (e / se).powi(2) };
            (n.ln(), e.ln(), w)
        })
        .collect();
    let sw: f64 = data.iter().map(|p| p.2).sum();
    let xm = data.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let ym = data.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = data.iter().map(|p| p.2 * (p.0 - xm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("all N values coincide".into()));
    }
    let sxy: f64 = data.iter().map(|p| p.2 * (p.0 - xm) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let dof = (data.len() - 2) as f64;
    let rss: f64 = data.iter().map(|p| p.2 * (p.1 - intercept - slope * p.0).powi(2)).sum();
    let scale = rss / dof;
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::Fit(e.to_string()))?
        .inverse_cdf(0.975);
    let half = t * (scale / sxx).sqrt();
    Ok(RateFit {
        slope,
        intercept,
        interval: [slope - half, slope + half],
        reduced_chi2: scale,
        points: data.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_power_law() {
        let pts: Vec<_> = (4..10)
            .map(|k| {
                let n = (1u64 << k) as f64;
                (n, 3.0 * n.powf(-0.5), 0.0)
            })
            .collect();
        let f = fit_rate(&pts).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn constant_errors_give_zero_slope() {
        let pts: Vec<_> = [10.0, 20.0, 40.0, 80.0].iter().map(|&n| (n, 0.3, 0.01)).collect();
        assert!(fit_rate(&pts).unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_rate(&[(1.0, 1.0, 0.1), (2.0, 0.5, 0.1)]).is_err());
        assert!(fit_rate(&[(1.0, 1.0, 0.1), (2.0, 0.0, 0.1), (4.0, 0.2, 0.1)]).is_err());
    }

    #[test]
    fn interval_coverage_under_multiplicative_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut z = [0.0; 6];
        let mut covered = 0;
        for _ in 0..1000 {
            crate::noise::fill_normals(&mut rng, &mut z);
            let pts: Vec<_> = (0..6)
                .map(|k| {
                    let n = (64u64 << k) as f64;
                    let e = n.powf(-0.4) * (1.0 + 0.05 * z[k]);
                    (n, e, 0.05 * e)
                })
                .collect();
            if fit_rate(&pts).unwrap().contains(-0.4) {
                covered += 1;
            }
        }
        assert!(covered >= 900, "{covered}");
    }
}
