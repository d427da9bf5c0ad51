//! Power-law fits `value ≈ c·δ^slope` by weighted least squares on logs.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// 95% confidence interval for the slope.
    pub ci: (f64, f64),
    pub slope_se: f64,
    pub points_used: usize,
    pub weighted: bool,
    pub warnings: Vec<String>,
}

/// Fits `ln v = intercept + slope·ln δ` over `(δ, v, se)` triples.
///
/// Weights are `(v/se)²`, the inverse variance of `ln v` to first order; if any
/// surviving point has `se = 0` the fit is unweighted. The covariance is scaled by
/// the reduced χ² and the interval uses Student-t with `n − 2` degrees of freedom.
pub fn rate_fit(points: &[(f64, f64, f64)]) -> Result<RateFit> {
    let mut warnings = Vec::new();
    let mut pts = Vec::with_capacity(points.len());
    for &(delta, v, se) in points {
        if !(v > 0.0 && v.is_finite()) {
            warnings.push(format!("dropped δ = {delta}: value {v} is not positive"));
        } else if !(delta > 0.0 && delta.is_finite()) || !(se >= 0.0 && se.is_finite()) {
            warnings.push(format!("dropped δ = {delta}: invalid step or standard error"));
        } else {
            pts.push((delta.ln(), v.ln(), se / v));
        }
    }
    let n = pts.len();
    if n < 3 {
        return Err(HarnessError::Fit(format!("need at least 3 usable points, have {n}")));
    }
    let weighted = pts.iter().all(|p| p.2 > 0.0);
    let w: Vec<f64> = pts.iter().map(|p| if weighted { 1.0 / (p.2 * p.2) } else { 1.0 }).collect();
    let sw: f64 = w.iter().sum();
    let xm = pts.iter().zip(&w).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let ym = pts.iter().zip(&w).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.0 - xm).powi(2)).sum();
    let sxy: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.0 - xm) * (p.1 - ym)).sum();
    let syy: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.1 - ym).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(HarnessError::Fit("all step sizes coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    let dof = (n - 2) as f64;
    let slope_se = (rss / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof).map_err(|e| HarnessError::Fit(e.to_string()))?.inverse_cdf(0.975);
    Ok(RateFit { slope, intercept, r_squared, ci: (slope - t * slope_se, slope + t * slope_se), slope_se, points_used: n, weighted, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ladder(f: impl Fn(f64) -> f64) -> Vec<(f64, f64, f64)> {
        (6..=10).map(|k| 2f64.powi(-k)).map(|d| (d, f(d), 0.0)).collect()
    }

    #[test]
    fn exact_power_laws() {
        let a = rate_fit(&ladder(|d| 3.0 * d)).unwrap();
        assert!((a.slope - 1.0).abs() < 1e-9);
        assert!((a.intercept - 3f64.ln()).abs() < 1e-9);
        assert!((a.r_squared - 1.0).abs() < 1e-12);
        let b = rate_fit(&ladder(|d| 0.2 * d.sqrt())).unwrap();
        assert!((b.slope - 0.5).abs() < 1e-9);
        assert!(!b.weighted);
    }

    #[test]
    fn nonpositive_points_are_dropped() {
        let mut pts = ladder(|d| d);
        pts[1].1 = 0.0;
        pts[3].1 = -1.0;
        let f = rate_fit(&pts).unwrap();
        assert_eq!(f.points_used, 3);
        assert_eq!(f.warnings.len(), 2);
        pts[0].1 = f64::NAN;
        assert!(matches!(rate_fit(&pts), Err(HarnessError::Fit(_))));
    }

    #[test]
    fn interval_matches_textbook_ols() {
        // y = ln v with residuals (0.1, −0.1, 0.1, −0.1, 0) about slope 1 on x = ln δ.
        let res = [0.1, -0.1, 0.1, -0.1, 0.0];
        let pts: Vec<_> = (6..=10).zip(res).map(|(k, r)| {
            let d = 2f64.powi(-k);
            (d, (d.ln() + r).exp(), 0.0)
        }).collect();
        let f = rate_fit(&pts).unwrap();
        // Independent closed form: x = −k ln 2 with k = 6..10.
        let x: Vec<f64> = (6..=10).map(|k| -(k as f64) * 2f64.ln()).collect();
        let y: Vec<f64> = x.iter().zip(res).map(|(x, r)| x + r).collect();
        let xm = x.iter().sum::<f64>() / 5.0;
        let ym = y.iter().sum::<f64>() / 5.0;
        let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
        let b = x.iter().zip(&y).map(|(a, c)| (a - xm) * (c - ym)).sum::<f64>() / sxx;
        let a = ym - b * xm;
        let rss: f64 = x.iter().zip(&y).map(|(p, q)| (q - a - b * p).powi(2)).sum();
        let se = (rss / 3.0 / sxx).sqrt();
        assert!((f.slope - b).abs() < 1e-12);
        assert!((f.slope_se - se).abs() < 1e-12);
        // t_{0.975, 3} = 3.182446305284263
        assert!((f.ci.1 - f.slope - 3.182446305284263 * se).abs() < 1e-9);
    }
}
