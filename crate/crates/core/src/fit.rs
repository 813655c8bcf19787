//! Least-squares decay fits on logarithmic axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `y ~ C x^{-exponent}` fitted on log-log axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub window: (f64, f64),
    pub r2: f64,
    pub points: usize,
}

/// `y ~ C exp(-rate x)` fitted on log-linear axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub rate: f64,
    pub window: (f64, f64),
    pub r2: f64,
    pub points: usize,
}

/// Ordinary least squares; returns (slope, intercept, r2).
pub fn linear_regression(points: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, my - slope * mx, r2))
}

/// Points with `x` inside `window` and positive finite `y`, thinned to at
/// most 20 per decade of `x` so that dense integer grids do not overweight
/// the upper end of the window.
fn log_thinned(points: &[(f64, f64)], window: (f64, f64)) -> Vec<(f64, f64)> {
    let mut kept: Vec<(f64, f64)> = Vec::new();
    let mut last_bucket = i64::MIN;
    for &(x, y) in points {
        if x < window.0 || x > window.1 || !(y > 0.0) || !y.is_finite() || !(x > 0.0) {
            continue;
        }
        let bucket = (x.log10() * 20.0).floor() as i64;
        if bucket != last_bucket {
            kept.push((x, y));
            last_bucket = bucket;
        }
    }
    kept
}

pub fn fit_power_law(points: &[(f64, f64)], window: (f64, f64)) -> Result<PowerLawFit> {
    let used: Vec<(f64, f64)> = log_thinned(points, window)
        .into_iter()
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let (slope, _, r2) = linear_regression(&used).ok_or_else(|| {
        Error::Numeric(format!(
            "too few positive points in window [{}, {}] for a power-law fit",
            window.0, window.1
        ))
    })?;
    Ok(PowerLawFit {
        exponent: -slope,
        window,
        r2,
        points: used.len(),
    })
}

pub fn fit_exponential(points: &[(f64, f64)], window: (f64, f64)) -> Result<ExponentialFit> {
    let used: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(x, y)| x >= window.0 && x <= window.1 && y > 0.0 && y.is_finite())
        .map(|&(x, y)| (x, y.ln()))
        .collect();
    let (slope, _, r2) = linear_regression(&used).ok_or_else(|| {
        Error::Numeric(format!(
            "too few positive points in window [{}, {}] for an exponential fit",
            window.0, window.1
        ))
    })?;
    Ok(ExponentialFit {
        rate: -slope,
        window,
        r2,
        points: used.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_power_law() {
        let pts: Vec<(f64, f64)> = (1..=10_000).map(|n| (n as f64, 3.0 * (n as f64).powf(-2.5))).collect();
        let fit = fit_power_law(&pts, (10.0, 10_000.0)).unwrap();
        assert!((fit.exponent - 2.5).abs() < 1e-10);
        assert!(fit.r2 > 0.999_999);
        assert!(fit.points <= 61);
    }

    #[test]
    fn recovers_exponential() {
        let pts: Vec<(f64, f64)> = (0..40).map(|n| (n as f64, 0.5f64.powi(n))).collect();
        let fit = fit_exponential(&pts, (1.0, 30.0)).unwrap();
        assert!((fit.rate - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn empty_window_errors() {
        assert!(fit_power_law(&[(1.0, 0.0), (2.0, 0.0)], (1.0, 2.0)).is_err());
    }
}
