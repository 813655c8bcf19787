//! Birkhoff ensembles and the quenched limit-law checks run on them.

mod birkhoff;
pub mod brownian;
pub mod ks;
pub mod rate;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{tag, task_rng};

pub use birkhoff::{
    birkhoff_ensemble, checkpoints, fiber_means, BirkhoffEnsemble, EnsembleSettings, SamplingMode,
    LIL_MIN_K,
};
pub use brownian::{BrownianReference, Functional};
pub use ks::{ks_one_sample, ks_two_sample, normal_cdf, KsResult};
pub use rate::{asip_rate, RateParams, RateResult};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub resamples: usize,
    /// Two-sided coverage, e.g. 0.99.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            resamples: 400,
            confidence: 0.99,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub n: usize,
    /// Sample variance of `S_n`, divided by `n`.
    pub ratio: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Standard deviation of the bootstrap replicates.
    pub std_err: f64,
}

fn sample_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (mut n, mut sum) = (0usize, 0.0);
    for v in values.clone() {
        n += 1;
        sum += v;
    }
    if n < 2 {
        return 0.0;
    }
    let mean = sum / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `sigma_hat_n^2 / n` at every checkpoint with percentile bootstrap intervals.
pub fn variance_growth(ens: &BirkhoffEnsemble, opts: &BootstrapOptions) -> Result<Vec<VarianceRow>> {
    if ens.n_samples < 2 || opts.resamples == 0 {
        return Err(Error::InvalidArgument("variance growth needs 2 samples and resamples".into()));
    }
    let m = ens.n_samples;
    let tail = (1.0 - opts.confidence) / 2.0;
    Ok(ens
        .checkpoints
        .par_iter()
        .zip(&ens.sums)
        .enumerate()
        .map(|(c, (&n, sums))| {
            let ratio = sample_variance(sums.iter().copied()) / n as f64;
            let mut rng = task_rng(opts.seed, tag::BOOTSTRAP, c as u64);
            let mut boot: Vec<f64> = (0..opts.resamples)
                .map(|_| {
                    let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
                    sample_variance(idx.iter().map(|&i| sums[i])) / n as f64
                })
                .collect();
            boot.sort_by(f64::total_cmp);
            VarianceRow {
                n,
                ratio,
                ci_lo: quantile(&boot, tail),
                ci_hi: quantile(&boot, 1.0 - tail),
                std_err: sample_variance(boot.iter().copied()).sqrt(),
            }
        })
        .collect())
}

fn check_sigma2(sigma2: f64) -> Result<f64> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(sigma2.sqrt())
    } else {
        Err(Error::DegenerateVariance(sigma2))
    }
}

/// `S_n / (sigma sqrt(n))` for every sample.
pub fn standardized_terminal(ens: &BirkhoffEnsemble, sigma2: f64) -> Result<Vec<f64>> {
    let scale = check_sigma2(sigma2)? * (ens.n_steps as f64).sqrt();
    Ok(ens.terminal().iter().map(|s| s / scale).collect())
}

/// One-sample KS of the standardized terminal sums against `N(0, 1)`.
pub fn qclt_test(ens: &BirkhoffEnsemble, sigma2: f64) -> Result<KsResult> {
    Ok(ks_one_sample(&standardized_terminal(ens, sigma2)?, normal_cdf))
}

/// Fraction of `reps` Gaussian random-walk ensembles rejected at `level`.
pub fn null_calibration(reps: usize, n_samples: usize, n_steps: usize, level: f64, seed: u64) -> Result<f64> {
    let rejected = (0..reps)
        .map(|r| {
            let ens = BirkhoffEnsemble::gaussian(n_steps, n_samples, 1.0, seed.wrapping_add(r as u64))?;
            Ok((qclt_test(&ens, 1.0)?.p_value < level) as usize)
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(rejected.iter().sum::<usize>() as f64 / reps as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LilEnvelope {
    pub c: f64,
    pub sigma: f64,
    /// Median and interquartile range over samples of `max_k S_k / sqrt(c k ln ln k)`.
    pub median_max: f64,
    pub iqr_max: f64,
    pub median_min: f64,
    pub iqr_min: f64,
}

pub fn qlil_envelope(ens: &BirkhoffEnsemble, sigma2: f64, c: f64) -> Result<LilEnvelope> {
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("variance {sigma2} is negative")));
    }
    if ens.n_steps < LIL_MIN_K {
        return Err(Error::InvalidArgument(format!(
            "iterated-logarithm statistics need n >= {LIL_MIN_K}"
        )));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidArgument("normalization constant must be positive".into()));
    }
    let summary = |v: &[f64]| {
        let mut s: Vec<f64> = v.iter().map(|x| x / c.sqrt()).collect();
        s.sort_by(f64::total_cmp);
        (quantile(&s, 0.5), quantile(&s, 0.75) - quantile(&s, 0.25))
    };
    let (median_max, iqr_max) = summary(&ens.lil_max);
    let (median_min, iqr_min) = summary(&ens.lil_min);
    Ok(LilEnvelope {
        c,
        sigma: sigma2.sqrt(),
        median_max,
        iqr_max,
        median_min,
        iqr_min,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalTest {
    pub functional: Functional,
    pub ks: KsResult,
    /// Functional values of the standardized sample paths.
    #[serde(skip)]
    pub values: Vec<f64>,
}

/// Functional of the piecewise-linear path `t -> S_{nt} / (sigma sqrt(n))`
/// compared with the same functional of Brownian motion. The terminal value
/// has an exact normal law and is tested against it, which makes it coincide
/// with [`qclt_test`].
pub fn qfclt_paths(
    ens: &BirkhoffEnsemble,
    sigma2: f64,
    functional: Functional,
    reference: &BrownianReference,
) -> Result<FunctionalTest> {
    let scale = check_sigma2(sigma2)? * (ens.n_steps as f64).sqrt();
    let (values, ks) = match functional {
        Functional::Terminal => {
            let v = standardized_terminal(ens, sigma2)?;
            let ks = ks_one_sample(&v, normal_cdf);
            (v, ks)
        }
        Functional::Sup => {
            let v: Vec<f64> = ens.path_max.iter().map(|m| m / scale).collect();
            let ks = ks_two_sample(&v, reference.sample(functional));
            (v, ks)
        }
        Functional::SupAbs => {
            let v: Vec<f64> = ens
                .path_max
                .iter()
                .zip(&ens.path_min)
                .map(|(hi, lo)| hi.max(-lo) / scale)
                .collect();
            let ks = ks_two_sample(&v, reference.sample(functional));
            (v, ks)
        }
    };
    Ok(FunctionalTest {
        functional,
        ks,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_null_passes() {
        let ens = BirkhoffEnsemble::gaussian(32, 5000, 1.0, 11).unwrap();
        let r = qclt_test(&ens, 1.0).unwrap();
        assert!(r.statistic < 4.0 / (5000f64).sqrt());
        assert!(qclt_test(&ens, 0.0).is_err());
    }

    #[test]
    fn terminal_functional_matches_qclt() {
        let ens = BirkhoffEnsemble::gaussian(16, 500, 0.7, 2).unwrap();
        let reference = BrownianReference::simulate(100, 8, 1).unwrap();
        let a = qclt_test(&ens, 0.49).unwrap();
        let b = qfclt_paths(&ens, 0.49, Functional::Terminal, &reference).unwrap();
        assert_eq!(a.statistic.to_bits(), b.ks.statistic.to_bits());
        assert_eq!(a.p_value.to_bits(), b.ks.p_value.to_bits());
    }

    #[test]
    fn simultaneous_bootstrap_coverage() {
        // Bonferroni-adjusted intervals should cover the truth at every
        // checkpoint for nearly every ensemble.
        let failures = (0..10)
            .filter(|&seed| {
                let ens = BirkhoffEnsemble::gaussian(16, 500, 0.5f64.sqrt(), seed).unwrap();
                let opts = BootstrapOptions {
                    resamples: 1000,
                    confidence: 1.0 - 0.01 / ens.checkpoints.len() as f64,
                    seed,
                };
                let rows = variance_growth(&ens, &opts).unwrap();
                rows.iter().any(|r| !(r.ci_lo..=r.ci_hi).contains(&0.5))
            })
            .count();
        assert!(failures <= 1, "{failures}");
    }

    #[test]
    fn zero_ensemble_envelope() {
        let ens = BirkhoffEnsemble::gaussian(64, 10, 0.0, 1).unwrap();
        let env = qlil_envelope(&ens, 0.0, 1.0).unwrap();
        assert_eq!(env.median_max, 0.0);
        let rows = variance_growth(&ens, &BootstrapOptions::default()).unwrap();
        assert!(rows.iter().all(|r| r.ratio == 0.0));
    }
}
