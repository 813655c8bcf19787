//! Martingale/coboundary decomposition on the Ulam grid.
//!
//! With `phi_k` the fiberwise-centered observable on fiber `sigma^k omega`,
//!
//! ```text
//! g_k   = sum_{i=0}^{K} P^i phi_{k-i}
//! psi_k = (phi_{k+1} - g_{k+1}) o f_k + g_k
//! ```
//!
//! so that `phi_{k+1} o f_k = psi_k + g_{k+1} o f_k - g_k` and `P_k psi_k`
//! vanishes up to the truncation term `P^{K+1} phi_{k-K-1}` and the grid
//! error of `P_k` composed with the Ulam Koopman operator.

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{Observable, Orbit, PhasePoint};
use crate::omega::{Family, FiberSequence, ParamBounds, ParamSequence};
use crate::rng::{tag, task_rng};
use crate::transfer::{GridFunction, GridSettings, OperatorChain};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompSettings {
    pub k_trunc: usize,
    pub grid: GridSettings,
}

impl DecompSettings {
    pub fn new(k_trunc: usize, n_bins: usize, depth: usize) -> Self {
        Self {
            k_trunc,
            grid: GridSettings::new(n_bins, depth),
        }
    }

    /// Same truncation and depth on a grid with half the bins.
    pub fn coarse(&self) -> Self {
        let mut c = *self;
        c.grid.n_bins = (self.grid.n_bins / 2).max(2);
        c
    }
}

impl Default for DecompSettings {
    fn default() -> Self {
        Self::new(16, 1 << 12, 32)
    }
}

/// `g_k`, `psi_k` and the centered observable along fibers `0..=n`.
#[derive(Clone, Debug)]
pub struct MartingaleChain<S: FiberSequence> {
    ops: OperatorChain<S>,
    obs: Observable,
    k_trunc: usize,
    /// `phi_k` for `k = 0..=n`.
    phi: Vec<GridFunction>,
    /// `int phi d mu_k` (grid quadrature) for `k = 0..=n`.
    means: Vec<f64>,
    /// `g_k` for `k = 0..=n`.
    g: Vec<GridFunction>,
    /// `psi_k` for `k = 0..n`.
    psi: Vec<GridFunction>,
    /// L1 norms of the first, last and first omitted series terms of `g_k`.
    first_term: Vec<f64>,
    last_term: Vec<f64>,
    omitted_term: Vec<f64>,
    masked_fraction: f64,
}

impl<S: FiberSequence> MartingaleChain<S> {
    /// Decomposition along fibers `0..=n` (`n >= 1`).
    pub fn build(seq: &S, obs: &Observable, n: usize, settings: &DecompSettings) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("a martingale chain needs n >= 1".into()));
        }
        let k = settings.k_trunc as i64;
        let first = -k - 1;
        let last = n as i64;
        let ops = OperatorChain::build(seq, first, last, &settings.grid)?;

        let mut terms: VecDeque<GridFunction> = VecDeque::new();
        let mut masked_fraction: f64 = 0.0;
        let (mut phi, mut means, mut g) = (Vec::new(), Vec::new(), Vec::new());
        let (mut first_term, mut last_term, mut omitted_term) = (Vec::new(), Vec::new(), Vec::new());
        for fiber in first..=last {
            if fiber > first {
                let mut next = VecDeque::with_capacity(terms.len() + 1);
                for t in &terms {
                    let out = ops.dual(fiber - 1, t)?;
                    masked_fraction = masked_fraction.max(out.masked_fraction);
                    next.push_back(out.values);
                }
                terms = next;
            }
            let raw = GridFunction::from_observable(obs, &ops.sequence().fiber(fiber), settings.grid.n_bins);
            let mean = ops.density(fiber).integrate(&raw);
            let centered = raw.shifted(-mean);
            terms.push_front(centered.clone());
            let omitted = if terms.len() > settings.k_trunc + 1 {
                terms.pop_back().map(|t| ops.l1(fiber, &t))
            } else {
                None
            };
            if fiber >= 0 {
                let mut sum = GridFunction::constant(settings.grid.n_bins, 0.0);
                for t in &terms {
                    sum.add_assign(t);
                }
                first_term.push(ops.l1(fiber, &terms[0]));
                last_term.push(ops.l1(fiber, terms.back().expect("nonempty")));
                omitted_term.push(omitted.unwrap_or(0.0));
                g.push(sum);
                phi.push(centered);
                means.push(mean);
            }
        }
        let psi = (0..n)
            .map(|i| {
                let u = phi[i + 1].sub(&g[i + 1]);
                let mut p = ops.compose(i as i64, &u)?;
                p.add_assign(&g[i]);
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ops,
            obs: obs.clone(),
            k_trunc: settings.k_trunc,
            phi,
            means,
            g,
            psi,
            first_term,
            last_term,
            omitted_term,
            masked_fraction,
        })
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    pub fn operators(&self) -> &OperatorChain<S> {
        &self.ops
    }

    pub fn g(&self, k: usize) -> &GridFunction {
        &self.g[k]
    }

    pub fn psi(&self, k: usize) -> &GridFunction {
        &self.psi[k]
    }

    pub fn phi(&self, k: usize) -> &GridFunction {
        &self.phi[k]
    }

    /// Exact observable on fiber `k` at `x`, centered by the grid mean.
    pub fn phi_at(&self, k: usize, x: f64) -> f64 {
        self.obs.eval(&self.ops.sequence().fiber(k as i64), x) - self.means[k]
    }

    /// `int psi_k^2 d mu_k`.
    pub fn psi_second_moment(&self, k: usize) -> f64 {
        let h = self.ops.density(k as i64).masses();
        self.psi[k].values.iter().zip(h).map(|(v, m)| v * v * m).sum()
    }

    /// `|| P_k psi_k ||_1` on fiber `k + 1`.
    pub fn residual(&self, k: usize) -> Result<f64> {
        let out = self.ops.dual(k as i64, &self.psi[k])?;
        Ok(self.ops.l1(k as i64 + 1, &out.values))
    }

    /// Summary at fiber 0.
    pub fn decomposition(&self) -> Result<Decomposition> {
        let residual_l1 = self.residual(0)?;
        Ok(Decomposition {
            k_trunc: self.k_trunc,
            g: self.g[0].clone(),
            psi: self.psi[0].clone(),
            residual_l1,
            sigma2_fiber: self.psi_second_moment(0),
            truncation_tail: self.last_term[0],
            omitted_term: self.omitted_term[0],
            first_term: self.first_term[0],
            masked_fraction: self.masked_fraction,
            sup_g: self.g[0].sup_abs(),
            warnings: truncation_warning(self.first_term[0], self.last_term[0]),
        })
    }

    /// Draw from `mu_0` by inverse CDF on the grid density.
    pub fn sample_initial(&self, u: f64, v: f64) -> f64 {
        self.ops.density(0).sampler().sample(u, v)
    }
}

fn truncation_warning(first: f64, last: f64) -> Vec<String> {
    if last > 0.1 * first && first > 0.0 {
        vec![format!(
            "series not converged: last term {last:.3e} exceeds 10% of first term {first:.3e}"
        )]
    } else {
        Vec::new()
    }
}

/// Decomposition of one fiber.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub k_trunc: usize,
    #[serde(skip)]
    pub g: GridFunction,
    #[serde(skip)]
    pub psi: GridFunction,
    /// `|| P_omega psi_omega ||_1` over unmasked bins.
    pub residual_l1: f64,
    /// `int psi_omega^2 d mu_omega`.
    pub sigma2_fiber: f64,
    /// L1 size of the last retained term `P^K phi_{-K}`.
    pub truncation_tail: f64,
    /// L1 size of the first omitted term `P^{K+1} phi_{-K-1}`.
    pub omitted_term: f64,
    pub first_term: f64,
    pub masked_fraction: f64,
    pub sup_g: f64,
    pub warnings: Vec<String>,
}

/// Truncated coboundary series with its convergence diagnostics.
#[derive(Clone, Debug)]
pub struct CoboundarySeries {
    pub g: GridFunction,
    pub first_term: f64,
    pub last_term: f64,
    pub warnings: Vec<String>,
}

/// `g_omega` truncated after `K + 1` terms.
pub fn coboundary_g<S: FiberSequence>(
    seq: &S,
    obs: &Observable,
    settings: &DecompSettings,
) -> Result<CoboundarySeries> {
    let chain = MartingaleChain::build(seq, obs, 1, settings)?;
    Ok(CoboundarySeries {
        g: chain.g[0].clone(),
        first_term: chain.first_term[0],
        last_term: chain.last_term[0],
        warnings: truncation_warning(chain.first_term[0], chain.last_term[0]),
    })
}

pub fn martingale_psi<S: FiberSequence>(
    seq: &S,
    obs: &Observable,
    settings: &DecompSettings,
) -> Result<Decomposition> {
    MartingaleChain::build(seq, obs, 1, settings)?.decomposition()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaSquared {
    pub mean: f64,
    pub std_err: f64,
    pub per_seed: Vec<f64>,
}

impl SigmaSquared {
    fn from_values(per_seed: Vec<f64>) -> Self {
        let m = per_seed.len() as f64;
        let mean = per_seed.iter().sum::<f64>() / m;
        let std_err = if per_seed.len() > 1 {
            let var = per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_err,
            per_seed,
        }
    }
}

/// `E int psi^2 d mu` averaged over driving seeds.
pub fn sigma_squared(
    family: Family,
    bounds: ParamBounds,
    seeds: &[u64],
    obs: &Observable,
    settings: &DecompSettings,
) -> Result<SigmaSquared> {
    Ok(SigmaSquared::from_values(
        decompose_seeds(family, bounds, seeds, obs, settings)?
            .iter()
            .map(|d| d.sigma2_fiber)
            .collect(),
    ))
}

fn decompose_seeds(
    family: Family,
    bounds: ParamBounds,
    seeds: &[u64],
    obs: &Observable,
    settings: &DecompSettings,
) -> Result<Vec<Decomposition>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("sigma_squared needs at least one seed".into()));
    }
    seeds
        .par_iter()
        .map(|&s| martingale_psi(&ParamSequence::new(s, family, bounds)?, obs, settings))
        .collect()
}

/// Decompositions over seeds plus the diagnostics needed by the coboundary test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompEnsemble {
    pub sigma2: SigmaSquared,
    /// The same estimate on a grid with half the bins.
    pub sigma2_coarse: f64,
    pub decompositions: Vec<Decomposition>,
    /// Mean of `|phi_1(f_0 x) - g_1(f_0 x) + g_0(x)|` for `x ~ mu_0`.
    pub pointwise_residual: f64,
    pub pointwise_samples: usize,
}

pub fn decompose_ensemble(
    family: Family,
    bounds: ParamBounds,
    seeds: &[u64],
    obs: &Observable,
    settings: &DecompSettings,
    orbit_samples: usize,
    sample_seed: u64,
) -> Result<DecompEnsemble> {
    let decompositions = decompose_seeds(family, bounds, seeds, obs, settings)?;
    let sigma2 = SigmaSquared::from_values(decompositions.iter().map(|d| d.sigma2_fiber).collect());
    let sigma2_coarse = sigma_squared(family, bounds, seeds, obs, &settings.coarse())?.mean;
    let sums = seeds
        .iter()
        .enumerate()
        .map(|(si, &s)| {
            let seq = ParamSequence::new(s, family, bounds)?;
            let chain = MartingaleChain::build(&seq, obs, 1, settings)?;
            let sampler = chain.ops.density(0).sampler();
            let f0 = seq.fiber(0);
            let total: f64 = (0..orbit_samples)
                .into_par_iter()
                .map(|j| {
                    let mut rng = task_rng(sample_seed, tag::ORBITS, (si * orbit_samples + j) as u64);
                    let x = sampler.sample(rng.random(), rng.random());
                    let mut p = PhasePoint::new(x, family, rng.random());
                    p.advance(&f0);
                    let y = p.x();
                    (chain.phi_at(1, y) - chain.g[1].at(y) + chain.g[0].at(x)).abs()
                })
                .collect::<Vec<f64>>()
                .iter()
                .sum();
            Ok(total)
        })
        .collect::<Result<Vec<f64>>>()?;
    let pointwise_samples = orbit_samples * seeds.len();
    let pointwise_residual = if pointwise_samples > 0 {
        sums.iter().sum::<f64>() / pointwise_samples as f64
    } else {
        0.0
    };
    Ok(DecompEnsemble {
        sigma2,
        sigma2_coarse,
        decompositions,
        pointwise_residual,
        pointwise_samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Degeneracy {
    Degenerate,
    Nondegenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoboundaryVerdict {
    pub verdict: Degeneracy,
    pub sigma2: f64,
    /// Seed-sampling error combined with the grid-refinement gap.
    pub std_err: f64,
    /// Present only for a degenerate verdict.
    pub pointwise_residual: Option<f64>,
}

/// Degenerate iff the variance estimate is below three standard errors, where
/// the error also carries the change under halving the grid.
pub fn coboundary_test(ens: &DecompEnsemble) -> CoboundaryVerdict {
    let grid_gap = (ens.sigma2.mean - ens.sigma2_coarse).abs();
    let std_err = (ens.sigma2.std_err.powi(2) + grid_gap * grid_gap).sqrt();
    let degenerate = ens.sigma2.mean <= 0.0 || ens.sigma2.mean < 3.0 * std_err;
    CoboundaryVerdict {
        verdict: if degenerate {
            Degeneracy::Degenerate
        } else {
            Degeneracy::Nondegenerate
        },
        sigma2: ens.sigma2.mean,
        std_err,
        pointwise_residual: degenerate.then_some(ens.pointwise_residual),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doubling() -> ParamSequence {
        ParamSequence::new(1, Family::Doubling, ParamBounds::fixed(0.0)).unwrap()
    }

    fn lsv(seed: u64) -> ParamSequence {
        ParamSequence::new(seed, Family::Lsv, ParamBounds::new(0.05, 0.15)).unwrap()
    }

    #[test]
    fn doubling_cos_is_its_own_coboundary_series() {
        let s = DecompSettings::new(8, 1 << 10, 4);
        let series = coboundary_g(&doubling(), &Observable::Cos2Pi, &s).unwrap();
        let phi = GridFunction::from_observable(&Observable::Cos2Pi, &doubling().fiber(0), 1 << 10);
        assert!(series.g.sub(&phi).sup_abs() < 1e-12);
        assert!(series.warnings.is_empty());
    }

    #[test]
    fn zero_and_constant_observables() {
        let s = DecompSettings::new(4, 256, 4);
        let g = coboundary_g(&lsv(1), &Observable::Constant { value: 0.0 }, &s).unwrap();
        assert_eq!(g.g.sup_abs(), 0.0);
        let d = martingale_psi(&lsv(1), &Observable::Constant { value: 2.5 }, &s).unwrap();
        assert!(d.psi.sup_abs() < 1e-12);
        assert!(d.sigma2_fiber < 1e-24);
    }

    #[test]
    fn zero_truncation_keeps_the_centered_observable() {
        let seq = lsv(4);
        let s = DecompSettings::new(0, 512, 8);
        let series = coboundary_g(&seq, &Observable::Cos2Pi, &s).unwrap();
        // the series pulls back from fiber -1, one fiber before g_0
        let chain = OperatorChain::build(&seq, -1, 0, &s.grid).unwrap();
        let phi = chain.centered(&Observable::Cos2Pi, 0);
        assert!(series.g.sub(&phi).sup_abs() < 1e-14);
    }

    #[test]
    fn doubling_cos_psi_collapses_to_phi() {
        let s = DecompSettings::new(16, 1 << 12, 4);
        let d = martingale_psi(&doubling(), &Observable::Cos2Pi, &s).unwrap();
        let phi = GridFunction::from_observable(&Observable::Cos2Pi, &doubling().fiber(0), 1 << 12);
        assert!(d.psi.sub(&phi).sup_abs() < 1e-12);
        assert!(d.residual_l1 < 1e-6);
        assert!((d.sigma2_fiber - 0.5).abs() < 1e-3);
    }

    #[test]
    fn lsv_residual_shrinks_with_truncation() {
        let seq = lsv(7);
        let r: Vec<f64> = [4, 8, 16]
            .iter()
            .map(|&k| {
                martingale_psi(&seq, &Observable::Cos2Pi, &DecompSettings::new(k, 1 << 12, 32))
                    .unwrap()
                    .residual_l1
            })
            .collect();
        assert!(r[1] <= 2.0 * r[0] && r[2] <= 2.0 * r[1], "{r:?}");
    }

    /// Mean absolute defect of the telescoped identity over 64 steps.
    fn identity_defect(n_bins: usize) -> f64 {
        let seq = lsv(3);
        let n = 64;
        let settings = DecompSettings::new(16, n_bins, 32);
        let chain = MartingaleChain::build(&seq, &Observable::Cos2Pi, n, &settings).unwrap();
        let mut rng = task_rng(5, tag::ORBITS, 0);
        let samples = 400;
        let mut total = 0.0;
        for _ in 0..samples {
            let x0 = chain.sample_initial(rng.random(), rng.random());
            let mut x = x0;
            let (mut lhs, mut mart) = (0.0, 0.0);
            for k in 0..n {
                mart += chain.psi(k).at(x);
                x = seq.fiber(k as i64).image(x);
                lhs += chain.phi_at(k + 1, x);
            }
            total += (lhs - (mart + chain.g(n).at(x) - chain.g(0).at(x0))).abs();
        }
        total / samples as f64
    }

    #[test]
    fn decomposition_identity_on_orbits() {
        let coarse = identity_defect(1 << 12);
        let fine = identity_defect(1 << 13);
        assert!(coarse < 5e-2, "{coarse}");
        assert!(fine < coarse, "{fine} vs {coarse}");
    }
}
