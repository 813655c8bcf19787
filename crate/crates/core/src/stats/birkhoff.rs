//! Birkhoff-sum ensembles along one driving sequence.
//!
//! `S_0 = 0` and `S_k = sum_{j=1..k} phi_j(f^j x)` with `phi_j` centered by
//! its grid mean against `mu_{sigma^j omega}`. Only checkpoint values and
//! running path statistics are kept, so memory is independent of `n_steps`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{FiberMap, Observable, Orbit, PhasePoint};
use crate::omega::FiberSequence;
use crate::rng::{tag, task_rng};
use crate::transfer::{equivariant_density, FiberMatrices, GridDensity, GridFunction, GridSettings};

/// Smallest `k` entering the iterated-logarithm statistics.
pub const LIL_MIN_K: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Inverse CDF of the grid density `h_omega`.
    Equivariant,
    Lebesgue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffEnsemble {
    pub omega_seed: Option<u64>,
    pub n_steps: usize,
    pub n_samples: usize,
    pub sampling: Option<SamplingMode>,
    /// Times `k` at which `S_k` was recorded, increasing, ending at `n_steps`.
    pub checkpoints: Vec<usize>,
    /// `sums[c][i]`: `S_{checkpoints[c]}` for sample `i`.
    pub sums: Vec<Vec<f64>>,
    /// `max_{0<=k<=n} S_k` and `min_{0<=k<=n} S_k` per sample.
    pub path_max: Vec<f64>,
    pub path_min: Vec<f64>,
    /// Extremes of `S_k / sqrt(k ln ln k)` over `LIL_MIN_K <= k <= n` (NaN if `n < LIL_MIN_K`).
    pub lil_max: Vec<f64>,
    pub lil_min: Vec<f64>,
}

/// About eight checkpoints per octave, plus `n`.
pub fn checkpoints(n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..)
        .map(|j| 2f64.powf(j as f64 / 8.0).round() as usize)
        .take_while(|&k| k < n)
        .collect();
    out.push(n);
    out.dedup();
    out
}

/// Accumulates one sample path.
struct PathStats {
    checkpoints_hit: Vec<f64>,
    s: f64,
    max: f64,
    min: f64,
    lil_max: f64,
    lil_min: f64,
}

impl PathStats {
    fn new(n_checkpoints: usize) -> Self {
        Self {
            checkpoints_hit: Vec::with_capacity(n_checkpoints),
            s: 0.0,
            max: 0.0,
            min: 0.0,
            lil_max: f64::NAN,
            lil_min: f64::NAN,
        }
    }

    #[inline]
    fn push(&mut self, k: usize, term: f64, checkpoints: &[usize]) {
        self.s += term;
        self.max = self.max.max(self.s);
        self.min = self.min.min(self.s);
        if k >= LIL_MIN_K {
            let kf = k as f64;
            let v = self.s / (kf * kf.ln().ln()).sqrt();
            self.lil_max = if self.lil_max.is_nan() { v } else { self.lil_max.max(v) };
            self.lil_min = if self.lil_min.is_nan() { v } else { self.lil_min.min(v) };
        }
        if checkpoints.get(self.checkpoints_hit.len()) == Some(&k) {
            self.checkpoints_hit.push(self.s);
        }
    }
}

impl BirkhoffEnsemble {
    fn from_paths(
        omega_seed: Option<u64>,
        n_steps: usize,
        sampling: Option<SamplingMode>,
        checkpoints: Vec<usize>,
        paths: Vec<PathStats>,
    ) -> Self {
        let n_samples = paths.len();
        let sums = (0..checkpoints.len())
            .map(|c| paths.iter().map(|p| p.checkpoints_hit[c]).collect())
            .collect();
        Self {
            omega_seed,
            n_steps,
            n_samples,
            sampling,
            checkpoints,
            sums,
            path_max: paths.iter().map(|p| p.max).collect(),
            path_min: paths.iter().map(|p| p.min).collect(),
            lil_max: paths.iter().map(|p| p.lil_max).collect(),
            lil_min: paths.iter().map(|p| p.lil_min).collect(),
        }
    }

    /// Ensemble of random walks with i.i.d. `N(0, sigma^2)` increments.
    pub fn gaussian(n_steps: usize, n_samples: usize, sigma: f64, seed: u64) -> Result<Self> {
        if n_steps == 0 || n_samples == 0 {
            return Err(Error::InvalidArgument("empty ensemble".into()));
        }
        let cps = checkpoints(n_steps);
        let paths = (0..n_samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = task_rng(seed, tag::BIRKHOFF, i as u64);
                let mut st = PathStats::new(cps.len());
                for k in 1..=n_steps {
                    let z: f64 = rng.sample(StandardNormal);
                    st.push(k, sigma * z, &cps);
                }
                st
            })
            .collect();
        Ok(Self::from_paths(None, n_steps, None, cps, paths))
    }

    /// `S_n` for every sample.
    pub fn terminal(&self) -> &[f64] {
        self.sums.last().expect("at least one checkpoint")
    }
}

/// Grid means `int phi_k d mu_k` for `k = 0..=n_steps` and the density `h_0`.
pub fn fiber_means<S: FiberSequence>(
    seq: &S,
    obs: &Observable,
    n_steps: usize,
    grid: &GridSettings,
) -> Result<(Vec<f64>, GridDensity)> {
    let h0 = equivariant_density(seq, grid)?;
    let constant = seq.is_constant();
    let shared = constant.then(|| GridFunction::from_observable(obs, &seq.fiber(0), grid.n_bins));
    let raw_at = |k: i64| match &shared {
        Some(f) => f.clone(),
        None => GridFunction::from_observable(obs, &seq.fiber(k), grid.n_bins),
    };
    let mut means = Vec::with_capacity(n_steps + 1);
    means.push(h0.integrate(&raw_at(0)));
    let mut rho = h0.clone();
    for (k, m) in FiberMatrices::new(seq, 0, *grid).take(n_steps).enumerate() {
        rho = crate::transfer::pushforward(&m, &rho)?;
        means.push(rho.integrate(&raw_at(k as i64 + 1)));
    }
    Ok((means, h0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSettings {
    pub n_steps: usize,
    pub n_samples: usize,
    pub sampling: SamplingMode,
    pub grid: GridSettings,
    pub sample_seed: u64,
}

/// Birkhoff sums of the fiberwise-centered observable along `seq`.
pub fn birkhoff_ensemble<S: FiberSequence>(
    seq: &S,
    obs: &Observable,
    settings: &EnsembleSettings,
    omega_seed: Option<u64>,
) -> Result<BirkhoffEnsemble> {
    let n = settings.n_steps;
    if n == 0 || settings.n_samples == 0 {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let (means, h0) = fiber_means(seq, obs, n, &settings.grid)?;
    let sampler = h0.sampler();
    let fibers: Vec<FiberMap> = (0..=n as i64).map(|k| seq.fiber(k)).collect();
    let cps = checkpoints(n);
    let family = seq.family();
    let paths = (0..settings.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(settings.sample_seed, tag::BIRKHOFF, i as u64);
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let x = match settings.sampling {
                SamplingMode::Equivariant => sampler.sample(u, v),
                SamplingMode::Lebesgue => v,
            };
            let mut p = PhasePoint::new(x, family, rng.random());
            let mut st = PathStats::new(cps.len());
            for k in 1..=n {
                p.advance(&fibers[k - 1]);
                st.push(k, obs.eval(&fibers[k], p.x()) - means[k], &cps);
            }
            st
        })
        .collect();
    Ok(BirkhoffEnsemble::from_paths(
        omega_seed,
        n,
        Some(settings.sampling),
        cps,
        paths,
    ))
}
