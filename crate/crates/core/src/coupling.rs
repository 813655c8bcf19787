//! Alternating matching times of pairs of orbits.
//!
//! Starting from `(x, x')` at time 0, the recursion takes `l0`-fold returns
//! to the base alternately for `x` and for `x'`, each evaluated on the
//! sequence shifted by the time already elapsed:
//!
//! ```text
//! tau_1 = R^{l0}(x),  tau_2 = tau_1 + R^{l0}(F^{tau_1} x'),  tau_3 = tau_2 + R^{l0}(F^{tau_2} x), ...
//! ```
//!
//! `T` is the first `tau_i` at which both points sit in the base. `T_n`
//! restarts the recursion from the moved pair at time `T_{n-1}`, again with
//! the `x` component first.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_exponential, fit_power_law, ExponentialFit, PowerLawFit};
use crate::maps::{Orbit, PhasePoint};
use crate::omega::{Family, FiberSequence, ParamBounds, ParamSequence};
use crate::rng::{tag, task_rng};
use crate::tower::{advance_to_base, check_base, in_base, ReturnTime};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingTrace {
    pub x: f64,
    pub x_prime: f64,
    pub l0: u32,
    /// `tau_0 = 0, tau_1, ...` in absolute time, across restarts.
    pub taus: Vec<u64>,
    /// `T_0 = 0, T_1, ...`.
    pub ts: Vec<u64>,
    /// Some return computation hit the iteration cap.
    pub capped: bool,
}

impl CouplingTrace {
    /// `T_m`, if the trace reached it.
    pub fn t(&self, m: usize) -> Option<u64> {
        self.ts.get(m).copied()
    }
}

/// Limits for one matching run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchLimits {
    /// Cap on each individual return computation.
    pub return_cap: u64,
    /// Stop once absolute time exceeds this.
    pub horizon: u64,
    /// Stop once `T_{max_matches}` is found.
    pub max_matches: usize,
}

impl MatchLimits {
    pub fn new(return_cap: u64, horizon: u64, max_matches: usize) -> Self {
        Self {
            return_cap,
            horizon,
            max_matches,
        }
    }
}

/// Run the alternating recursion on two tracked points.
pub fn match_points<S: FiberSequence, P: Orbit>(
    seq: &S,
    mut p: P,
    mut q: P,
    l0: u32,
    limits: &MatchLimits,
) -> (Vec<u64>, Vec<u64>, bool) {
    let mut taus = vec![0u64];
    let mut ts = vec![0u64];
    let mut t = 0u64;
    let mut x_turn = true;
    while ts.len() <= limits.max_matches && t <= limits.horizon {
        let (mover, other) = if x_turn { (&mut p, &mut q) } else { (&mut q, &mut p) };
        let mut elapsed = 0u64;
        for _ in 0..l0 {
            match advance_to_base(seq, (t + elapsed) as i64, mover, limits.return_cap) {
                ReturnTime::Finite(r) => elapsed += r,
                ReturnTime::Capped => return (taus, ts, true),
            }
        }
        for k in 0..elapsed {
            other.advance(&seq.fiber((t + k) as i64));
        }
        t += elapsed;
        taus.push(t);
        if in_base(p.x()) && in_base(q.x()) {
            ts.push(t);
            x_turn = true;
        } else {
            x_turn = !x_turn;
        }
    }
    (taus, ts, false)
}

/// Matching trace of `(x, x')` tracked in floating point.
pub fn match_pair<S: FiberSequence>(
    seq: &S,
    x: f64,
    x_prime: f64,
    l0: u32,
    limits: &MatchLimits,
) -> Result<CouplingTrace> {
    check_base(x)?;
    check_base(x_prime)?;
    if l0 == 0 {
        return Err(Error::InvalidArgument("l0 must be at least 1".into()));
    }
    let (taus, ts, capped) = match_points(seq, x, x_prime, l0, limits);
    Ok(CouplingTrace {
        x,
        x_prime,
        l0,
        taus,
        ts,
        capped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L0Estimate {
    /// `eps_hat[l]` for `l = 0..=l_max`.
    pub eps_hat: Vec<f64>,
    pub suggested_l0: Option<u32>,
    pub warnings: Vec<String>,
}

/// `eps_hat_l`: fraction of base points whose orbit is in the base at time `l`.
pub fn estimate_l0(
    family: Family,
    bounds: ParamBounds,
    seeds: &[u64],
    l_max: u32,
    samples: usize,
) -> Result<L0Estimate> {
    if l_max < 1 || seeds.is_empty() || samples == 0 {
        return Err(Error::InvalidArgument("estimate_l0 needs l_max >= 1, a seed and samples".into()));
    }
    let l_max = l_max as usize;
    let counts = seeds
        .iter()
        .map(|&s| {
            let seq = ParamSequence::new(s, family, bounds)?;
            let per: Vec<Vec<bool>> = (0..samples)
                .into_par_iter()
                .map(|j| {
                    let mut rng = task_rng(s, tag::LEVELS, j as u64);
                    let x = 0.5 + 0.5 * rng.random::<f64>();
                    let mut p = PhasePoint::new(x, family, rng.random());
                    (1..=l_max)
                        .map(|l| {
                            p.advance(&seq.fiber(l as i64 - 1));
                            in_base(p.x())
                        })
                        .collect()
                })
                .collect();
            let mut c = vec![0usize; l_max];
            for hits in &per {
                for (l, &h) in hits.iter().enumerate() {
                    c[l] += h as usize;
                }
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let total = (samples * seeds.len()) as f64;
    let mut eps_hat = vec![1.0];
    eps_hat.extend((0..l_max).map(|l| counts.iter().map(|c| c[l]).sum::<usize>() as f64 / total));
    // smallest l >= 1 such that every l' in [l, l_max] has eps_hat > 0
    let suggested_l0 = (1..=l_max)
        .rev()
        .take_while(|&l| eps_hat[l] > 0.0)
        .last()
        .map(|l| l as u32);
    let warnings = if suggested_l0.is_none() {
        vec![format!("no l0 found up to l_max = {l_max}")]
    } else {
        Vec::new()
    };
    Ok(L0Estimate {
        eps_hat,
        suggested_l0,
        warnings,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingTailOptions {
    pub l0: u32,
    /// Exponent `a` in `T_{floor(n^a)}`.
    pub alpha_exp: f64,
    pub n_max: u64,
    pub pair_samples: usize,
    pub return_cap: u64,
}

impl CouplingTailOptions {
    pub fn new(l0: u32, n_max: u64, pair_samples: usize) -> Self {
        Self {
            l0,
            alpha_exp: 0.1,
            n_max,
            pair_samples,
            return_cap: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingTailRow {
    pub n: u64,
    pub tail: f64,
    pub std_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingTail {
    pub rows: Vec<CouplingTailRow>,
    pub pairs: usize,
    pub capped_fraction: f64,
    pub warnings: Vec<String>,
}

impl CouplingTail {
    pub fn fit_exponential(&self, window: (f64, f64)) -> Result<ExponentialFit> {
        fit_exponential(&self.points(), window)
    }

    pub fn fit_power_law(&self, window: (f64, f64)) -> Result<PowerLawFit> {
        fit_power_law(&self.points(), window)
    }

    fn points(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.n as f64, r.tail)).collect()
    }
}

#[inline]
fn match_index(n: u64, alpha_exp: f64) -> usize {
    ((n as f64).powf(alpha_exp).floor() as usize).max(1)
}

/// Monte Carlo estimate of `P(T_{floor(n^a)} > n)` for Lebesgue pairs on the base.
/// Pairs with a capped return computation count as unmatched at every `n`.
pub fn coupling_tail(
    family: Family,
    bounds: ParamBounds,
    seeds: &[u64],
    options: &CouplingTailOptions,
) -> Result<CouplingTail> {
    if !(options.alpha_exp > 0.0 && options.alpha_exp < 1.0) {
        return Err(Error::InvalidArgument("alpha_exp must lie in (0, 1)".into()));
    }
    if options.l0 == 0 || options.n_max == 0 || options.pair_samples == 0 || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "coupling tail needs l0, n_max, pair_samples >= 1 and a seed".into(),
        ));
    }
    let limits = MatchLimits::new(
        options.return_cap,
        options.n_max,
        match_index(options.n_max, options.alpha_exp),
    );
    let per = options.pair_samples;
    let sequences = seeds
        .iter()
        .map(|&s| ParamSequence::new(s, family, bounds))
        .collect::<Result<Vec<_>>>()?;
    let traces: Vec<(Vec<u64>, bool)> = (0..sequences.len() * per)
        .into_par_iter()
        .map(|idx| {
            let seq = &sequences[idx / per];
            let mut rng = task_rng(seq.master_seed(), tag::PAIRS, (idx % per) as u64);
            let x = 0.5 + 0.5 * rng.random::<f64>();
            let y = 0.5 + 0.5 * rng.random::<f64>();
            let p = PhasePoint::new(x, family, rng.random());
            let q = PhasePoint::new(y, family, rng.random());
            let (_, ts, capped) = match_points(seq, p, q, options.l0, &limits);
            (ts, capped)
        })
        .collect();
    let pairs = traces.len();
    let capped = traces.iter().filter(|t| t.1).count();
    let rows = (1..=options.n_max)
        .map(|n| {
            let m = match_index(n, options.alpha_exp);
            let exceed = traces
                .iter()
                .filter(|(ts, capped)| *capped || ts.get(m).is_none_or(|&t| t > n))
                .count();
            let p = exceed as f64 / pairs as f64;
            CouplingTailRow {
                n,
                tail: p,
                std_err: (p * (1.0 - p) / pairs as f64).sqrt(),
            }
        })
        .collect();
    let capped_fraction = capped as f64 / pairs as f64;
    let warnings = if capped_fraction > 0.0 {
        vec![format!("{:.3}% of pairs hit the return cap", 100.0 * capped_fraction)]
    } else {
        Vec::new()
    };
    Ok(CouplingTail {
        rows,
        pairs,
        capped_fraction,
        warnings,
    })
}
