//! Monte Carlo law of Brownian path functionals.
//!
//! Paths are simulated on a uniform grid. Within each step the extremes are
//! drawn from the exact law of the Brownian bridge between the two grid
//! values, `max = (a + b + sqrt((b - a)^2 - 2 dt ln U)) / 2`, so the sup has
//! no discretization bias.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ks::{ks_one_sample, normal_cdf, KsResult};
use crate::error::{Error, Result};
use crate::rng::{tag, task_rng};

/// Path functional of a standardized path on `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    Sup,
    SupAbs,
    Terminal,
}

impl Functional {
    pub fn name(self) -> &'static str {
        match self {
            Functional::Sup => "sup",
            Functional::SupAbs => "sup_abs",
            Functional::Terminal => "terminal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sup" => Ok(Functional::Sup),
            "sup_abs" => Ok(Functional::SupAbs),
            "terminal" => Ok(Functional::Terminal),
            other => Err(Error::Config(format!("unknown functional '{other}'"))),
        }
    }
}

/// Standard Brownian motion on `[0, 1]`, summarized by its functionals.
#[derive(Clone, Debug)]
pub struct BrownianReference {
    pub paths: usize,
    pub steps: usize,
    sup: Vec<f64>,
    sup_abs: Vec<f64>,
    terminal: Vec<f64>,
}

impl BrownianReference {
    pub fn simulate(paths: usize, steps: usize, seed: u64) -> Result<Self> {
        if paths == 0 || steps == 0 {
            return Err(Error::InvalidArgument("Brownian reference needs paths and steps".into()));
        }
        let dt = 1.0 / steps as f64;
        let sd = dt.sqrt();
        let rows: Vec<[f64; 3]> = (0..paths)
            .into_par_iter()
            .map(|i| {
                let mut rng = task_rng(seed, tag::BROWNIAN, i as u64);
                let (mut b, mut hi, mut lo) = (0.0f64, 0.0f64, 0.0f64);
                for _ in 0..steps {
                    let z: f64 = rng.sample(StandardNormal);
                    let next = b + sd * z;
                    let gap = (next - b) * (next - b);
                    let u1: f64 = 1.0 - rng.random::<f64>();
                    let u2: f64 = 1.0 - rng.random::<f64>();
                    hi = hi.max(0.5 * (b + next + (gap - 2.0 * dt * u1.ln()).sqrt()));
                    lo = lo.min(0.5 * (b + next - (gap - 2.0 * dt * u2.ln()).sqrt()));
                    b = next;
                }
                [hi, hi.max(-lo), b]
            })
            .collect();
        let column = |c: usize| {
            let mut v: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        Ok(Self {
            paths,
            steps,
            sup: column(0),
            sup_abs: column(1),
            terminal: column(2),
        })
    }

    /// Sorted sample of the functional.
    pub fn sample(&self, functional: Functional) -> &[f64] {
        match functional {
            Functional::Sup => &self.sup,
            Functional::SupAbs => &self.sup_abs,
            Functional::Terminal => &self.terminal,
        }
    }

    /// KS distance of the simulated sup against the reflection law
    /// `P(sup B <= a) = 2 Phi(a) - 1`.
    pub fn reflection_self_test(&self) -> KsResult {
        ks_one_sample(&self.sup, |a| (2.0 * normal_cdf(a) - 1.0).max(0.0))
    }
}
