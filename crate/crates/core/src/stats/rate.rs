//! Convergence-rate exponents of the almost-sure invariance principle.
//!
//! For polynomial tails `n^{-D}` and a Lipschitz field integrable to order
//! `p`, the rate `O(n^{1/4 + eps_0})` holds for every `eps_0` in
//! `(eps_D, 1/4)` with
//!
//! ```text
//! eps_1 = 2p / ((p - 1)(D - 2))
//! eps_D = max{1/4 + (3 eps_1 - 2 eps_1^3 - eps_1^2)/4, eps_1, (1 + eps_1)/4} - 1/4
//! ```
//!
//! admissible when `D > 2 + 4p/(p - 1)`. `p = inf` is read as the limit
//! `eps_1 = 2/(D - 2)`. Stretched-exponential tails allow any small `eps_0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tails", rename_all = "lowercase")]
pub enum RateParams {
    /// Tails `n^{-D}`; `p` may be `f64::INFINITY`.
    Polynomial { p: f64, d: f64 },
    /// Tails `exp(-a n^b)`.
    Exponential { a: f64, b: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub epsilon_1: Option<f64>,
    pub epsilon_d: Option<f64>,
    /// Open interval of admissible `eps_0`.
    pub epsilon_0_interval: (f64, f64),
    /// `eps_0` may be taken arbitrarily close to 0.
    pub arbitrarily_small: bool,
}

/// `2 + 4p/(p - 1)`, with the limit 6 at `p = inf`.
pub fn admissibility_threshold(p: f64) -> f64 {
    if p.is_infinite() {
        6.0
    } else {
        2.0 + 4.0 * p / (p - 1.0)
    }
}

pub fn epsilon_1(p: f64, d: f64) -> f64 {
    if p.is_infinite() {
        2.0 / (d - 2.0)
    } else {
        2.0 * p / ((p - 1.0) * (d - 2.0))
    }
}

pub fn epsilon_d(e1: f64) -> f64 {
    let a = 0.25 + (3.0 * e1 - 2.0 * e1 * e1 * e1 - e1 * e1) / 4.0;
    let c = (1.0 + e1) / 4.0;
    a.max(e1).max(c) - 0.25
}

pub fn asip_rate(params: RateParams) -> Result<RateResult> {
    match params {
        RateParams::Polynomial { p, d } => {
            if p.is_nan() || p <= 1.0 {
                return Err(Error::InadmissibleRate(format!("p = {p} must exceed 1")));
            }
            let threshold = admissibility_threshold(p);
            if d.is_nan() || d <= threshold {
                return Err(Error::InadmissibleRate(format!(
                    "D > 2 + 4p/(p-1) fails: D = {d}, 2 + 4p/(p-1) = {threshold}"
                )));
            }
            let e1 = epsilon_1(p, d);
            let ed = epsilon_d(e1);
            Ok(RateResult {
                epsilon_1: Some(e1),
                epsilon_d: Some(ed),
                epsilon_0_interval: (ed, 0.25),
                arbitrarily_small: false,
            })
        }
        RateParams::Exponential { a, b } => {
            if !(a > 0.0) || !(b > 0.0 && b <= 1.0) {
                return Err(Error::InadmissibleRate(format!(
                    "exponential tails need a > 0 and b in (0, 1], got a = {a}, b = {b}"
                )));
            }
            Ok(RateResult {
                epsilon_1: None,
                epsilon_d: None,
                epsilon_0_interval: (0.0, 0.25),
                arbitrarily_small: true,
            })
        }
    }
}
