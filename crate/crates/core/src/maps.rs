//! Fiber maps on `[0, 1]`, observables, and orbit tracking.
//!
//! The LSV branch is the standard Liverani-Saussol-Vaienti form
//!
//! ```text
//! f(x) = x (1 + (2x)^alpha)   on [0, 1/2)
//! f(x) = 2x - 1               on [1/2, 1]
//! ```
//!
//! The branch point 1/2 belongs to the right branch, so `f(1/2) = 0` and
//! the right branch is an affine bijection `[1/2, 1] -> [0, 1]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::omega::{Family, FiberSequence};
use crate::rng::BitSource;

/// Which monotone branch a point falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    Left,
    Right,
}

/// One fiber map `f_omega`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiberMap {
    family: Family,
    alpha: f64,
}

impl FiberMap {
    pub fn lsv(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "LSV exponent {alpha} outside (0, 1)"
            )));
        }
        Ok(Self {
            family: Family::Lsv,
            alpha,
        })
    }

    pub fn doubling() -> Self {
        Self {
            family: Family::Doubling,
            alpha: 0.0,
        }
    }

    /// Unchecked constructor for parameters already validated by a sequence.
    #[inline]
    pub(crate) fn from_parts(family: Family, alpha: f64) -> Self {
        Self { family, alpha }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn branch(x: f64) -> Branch {
        if x < 0.5 {
            Branch::Left
        } else {
            Branch::Right
        }
    }

    /// `f(x)` without the domain check.
    #[inline]
    pub fn image(&self, x: f64) -> f64 {
        if x >= 0.5 {
            return 2.0 * x - 1.0;
        }
        match self.family {
            Family::Doubling => 2.0 * x,
            Family::Lsv => (x * (1.0 + (2.0 * x).powf(self.alpha))).min(1.0),
        }
    }

    pub fn apply(&self, x: f64) -> Result<f64> {
        check_unit(x)?;
        Ok(self.image(x))
    }

    /// `f'(x)`; at `x = 1/2` the left-branch limit is returned.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self.family {
            Family::Doubling => 2.0,
            Family::Lsv if x <= 0.5 => {
                1.0 + (1.0 + self.alpha) * (2.0 * x).powf(self.alpha)
            }
            Family::Lsv => 2.0,
        }
    }

    /// Supremum of `f'` over the interval.
    pub fn max_derivative(&self) -> f64 {
        match self.family {
            Family::Doubling => 2.0,
            Family::Lsv => 2.0 + self.alpha,
        }
    }
}

#[inline]
pub(crate) fn check_unit(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain {
            x,
            domain: "[0, 1]",
        })
    }
}

/// `[x, f_0(x), f_1 f_0(x), ..., f^n(x)]` along the sequence.
pub fn orbit<S: FiberSequence>(seq: &S, x: f64, n: usize) -> Result<Vec<f64>> {
    check_unit(x)?;
    let mut out = Vec::with_capacity(n + 1);
    let mut y = x;
    out.push(y);
    for k in 0..n {
        y = seq.fiber(k as i64).image(y);
        out.push(y);
    }
    Ok(out)
}

/// A point that can be pushed forward by fiber maps.
pub trait Orbit {
    fn x(&self) -> f64;
    fn advance(&mut self, map: &FiberMap);
}

impl Orbit for f64 {
    #[inline]
    fn x(&self) -> f64 {
        *self
    }

    #[inline]
    fn advance(&mut self, map: &FiberMap) {
        *self = map.image(*self);
    }
}

/// A sampled point whose low-order bits are refreshed as the dynamics
/// consumes them.
///
/// Under the doubling map a double loses one bit per step and collapses to 0
/// after about 53 iterations. `PhasePoint` stores doubling orbits as 64-bit
/// fixed point and shifts in a fresh random bit each step, which is exactly
/// the orbit of a Lebesgue-random real whose binary digits are revealed on
/// demand. LSV orbits are tracked in ordinary floating point.
#[derive(Clone, Debug)]
pub struct PhasePoint {
    repr: Repr,
    bits: BitSource,
}

#[derive(Clone, Copy, Debug)]
enum Repr {
    Dyadic(u64),
    Real(f64),
}

const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;

impl PhasePoint {
    /// Track `x` for `family`, filling the digits below the precision of `x`
    /// from the bit stream `bit_seed`.
    pub fn new(x: f64, family: Family, bit_seed: u64) -> Self {
        let mut bits = BitSource::new(bit_seed);
        let repr = match family {
            Family::Lsv => Repr::Real(x),
            Family::Doubling => Repr::Dyadic(to_fixed(x, &mut bits)),
        };
        Self { repr, bits }
    }
}

/// Fixed-point image of `x in [0, 1)` with random digits below its ulp.
fn to_fixed(x: f64, bits: &mut BitSource) -> u64 {
    if x <= 0.0 {
        return 0;
    }
    if x >= 1.0 {
        return u64::MAX;
    }
    let base = (x * TWO_POW_64) as u64;
    // x in [2^e, 2^(e+1)) has ulp 2^(e-52), i.e. 2^(e+12) fixed-point units.
    let e = x.log2().floor() as i32;
    let free = (e + 12).clamp(0, 63) as u32;
    if free == 0 {
        return base;
    }
    let mask = (1u64 << free) - 1;
    (base & !mask) | (bits.next_word() & mask)
}

impl Orbit for PhasePoint {
    #[inline]
    fn x(&self) -> f64 {
        match self.repr {
            Repr::Dyadic(m) => (m >> 11) as f64 * (1.0 / (1u64 << 53) as f64),
            Repr::Real(x) => x,
        }
    }

    #[inline]
    fn advance(&mut self, map: &FiberMap) {
        self.repr = match (self.repr, map.family()) {
            (Repr::Dyadic(m), Family::Doubling) => Repr::Dyadic((m << 1) | self.bits.next_bit()),
            (Repr::Real(x), _) => Repr::Real(map.image(x)),
            (Repr::Dyadic(_), Family::Lsv) => Repr::Real(map.image(self.x())),
        };
    }
}

/// A named observable on `[0, 1]`, possibly fiber dependent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    /// `cos(2 pi x)`.
    Cos2Pi,
    /// `|x - 1/2|^gamma`.
    HolderGamma { gamma: f64 },
    /// Lipschitz ramp indicator of `[lo, hi]` with ramps of the given width.
    SmoothIndicator { lo: f64, hi: f64, width: f64 },
    Constant { value: f64 },
    /// `u o f_omega - u` on fiber `omega`.
    Coboundary { base: Box<Observable> },
}

/// 8-point Gauss-Legendre nodes and weights on [-1, 1].
const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
];

impl Observable {
    /// Registry lookup used by experiment configs.
    pub fn from_name(name: &str, gamma: f64) -> Result<Self> {
        let obs = match name {
            "cos2pi" => Observable::Cos2Pi,
            "holder_gamma" => {
                if !(gamma > 0.0 && gamma <= 1.0) {
                    return Err(Error::Config(format!("gamma {gamma} outside (0, 1]")));
                }
                Observable::HolderGamma { gamma }
            }
            "indicator_smooth" => Observable::SmoothIndicator {
                lo: 0.25,
                hi: 0.75,
                width: 0.05,
            },
            "zero" => Observable::Constant { value: 0.0 },
            "one" => Observable::Constant { value: 1.0 },
            "coboundary_cos2pi" => Observable::Coboundary {
                base: Box::new(Observable::Cos2Pi),
            },
            other => return Err(Error::Config(format!("unknown observable '{other}'"))),
        };
        Ok(obs)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Observable::Cos2Pi => "cos2pi",
            Observable::HolderGamma { .. } => "holder_gamma",
            Observable::SmoothIndicator { .. } => "indicator_smooth",
            Observable::Constant { .. } => "constant",
            Observable::Coboundary { .. } => "coboundary",
        }
    }

    pub fn is_fiber_dependent(&self) -> bool {
        matches!(self, Observable::Coboundary { .. })
    }

    pub fn holder_exponent(&self) -> f64 {
        match self {
            Observable::HolderGamma { gamma } => *gamma,
            Observable::Coboundary { base } => base.holder_exponent(),
            _ => 1.0,
        }
    }

    /// Holder constant, also a bound on `sup |phi|`. For coboundaries the
    /// bound assumes `u(0) = u(1)` so that `u o f` is continuous at 1/2.
    pub fn holder_constant(&self) -> f64 {
        match self {
            Observable::Cos2Pi => 2.0 * PI,
            Observable::HolderGamma { .. } => 1.0,
            Observable::SmoothIndicator { width, .. } => (1.0 / width).max(1.0),
            Observable::Constant { value } => value.abs(),
            Observable::Coboundary { base } => {
                let c = base.holder_constant();
                c * 3f64.powf(base.holder_exponent()) + c
            }
        }
    }

    #[inline]
    pub fn eval(&self, fiber: &FiberMap, x: f64) -> f64 {
        match self {
            Observable::Cos2Pi => (2.0 * PI * x).cos(),
            Observable::HolderGamma { gamma } => (x - 0.5).abs().powf(*gamma),
            Observable::SmoothIndicator { lo, hi, width } => {
                let up = ((x - (lo - width)) / width).clamp(0.0, 1.0);
                let down = (((hi + width) - x) / width).clamp(0.0, 1.0);
                up.min(down)
            }
            Observable::Constant { value } => *value,
            Observable::Coboundary { base } => {
                base.eval(fiber, fiber.image(x)) - base.eval(fiber, x)
            }
        }
    }

    /// Average of the observable over `[lo, hi]` on the given fiber.
    pub fn bin_average(&self, fiber: &FiberMap, lo: f64, hi: f64) -> f64 {
        match self {
            Observable::Cos2Pi => {
                let w = 2.0 * PI;
                ((w * hi).sin() - (w * lo).sin()) / (w * (hi - lo))
            }
            Observable::Constant { value } => *value,
            _ if lo < 0.5 && hi > 0.5 => {
                let left = self.gauss_legendre(fiber, lo, 0.5);
                let right = self.gauss_legendre(fiber, 0.5, hi);
                (left * (0.5 - lo) + right * (hi - 0.5)) / (hi - lo)
            }
            _ => self.gauss_legendre(fiber, lo, hi),
        }
    }

    fn gauss_legendre(&self, fiber: &FiberMap, lo: f64, hi: f64) -> f64 {
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let sum: f64 = GL8
            .iter()
            .map(|&(t, w)| w * self.eval(fiber, mid + half * t))
            .sum();
        0.5 * sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::omega::{ParamBounds, ParamSequence};

    #[test]
    fn lsv_right_branch_and_fixed_point() {
        let f = FiberMap::lsv(0.1).unwrap();
        assert_eq!(f.apply(0.75).unwrap(), 0.5);
        assert_eq!(f.apply(0.0).unwrap(), 0.0);
        assert_eq!(f.apply(0.5).unwrap(), 0.0);
        assert_eq!(f.apply(1.0).unwrap(), 1.0);
    }

    #[test]
    fn lsv_left_branch_value() {
        // 0.25 * (1 + 0.5^0.1), evaluated independently in extended precision.
        let f = FiberMap::lsv(0.1).unwrap();
        assert!((f.apply(0.25).unwrap() - 0.483_258_247_884_2).abs() < 1e-12);
    }

    #[test]
    fn domain_violation() {
        let f = FiberMap::lsv(0.1).unwrap();
        assert!(matches!(f.apply(1.5), Err(Error::Domain { .. })));
        assert!(f.apply(-0.1).is_err());
        assert!(f.apply(f64::NAN).is_err());
    }

    #[test]
    fn derivative_examples() {
        let f = FiberMap::lsv(0.1).unwrap();
        assert_eq!(f.derivative(0.0), 1.0);
        assert_eq!(FiberMap::doubling().derivative(0.3), 2.0);
        assert_eq!(f.derivative(0.8), 2.0);
        // central difference with h = 1e-7
        let h = 1e-7;
        let fd = (f.image(0.25 + h) - f.image(0.25 - h)) / (2.0 * h);
        assert!((f.derivative(0.25) - fd).abs() < 1e-4);
        assert!((f.derivative(0.25) - 2.026_336_290_690_5).abs() < 1e-12);
    }

    #[test]
    fn doubling_period_two() {
        let seq = ParamSequence::new(0, Family::Doubling, ParamBounds::fixed(0.0)).unwrap();
        let orb = orbit(&seq, 1.0 / 3.0, 2).unwrap();
        assert_eq!(orb.len(), 3);
        assert!((orb[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((orb[2] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(orbit(&seq, 0.3, 0).unwrap(), vec![0.3]);
    }

    #[test]
    fn orbit_matches_successive_applications() {
        let seq = ParamSequence::new(7, Family::Lsv, ParamBounds::new(0.05, 0.15)).unwrap();
        let orb = orbit(&seq, 0.9, 3).unwrap();
        let mut x = 0.9;
        for k in 0..3 {
            x = seq.shift(k).fiber(0).apply(x).unwrap();
            assert_eq!(orb[k as usize + 1].to_bits(), x.to_bits());
        }
    }

    #[test]
    fn phase_point_keeps_doubling_alive() {
        let f = FiberMap::doubling();
        let mut p = PhasePoint::new(0.3, Family::Doubling, 17);
        let mut q = 0.3f64;
        for _ in 0..200 {
            p.advance(&f);
            q.advance(&f);
        }
        assert_eq!(q, 0.0);
        assert!(p.x() > 0.0 && p.x() < 1.0);
    }

    #[test]
    fn phase_point_tracks_exact_digits() {
        // The first steps of the refreshed orbit agree with exact doubling.
        let f = FiberMap::doubling();
        let mut p = PhasePoint::new(0.6875, Family::Doubling, 3);
        let expect = [0.375, 0.75, 0.5];
        for e in expect {
            p.advance(&f);
            assert!((p.x() - e).abs() < 1e-12);
        }
    }

    #[test]
    fn cos_bin_average_matches_quadrature() {
        let f = FiberMap::doubling();
        let obs = Observable::Cos2Pi;
        let a = obs.bin_average(&f, 0.1, 0.2);
        let b = obs.gauss_legendre(&f, 0.1, 0.2);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn registry_names() {
        for name in ["cos2pi", "holder_gamma", "indicator_smooth", "zero", "one", "coboundary_cos2pi"] {
            assert!(Observable::from_name(name, 0.5).is_ok(), "{name}");
        }
        assert!(Observable::from_name("nope", 0.5).is_err());
        assert!(Observable::from_name("holder_gamma", 1.5).is_err());
    }

    #[test]
    fn coboundary_telescopes() {
        let f = FiberMap::doubling();
        let obs = Observable::from_name("coboundary_cos2pi", 1.0).unwrap();
        let x = 0.123;
        let v = obs.eval(&f, x);
        assert!((v - ((4.0 * PI * x).cos() - (2.0 * PI * x).cos())).abs() < 1e-14);
    }
}
