//! The Bernoulli base: a two-sided i.i.d. parameter sequence with its shift.
//!
//! A sequence never stores parameters. `param(i)` hashes the master seed
//! together with the zig-zag encoded absolute index `i + origin_offset`, so
//! the shift is O(1) and negative indices (the past of the driving sequence)
//! cost the same as positive ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::FiberMap;
use crate::rng::{counter_word, stream_key, tag, unit_f64, zigzag};

/// Map family driven by the parameter sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Liverani-Saussol-Vaienti maps with a neutral fixed point at 0.
    Lsv,
    /// `x -> 2x mod 1`; the parameter is ignored.
    Doubling,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Lsv => "lsv",
            Family::Doubling => "doubling",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lsv" => Ok(Family::Lsv),
            "doubling" => Ok(Family::Doubling),
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }

    fn check(self, bounds: ParamBounds) -> Result<()> {
        let fail = |reason| {
            Err(Error::InvalidBounds {
                family: self.name(),
                min: bounds.min,
                max: bounds.max,
                reason,
            })
        };
        if !bounds.min.is_finite() || !bounds.max.is_finite() {
            return fail("bounds must be finite");
        }
        if bounds.min > bounds.max {
            return fail("alpha_min exceeds alpha_max");
        }
        match self {
            Family::Lsv if bounds.min <= 0.0 || bounds.max >= 1.0 => {
                fail("LSV exponents must lie in (0, 1)")
            }
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Closed parameter interval `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub min: f64,
    pub max: f64,
}

impl ParamBounds {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn fixed(value: f64) -> Self {
        Self::new(value, value)
    }

    pub fn is_degenerate(&self) -> bool {
        self.min == self.max
    }
}

/// Anything that assigns a fiber map to every integer time.
///
/// `fiber(i)` is the map applied at time `i`, so an orbit started at time 0
/// is `x, f_0(x), f_1(f_0(x)), ...`.
pub trait FiberSequence: Clone + Send + Sync {
    fn family(&self) -> Family;

    fn param(&self, i: i64) -> f64;

    /// The sequence seen from time `k`: `shift(k).param(i) == param(i + k)`.
    fn shift(&self, k: i64) -> Self;

    /// True when every time carries the same fiber map.
    fn is_constant(&self) -> bool {
        false
    }

    #[inline]
    fn fiber(&self, i: i64) -> FiberMap {
        FiberMap::from_parts(self.family(), self.param(i))
    }
}

/// Seed-indexed i.i.d. uniform parameters on `[alpha_min, alpha_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamSequence {
    master_seed: u64,
    key: u64,
    family: Family,
    bounds: ParamBounds,
    origin_offset: i64,
}

impl ParamSequence {
    pub fn new(master_seed: u64, family: Family, bounds: ParamBounds) -> Result<Self> {
        family.check(bounds)?;
        Ok(Self {
            master_seed,
            key: stream_key(master_seed, tag::PARAMS),
            family,
            bounds,
            origin_offset: 0,
        })
    }

    pub fn from_descriptor(d: &SequenceDescriptor) -> Result<Self> {
        Self::new(d.seed, d.family, ParamBounds::new(d.alpha_min, d.alpha_max))
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn bounds(&self) -> ParamBounds {
        self.bounds
    }

    pub fn origin_offset(&self) -> i64 {
        self.origin_offset
    }

    pub fn descriptor(&self) -> SequenceDescriptor {
        SequenceDescriptor {
            family: self.family,
            alpha_min: self.bounds.min,
            alpha_max: self.bounds.max,
            seed: self.master_seed,
        }
    }
}

impl FiberSequence for ParamSequence {
    fn family(&self) -> Family {
        self.family
    }

    #[inline]
    fn param(&self, i: i64) -> f64 {
        if self.bounds.is_degenerate() {
            return self.bounds.min;
        }
        let index = i.wrapping_add(self.origin_offset);
        let u = unit_f64(counter_word(self.key, zigzag(index)));
        let width = self.bounds.max - self.bounds.min;
        (self.bounds.min + width * u).min(self.bounds.max)
    }

    fn shift(&self, k: i64) -> Self {
        Self {
            origin_offset: self.origin_offset.wrapping_add(k),
            ..*self
        }
    }

    fn is_constant(&self) -> bool {
        self.family == Family::Doubling || self.bounds.is_degenerate()
    }
}

/// Two parameter sequences glued at an absolute index: `head` drives times
/// before `split`, `tail` drives times from `split` on. Used to probe the
/// stopping-time property of return times.
#[derive(Clone, Copy, Debug)]
pub struct SplicedSequence {
    head: ParamSequence,
    tail: ParamSequence,
    split: i64,
    origin_offset: i64,
}

impl SplicedSequence {
    pub fn new(head: ParamSequence, tail: ParamSequence, split: i64) -> Result<Self> {
        if head.family() != tail.family() {
            return Err(Error::InvalidArgument(
                "spliced sequences must share a family".into(),
            ));
        }
        Ok(Self {
            head,
            tail,
            split,
            origin_offset: 0,
        })
    }
}

impl FiberSequence for SplicedSequence {
    fn family(&self) -> Family {
        self.head.family()
    }

    fn param(&self, i: i64) -> f64 {
        let absolute = i.wrapping_add(self.origin_offset);
        if absolute < self.split {
            self.head.param(absolute)
        } else {
            self.tail.param(absolute)
        }
    }

    fn shift(&self, k: i64) -> Self {
        Self {
            origin_offset: self.origin_offset.wrapping_add(k),
            ..*self
        }
    }
}

/// Serialized form of a sequence, as it appears in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceDescriptor {
    pub family: Family,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub seed: u64,
}
