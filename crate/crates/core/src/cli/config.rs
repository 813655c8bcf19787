//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional and has a
//! default; unknown keys are an error. Command-line `--key value` pairs are
//! applied after the file.

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::maps::Observable;
use crate::omega::{Family, ParamBounds};
use crate::stats::{Functional, RateParams, SamplingMode};
use crate::transfer::GridSettings;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub family: Family,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub master_seed: u64,
    /// Driving sequences use seeds `master_seed, master_seed + 1, ...`.
    pub n_seeds: usize,
    pub n_bins: usize,
    pub pullback_depth: usize,
    pub subsamples: usize,
    pub k_trunc: usize,
    pub n_steps: usize,
    pub n_samples: usize,
    pub observable: String,
    pub gamma: f64,
    pub sampling: SamplingMode,
    /// Fixed variance for clt/lil/fclt; `None` means estimate it by decomposition.
    pub sigma2: Option<f64>,
    pub n_max: u64,
    /// Horizon of the correlation-decay curve.
    pub decay_steps: usize,
    pub return_cap: u64,
    pub tail_y_min: f64,
    pub tail_uniform_share: f64,
    pub window_lo: f64,
    pub window_hi: f64,
    pub depth_cap: u32,
    pub mass_floor: f64,
    pub pair_samples: usize,
    pub l0: u32,
    pub l_max: u32,
    pub alpha_exp: f64,
    pub orbit_samples: usize,
    pub bootstrap_resamples: usize,
    pub functional: Functional,
    pub brownian_paths: usize,
    pub brownian_steps: usize,
    pub tails: String,
    pub p: f64,
    pub d: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            family: Family::Lsv,
            alpha_min: 0.05,
            alpha_max: 0.15,
            master_seed: 1,
            n_seeds: 16,
            n_bins: 1 << 12,
            pullback_depth: 32,
            subsamples: crate::transfer::DEFAULT_SUBSAMPLES,
            k_trunc: 16,
            n_steps: 1 << 12,
            n_samples: 10_000,
            observable: "cos2pi".into(),
            gamma: 0.5,
            sampling: SamplingMode::Equivariant,
            sigma2: None,
            n_max: 10_000,
            decay_steps: 64,
            return_cap: crate::tower::DEFAULT_RETURN_CAP,
            tail_y_min: 1e-18,
            tail_uniform_share: 0.5,
            window_lo: 100.0,
            window_hi: 10_000.0,
            depth_cap: 200,
            mass_floor: 0.01,
            pair_samples: 10_000,
            l0: 1,
            l_max: 16,
            alpha_exp: 0.1,
            orbit_samples: 10_000,
            bootstrap_resamples: 400,
            functional: Functional::Sup,
            brownian_paths: 100_000,
            brownian_steps: 1 << 10,
            tails: "polynomial".into(),
            p: f64::INFINITY,
            d: 10.0,
            a: 1.0,
            b: 1.0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse '{value}' for key '{key}'")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    match value {
        "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
        _ => parse_num(key, value),
    }
}

impl ExperimentConfig {
    /// Parse a config file body on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got '{raw}'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "family" => self.family = Family::parse(value)?,
            "alpha_min" => self.alpha_min = parse_f64(key, value)?,
            "alpha_max" => self.alpha_max = parse_f64(key, value)?,
            "master_seed" => self.master_seed = parse_num(key, value)?,
            "n_seeds" => self.n_seeds = parse_num(key, value)?,
            "n_bins" => self.n_bins = parse_num(key, value)?,
            "pullback_depth" => self.pullback_depth = parse_num(key, value)?,
            "subsamples" => self.subsamples = parse_num(key, value)?,
            "k_trunc" => self.k_trunc = parse_num(key, value)?,
            "n_steps" => self.n_steps = parse_num(key, value)?,
            "n_samples" => self.n_samples = parse_num(key, value)?,
            "observable" => self.observable = value.to_string(),
            "gamma" => self.gamma = parse_f64(key, value)?,
            "sampling" => {
                self.sampling = match value {
                    "equivariant" => SamplingMode::Equivariant,
                    "lebesgue" => SamplingMode::Lebesgue,
                    other => return Err(Error::Config(format!("unknown sampling '{other}'"))),
                }
            }
            "sigma2" => {
                self.sigma2 = match value {
                    "auto" => None,
                    v => Some(parse_f64(key, v)?),
                }
            }
            "n_max" => self.n_max = parse_num(key, value)?,
            "decay_steps" => self.decay_steps = parse_num(key, value)?,
            "return_cap" => self.return_cap = parse_num(key, value)?,
            "tail_y_min" => self.tail_y_min = parse_f64(key, value)?,
            "tail_uniform_share" => self.tail_uniform_share = parse_f64(key, value)?,
            "window_lo" => self.window_lo = parse_f64(key, value)?,
            "window_hi" => self.window_hi = parse_f64(key, value)?,
            "depth_cap" => self.depth_cap = parse_num(key, value)?,
            "mass_floor" => self.mass_floor = parse_f64(key, value)?,
            "pair_samples" => self.pair_samples = parse_num(key, value)?,
            "l0" => self.l0 = parse_num(key, value)?,
            "l_max" => self.l_max = parse_num(key, value)?,
            "alpha_exp" => self.alpha_exp = parse_f64(key, value)?,
            "orbit_samples" => self.orbit_samples = parse_num(key, value)?,
            "bootstrap_resamples" => self.bootstrap_resamples = parse_num(key, value)?,
            "functional" => self.functional = Functional::parse(value)?,
            "brownian_paths" => self.brownian_paths = parse_num(key, value)?,
            "brownian_steps" => self.brownian_steps = parse_num(key, value)?,
            "tails" => self.tails = value.to_string(),
            "p" => self.p = parse_f64(key, value)?,
            "d" | "D" => self.d = parse_f64(key, value)?,
            "a" => self.a = parse_f64(key, value)?,
            "b" => self.b = parse_f64(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Range checks that do not depend on the subcommand.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        crate::omega::ParamSequence::new(self.master_seed, self.family, self.bounds())?;
        if self.n_seeds == 0 {
            return bad("n_seeds must be at least 1");
        }
        if self.n_bins < 2 || self.subsamples == 0 {
            return bad("n_bins must be at least 2 and subsamples at least 1");
        }
        if self.n_steps == 0 || self.n_samples == 0 {
            return bad("n_steps and n_samples must be positive");
        }
        if self.n_max < 2 {
            return bad("n_max must be at least 2");
        }
        if self.decay_steps == 0 {
            return bad("decay_steps must be positive");
        }
        if self.return_cap == 0 {
            return bad("return_cap must be positive");
        }
        if !(self.tail_y_min > 0.0 && self.tail_y_min < 1.0) {
            return bad("tail_y_min must lie in (0, 1)");
        }
        if !(self.tail_uniform_share > 0.0 && self.tail_uniform_share <= 1.0) {
            return bad("tail_uniform_share must lie in (0, 1]");
        }
        if !(self.window_lo > 0.0 && self.window_lo < self.window_hi) {
            return bad("need 0 < window_lo < window_hi");
        }
        if !(self.mass_floor >= 0.0 && self.mass_floor < 1.0) {
            return bad("mass_floor must lie in [0, 1)");
        }
        if self.l0 == 0 || self.l_max == 0 {
            return bad("l0 and l_max must be at least 1");
        }
        if !(self.alpha_exp > 0.0 && self.alpha_exp < 1.0) {
            return bad("alpha_exp must lie in (0, 1)");
        }
        if let Some(s) = self.sigma2 {
            if !(s > 0.0 && s.is_finite()) {
                return bad("sigma2 must be positive or 'auto'");
            }
        }
        if self.tails != "polynomial" && self.tails != "exponential" {
            return bad("tails must be 'polynomial' or 'exponential'");
        }
        if self.brownian_paths == 0 || self.brownian_steps == 0 || self.bootstrap_resamples == 0 {
            return bad("brownian_paths, brownian_steps and bootstrap_resamples must be positive");
        }
        self.observable()?;
        Ok(())
    }

    pub fn bounds(&self) -> ParamBounds {
        ParamBounds::new(self.alpha_min, self.alpha_max)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|i| self.master_seed.wrapping_add(i)).collect()
    }

    pub fn grid(&self) -> GridSettings {
        GridSettings {
            n_bins: self.n_bins,
            pullback_depth: self.pullback_depth,
            subsamples: self.subsamples,
        }
    }

    pub fn observable(&self) -> Result<Observable> {
        Observable::from_name(&self.observable, self.gamma)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn rate_params(&self) -> RateParams {
        if self.tails == "exponential" {
            RateParams::Exponential { a: self.a, b: self.b }
        } else {
            RateParams::Polynomial { p: self.p, d: self.d }
        }
    }

    /// Every key with its effective value, in a fixed order.
    pub fn echo(&self) -> Value {
        let f = |x: f64| {
            if x.is_finite() {
                Value::from(x)
            } else {
                Value::from(crate::report::fmt_float(x))
            }
        };
        let mut m = Map::new();
        m.insert("family".into(), self.family.name().into());
        m.insert("alpha_min".into(), f(self.alpha_min));
        m.insert("alpha_max".into(), f(self.alpha_max));
        m.insert("master_seed".into(), self.master_seed.into());
        m.insert("n_seeds".into(), self.n_seeds.into());
        m.insert("n_bins".into(), self.n_bins.into());
        m.insert("pullback_depth".into(), self.pullback_depth.into());
        m.insert("subsamples".into(), self.subsamples.into());
        m.insert("k_trunc".into(), self.k_trunc.into());
        m.insert("n_steps".into(), self.n_steps.into());
        m.insert("n_samples".into(), self.n_samples.into());
        m.insert("observable".into(), self.observable.clone().into());
        m.insert("gamma".into(), f(self.gamma));
        m.insert(
            "sampling".into(),
            match self.sampling {
                SamplingMode::Equivariant => "equivariant",
                SamplingMode::Lebesgue => "lebesgue",
            }
            .into(),
        );
        m.insert("sigma2".into(), self.sigma2.map_or(Value::from("auto"), f));
        m.insert("n_max".into(), self.n_max.into());
        m.insert("decay_steps".into(), self.decay_steps.into());
        m.insert("return_cap".into(), self.return_cap.into());
        m.insert("tail_y_min".into(), f(self.tail_y_min));
        m.insert("tail_uniform_share".into(), f(self.tail_uniform_share));
        m.insert("window_lo".into(), f(self.window_lo));
        m.insert("window_hi".into(), f(self.window_hi));
        m.insert("depth_cap".into(), self.depth_cap.into());
        m.insert("mass_floor".into(), f(self.mass_floor));
        m.insert("pair_samples".into(), self.pair_samples.into());
        m.insert("l0".into(), self.l0.into());
        m.insert("l_max".into(), self.l_max.into());
        m.insert("alpha_exp".into(), f(self.alpha_exp));
        m.insert("orbit_samples".into(), self.orbit_samples.into());
        m.insert("bootstrap_resamples".into(), self.bootstrap_resamples.into());
        m.insert("functional".into(), self.functional.name().into());
        m.insert("brownian_paths".into(), self.brownian_paths.into());
        m.insert("brownian_steps".into(), self.brownian_steps.into());
        m.insert("tails".into(), self.tails.clone().into());
        m.insert("p".into(), f(self.p));
        m.insert("d".into(), f(self.d));
        m.insert("a".into(), f(self.a));
        m.insert("b".into(), f(self.b));
        Value::Object(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = ExperimentConfig::from_text("# doubling baseline\nfamily = doubling\nalpha_min=0\nalpha_max = 0 # ignored\n\np = inf\n").unwrap();
        assert_eq!(cfg.family, Family::Doubling);
        assert_eq!(cfg.alpha_max, 0.0);
        assert!(cfg.p.is_infinite());
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_text("colour = blue").is_err());
        assert!(ExperimentConfig::from_text("n_bins = many").is_err());
        assert!(ExperimentConfig::from_text("just a line").is_err());
        let cfg = ExperimentConfig::from_text("alpha_min = 0.3\nalpha_max = 0.1").unwrap();
        assert!(cfg.validate().is_err());
    }
}
