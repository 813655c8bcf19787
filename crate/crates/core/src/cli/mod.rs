//! The `quenched-limits` experiment runner.
//!
//! ```text
//! quenched-limits <subcommand> --config <file> [--key value ...] --out <dir> [--threads N]
//! ```
//!
//! Every run writes the subcommand's tables, a `verdict.json` with its checks
//! and a `manifest.json` hashing every file.

pub mod config;
mod run;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::ExperimentConfig;

use crate::error::{Error, Result};
use crate::report::{OutputDir, Verdict};

pub const SUBCOMMANDS: [&str; 10] = [
    "tail", "partition", "density", "decay", "decompose", "couple", "clt", "lil", "fclt", "rate",
];

pub const HELP: &str = "\
quenched-limits: quenched limit laws for random intermittent maps

usage: quenched-limits <subcommand> --config <file> [--key value ...] --out <dir> [--threads N]

The config file holds `key = value` lines; `--key value` overrides follow it.
Every run writes verdict.json and manifest.json next to the files below.
Floats in CSV files use 17 significant digits.

subcommands and their CSV columns:
  tail       tail.csv: n,tail,std_err,n_eff                 (+ tail.json)
  partition  partition_cells.csv: seed,return_time,lo,hi,mass,fraction,image_lo,image_hi,markov_ok
             partition_summary.csv: seed,cells,covered_mass,residual_mass,gcd,empirical_cf,min_expansion,violations
  density    equivariance.csv: seed,residual_shallow,residual
             density.csv: bin,x_lo,x_hi,density
  decay      decay.csv: n,l1_norm,std_err                   (+ decay.json)
  decompose  decomposition.csv: seed,sigma2_fiber,residual_l1,first_term,truncation_tail,omitted_term,masked_fraction,sup_g
             g_psi.csv: bin,g,psi
             variance_decay.csv: n,variance_over_n          (degenerate verdict only; + decompose.json)
  couple     l0.csv: l,eps_hat
             coupling_tail.csv: n,tail,std_err              (+ couple.json)
  clt        variance_growth.csv: n,variance_over_n,ci_lo,ci_hi,std_err
             terminal.csv: sample,standardized_sum          (+ clt.json)
  lil        lil.csv: c,sigma,median_max,iqr_max,median_min,iqr_min (+ lil.json)
  fclt       functional.csv: sample,value                   (+ fclt.json)
  rate       rate.json only

exit status: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error
";

#[derive(Clone, Debug, PartialEq)]
pub struct Invocation {
    pub subcommand: String,
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

/// Parse the arguments after the program name.
pub fn parse_args(args: &[String]) -> Result<Invocation> {
    let mut it = args.iter();
    let subcommand = it
        .next()
        .ok_or_else(|| Error::Config("missing subcommand".into()))?
        .clone();
    if !SUBCOMMANDS.contains(&subcommand.as_str()) {
        return Err(Error::Config(format!("unknown subcommand '{subcommand}'")));
    }
    let mut config_path = None;
    let mut out = None;
    let mut threads = None;
    let mut overrides = Vec::new();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected --key, got '{flag}'")))?;
        let value = it
            .next()
            .ok_or_else(|| Error::Config(format!("missing value for --{key}")))?;
        match key {
            "config" => config_path = Some(PathBuf::from(value)),
            "out" => out = Some(PathBuf::from(value)),
            "threads" => {
                threads = Some(
                    value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad thread count '{value}'")))?,
                )
            }
            _ => overrides.push((key.to_string(), value.clone())),
        }
    }
    let mut config = match config_path {
        Some(p) => {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            ExperimentConfig::from_text(&text)?
        }
        None => return Err(Error::Config("missing --config".into())),
    };
    for (k, v) in &overrides {
        config.set(k, v)?;
    }
    let out = out.ok_or_else(|| Error::Config("missing --out".into()))?;
    Ok(Invocation {
        subcommand,
        config,
        out,
        threads,
    })
}

/// Run one subcommand and write its outputs, verdict and manifest.
pub fn run(subcommand: &str, config: &ExperimentConfig, out_dir: &Path) -> Result<Verdict> {
    config.validate()?;
    let start = Instant::now();
    let mut out = OutputDir::create(out_dir)?;
    let checks = match subcommand {
        "tail" => run::tail(config, &mut out)?,
        "partition" => run::partition(config, &mut out)?,
        "density" => run::density(config, &mut out)?,
        "decay" => run::decay(config, &mut out)?,
        "decompose" => run::decompose(config, &mut out)?,
        "couple" => run::couple(config, &mut out)?,
        "clt" => run::clt(config, &mut out)?,
        "lil" => run::lil(config, &mut out)?,
        "fclt" => run::fclt(config, &mut out)?,
        "rate" => run::rate(config, &mut out)?,
        other => return Err(Error::Config(format!("unknown subcommand '{other}'"))),
    };
    let verdict = Verdict::new(subcommand, checks);
    out.write_json("verdict.json", &verdict)?;
    out.write_manifest(subcommand, config.echo(), start.elapsed().as_secs_f64())?;
    Ok(verdict)
}

/// Entry point of the binary; returns the process exit status.
pub fn main_with_args(args: &[String]) -> i32 {
    if args.is_empty() || args.iter().any(|a| a == "--help" || a == "-h") {
        print!("{HELP}");
        return if args.is_empty() { 2 } else { 0 };
    }
    let inv = match parse_args(args) {
        Ok(inv) => inv,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let result = (|| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(inv.threads.unwrap_or(0))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| run(&inv.subcommand, &inv.config, &inv.out))
    })();
    match result {
        Ok(v) => {
            for c in &v.checks {
                println!(
                    "{} {}: value {} threshold {} ({})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold,
                    c.detail
                );
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
