//! Subcommand bodies. Each one writes its tables into the output directory and
//! returns the checks that make up `verdict.json`.

use serde_json::json;

use super::config::ExperimentConfig;
use crate::coupling::{coupling_tail, estimate_l0, CouplingTailOptions};
use crate::decomp::{coboundary_test, decompose_ensemble, sigma_squared, DecompSettings, Degeneracy};
use crate::error::Result;
use crate::fit::fit_power_law;
use crate::omega::{Family, FiberSequence, ParamSequence};
use crate::report::{Check, CsvTable, OutputDir};
use crate::stats::{
    asip_rate, birkhoff_ensemble, qclt_test, qfclt_paths, qlil_envelope, variance_growth,
    BirkhoffEnsemble, BootstrapOptions, BrownianReference, EnsembleSettings,
};
use crate::tower::{build_partition, distortion_check, gcd_check, tail_curve, TailOptions, TailSampling};
use crate::transfer::{decay_curve, equivariance_residual, equivariant_density, GridSettings};
use crate::csv_row;

/// Smallest `n` entering the variance-flatness check.
const FLAT_FROM: usize = 256;

fn window(cfg: &ExperimentConfig) -> (f64, f64) {
    (cfg.window_lo, cfg.window_hi)
}

fn decomp_settings(cfg: &ExperimentConfig) -> DecompSettings {
    DecompSettings {
        k_trunc: cfg.k_trunc,
        grid: cfg.grid(),
    }
}

pub fn tail(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<Check>> {
    let opts = TailOptions::new(cfg.n_max, cfg.n_samples)
        .with_cap(cfg.return_cap)
        .with_sampling(TailSampling::LogUniformMixture {
            y_min: cfg.tail_y_min,
            uniform_share: cfg.tail_uniform_share,
        });
    let curve = tail_curve(cfg.family, cfg.bounds(), &cfg.seeds(), &opts)?;
    let mut t = CsvTable::new(&["n", "tail", "std_err", "n_eff"]);
    for r in &curve.rows {
        t.push(csv_row![r.n, r.estimate, r.std_err, r.n_eff]);
    }
    out.write_csv("tail.csv", &t)?;

    let mut checks = vec![Check::below("capped_fraction", curve.capped_fraction, 0.01)];
    let fit = match cfg.family {
        Family::Doubling => {
            let worst = curve
                .rows
                .iter()
                .take_while(|r| r.n <= 30)
                .map(|r| {
                    let exact = 0.5f64.powi(r.n as i32);
                    if r.std_err > 0.0 {
                        (r.estimate - exact).abs() / r.std_err
                    } else if r.estimate == exact {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                })
                .fold(0.0, f64::max);
            checks.push(Check::new("doubling_exact_tail", worst <= 3.0, worst, 3.0, "max |tail - 2^-n| / se"));
            None
        }
        Family::Lsv => {
            let fit = curve.fit(window(cfg))?;
            if cfg.bounds().is_degenerate() {
                let target = 1.0 / cfg.alpha_min;
                let rel = (fit.exponent - target).abs() / target;
                checks.push(Check::new(
                    "tail_exponent",
                    rel <= 0.15,
                    rel,
                    0.15,
                    format!("fitted {:.4} against 1/alpha = {target:.4}", fit.exponent),
                ));
            }
            Some(fit)
        }
    };
    out.write_json(
        "tail.json",
        &json!({
            "samples": curve.samples,
            "capped_fraction": curve.capped_fraction,
            "fit": fit,
            "warnings": curve.warnings,
        }),
    )?;
    Ok(checks)
}

pub fn partition(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<Check>> {
    let mut cells = CsvTable::new(&["seed", "return_time", "lo", "hi", "mass", "fraction", "image_lo", "image_hi", "markov_ok"]);
    let mut summary = CsvTable::new(&[
        "seed",
        "cells",
        "covered_mass",
        "residual_mass",
        "gcd",
        "empirical_cf",
        "min_expansion",
        "violations",
    ]);
    let (mut gcd_ok, mut violations) = (0usize, 0usize);
    for seed in cfg.seeds() {
        let seq = ParamSequence::new(seed, cfg.family, cfg.bounds())?;
        let p = build_partition(&seq, cfg.depth_cap as u64, 1e-12)?;
        for c in &p.cells {
            cells.push(csv_row![seed, c.return_time, c.lo, c.hi, c.mass, c.fraction(), c.image_lo, c.image_hi, c.markov_ok]);
        }
        let gcd = gcd_check(&p, cfg.mass_floor)?;
        let d = distortion_check(&seq, &p, cfg.pair_samples, seed, 0.5)?;
        gcd_ok += (gcd == 1) as usize;
        violations += d.violations;
        summary.push(csv_row![
            seed,
            p.cells.len(),
            p.covered_mass(),
            p.residual_mass,
            gcd,
            d.empirical_cf,
            d.min_expansion,
            d.violations
        ]);
    }
    out.write_csv("partition_cells.csv", &cells)?;
    out.write_csv("partition_summary.csv", &summary)?;
    let n = cfg.n_seeds;
    Ok(vec![
        Check::new("gcd_one", gcd_ok == n, gcd_ok as f64, n as f64, "seeds with gcd 1"),
        Check::new("expansion", violations == 0, violations as f64, 0.0, "pairs with expansion below 2"),
    ])
}

pub fn density(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<Check>> {
    let grid = cfg.grid();
    let shallow = GridSettings {
        pullback_depth: cfg.pullback_depth.min(4),
        ..grid
    };
    let mut t = CsvTable::new(&["seed", "residual_shallow", "residual"]);
    let (mut improved, mut worst) = (0usize, 0.0f64);
    for seed in cfg.seeds() {
        let seq = ParamSequence::new(seed, cfg.family, cfg.bounds())?;
        let r = equivariance_residual(&seq, &grid)?;
        let r4 = equivariance_residual(&seq, &shallow)?;
        improved += (r < r4) as usize;
        worst = worst.max(r);
        t.push(csv_row![seed, r4, r]);
    }
    out.write_csv("equivariance.csv", &t)?;

    let seq = ParamSequence::new(cfg.master_seed, cfg.family, cfg.bounds())?;
    let h = equivariant_density(&seq, &grid)?;
    let mut d = CsvTable::new(&["bin", "x_lo", "x_hi", "density"]);
    let w = 1.0 / grid.n_bins as f64;
    for i in 0..grid.n_bins {
        d.push(csv_row![i, i as f64 * w, (i + 1) as f64 * w, h.density(i)]);
    }
    out.write_csv("density.csv", &d)?;

    let mut checks = vec![Check::new(
        "equivariance_residual",
        worst <= 1e-2,
        worst,
        1e-2,
        "max over seeds of |push(h) - h_shift|_1",
    )];
    if cfg.pullback_depth > 4 && !seq.is_constant() {
        let need = (0.9 * cfg.n_seeds as f64).ceil();
        checks.push(Check::new(
            "depth_improves",
            improved as f64 >= need,
            improved as f64,
            need,
            "seeds where the deep pullback beats depth 4",
        ));
    }
    Ok(checks)
}

pub fn decay(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<Check>> {
    let obs = cfg.observable()?;
    let curve = decay_curve(cfg.family, cfg.bounds(), &cfg.seeds(), &obs, cfg.decay_steps, &cfg.grid())?;
    let mut t = CsvTable::new(&["n", "l1_norm", "std_err"]);
    for r in &curve.rows {
        t.push(csv_row![r.n, r.estimate, r.std_err]);
    }
    out.write_csv("decay.csv", &t)?;
    out.write_json(
        "decay.json",
        &json!({ "max_masked_fraction": curve.max_masked_fraction, "warnings": curve.warnings }),
    )?;
    Ok(vec![Check::new(
        "masked_fraction",
        curve.max_masked_fraction <= crate::transfer::MASK_LIMIT,
        curve.max_masked_fraction,
        crate::transfer::MASK_LIMIT,
        "largest masked-bin fraction of the dual operator",
    )])
}

pub fn decompose(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<Check>> {
    let obs = cfg.observable()?;
    let settings = decomp_settings(cfg);
    let ens = decompose_ensemble(
        cfg.family,
        cfg.bounds(),
        &cfg.seeds(),
        &obs,
        &settings,
        cfg.orbit_samples,
        cfg.master_seed,
    )?;
    let verdict = coboundary_test(&ens);

    let mut t = CsvTable::new(&[
        "seed",
        "sigma2_fiber",
        "residual_l1",
        "first_term",
        "truncation_tail",
        "omitted_term",
        "masked_fraction",
        "sup_g",
    ]);
    for (seed, d) in cfg.seeds().iter().zip(&ens.decompositions) {
        t.push(csv_row![
            *seed,
            d.sigma2_fiber,
            d.residual_l1,
            d.first_term,
            d.truncation_tail,
            d.omitted_term,
            d.masked_fraction,
            d.sup_g
        ]);
    }
    out.write_csv("decomposition.csv", &t)?;
    let first = &ens.decompositions[0];
    let mut g = CsvTable::new(&["bin", "g", "psi"]);
    for (i, (gv, pv)) in first.g.values.iter().zip(&first.psi.values).enumerate() {
        g.push(csv_row![i, *gv, *pv]);
    }
    out.write_csv("g_psi.csv", &g)?;

    let mut checks = vec![Check::new(
        "verdict",
        true,
        verdict.sigma2,
        3.0 * verdict.std_err,
        match verdict.verdict {
            Degeneracy::Degenerate => "degenerate",
            Degeneracy::Nondegenerate => "nondegenerate",
        },
    )];
    let mut decay_exponent = None;
    if verdict.verdict == Degeneracy::Degenerate {
        checks.push(Check::below("pointwise_residual", ens.pointwise_residual, 1e-3));
        let ens_b = ensemble(cfg, &obs)?;
        let rows = variance_growth(&ens_b, &bootstrap(cfg, &ens_b))?;
        let mut v = CsvTable::new(&["n", "variance_over_n"]);
        for r in &rows {
            v.push(csv_row![r.n, r.ratio]);
        }
        out.write_csv("variance_decay.csv", &v)?;
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.ratio)).collect();
        let fit = fit_power_law(&pts, (16.0, cfg.n_steps as f64))?;
        checks.push(Check::new(
            "variance_over_n_like_1_over_n",
            (fit.exponent - 1.0).abs() <= 0.2,
            fit.exponent,
            1.0,
            "log-log slope of var(S_n)/n, accepted within 0.2 of 1",
        ));
        decay_exponent = Some(fit.exponent);
    }
    out.write_json(
        "decompose.json",
        &json!({
            "sigma2": ens.sigma2,
            "sigma2_coarse": ens.sigma2_coarse,
            "pointwise_residual": ens.pointwise_residual,
            "pointwise_samples": ens.pointwise_samples,
            "verdict": verdict,
            "variance_decay_exponent": decay_exponent,
            "warnings": ens.decompositions.iter().flat_map(|d| d.warnings.clone()).collect::<Vec<_>>(),
        }),
    )?;
    Ok(checks)
}

pub fn couple(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<Check>> {
    let seeds = cfg.seeds();
    let l0 = estimate_l0(cfg.family, cfg.bounds(), &seeds, cfg.l_max, cfg.pair_samples)?;
    let mut lt = CsvTable::new(&["l", "eps_hat"]);
    for (l, e) in l0.eps_hat.iter().enumerate() {
        lt.push(csv_row![l, *e]);
    }
    out.write_csv("l0.csv", &lt)?;

    let mut opts = CouplingTailOptions::new(cfg.l0, cfg.n_max, cfg.pair_samples);
    opts.alpha_exp = cfg.alpha_exp;
    opts.return_cap = cfg.return_cap;
    let tail = coupling_tail(cfg.family, cfg.bounds(), &seeds, &opts)?;
    let mut t = CsvTable::new(&["n", "tail", "std_err"]);
    for r in &tail.rows {
        t.push(csv_row![r.n, r.tail, r.std_err]);
    }
    out.write_csv("coupling_tail.csv", &t)?;

    // fit where the tail is resolved by at least ~100 pairs
    let floor = 100.0 / tail.pairs as f64;
    let last = tail.rows.iter().take_while(|r| r.tail >= floor).last().map_or(1, |r| r.n);
    let win = (1.0, last.max(2) as f64);
    let exp_fit = tail.fit_exponential(win).ok();
    let pow_fit = tail.fit_power_law(win).ok();
    out.write_json(
        "couple.json",
        &json!({
            "suggested_l0": l0.suggested_l0,
            "pairs": tail.pairs,
            "capped_fraction": tail.capped_fraction,
            "exponential_fit": exp_fit,
            "power_law_fit": pow_fit,
            "warnings": l0.warnings.iter().chain(&tail.warnings).collect::<Vec<_>>(),
        }),
    )?;
    let mut checks = vec![Check::below("capped_fraction", tail.capped_fraction, 0.01)];
    if cfg.family == Family::Doubling {
        let rate = exp_fit.map_or(f64::NAN, |f| f.rate);
        checks.push(Check::new("geometric_decay", rate > 0.0, rate, 0.0, "log-linear decay rate"));
    }
    Ok(checks)
}

fn ensemble(cfg: &ExperimentConfig, obs: &crate::Observable) -> Result<BirkhoffEnsemble> {
    let seq = ParamSequence::new(cfg.master_seed, cfg.family, cfg.bounds())?;
    let settings = EnsembleSettings {
        n_steps: cfg.n_steps,
        n_samples: cfg.n_samples,
        sampling: cfg.sampling,
        grid: cfg.grid(),
        sample_seed: cfg.master_seed,
    };
    birkhoff_ensemble(&seq, obs, &settings, Some(cfg.master_seed))
}

/// Simultaneous intervals over the checkpoints tested for flatness.
fn bootstrap(cfg: &ExperimentConfig, ens: &BirkhoffEnsemble) -> BootstrapOptions {
    let tested = ens.checkpoints.iter().filter(|&&n| n >= FLAT_FROM).count().max(1);
    BootstrapOptions {
        resamples: cfg.bootstrap_resamples,
        confidence: 1.0 - 0.01 / tested as f64,
        seed: cfg.master_seed,
    }
}

/// Configured variance (exact, zero error) or the decomposition estimate over
/// the seeds with its standard error.
struct Sigma2 {
    value: f64,
    std_err: f64,
    source: &'static str,
}

fn resolve_sigma2(cfg: &ExperimentConfig, obs: &crate::Observable) -> Result<Sigma2> {
    Ok(match cfg.sigma2 {
        Some(value) => Sigma2 {
            value,
            std_err: 0.0,
            source: "config",
        },
        None => {
            let s = sigma_squared(cfg.family, cfg.bounds(), &cfg.seeds(), obs, &decomp_settings(cfg))?;
            Sigma2 {
                value: s.mean,
                std_err: s.std_err,
                source: "decomposition",
            }
        }
    })
}

pub fn clt(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<Check>> {
    let obs = cfg.observable()?;
    let sigma2 = resolve_sigma2(cfg, &obs)?;
    let ens = ensemble(cfg, &obs)?;
    let opts = bootstrap(cfg, &ens);
    let rows = variance_growth(&ens, &opts)?;
    let mut v = CsvTable::new(&["n", "variance_over_n", "ci_lo", "ci_hi", "std_err"]);
    for r in &rows {
        v.push(csv_row![r.n, r.ratio, r.ci_lo, r.ci_hi, r.std_err]);
    }
    out.write_csv("variance_growth.csv", &v)?;
    let ks = qclt_test(&ens, sigma2.value)?;
    let mut z = CsvTable::new(&["sample", "standardized_sum"]);
    for (i, s) in crate::stats::standardized_terminal(&ens, sigma2.value)?.iter().enumerate() {
        z.push(csv_row![i, *s]);
    }
    out.write_csv("terminal.csv", &z)?;

    // the sigma2 band is widened by three of its own standard errors
    let (lo, hi) = (sigma2.value - 3.0 * sigma2.std_err, sigma2.value + 3.0 * sigma2.std_err);
    let outside = rows
        .iter()
        .filter(|r| r.n >= FLAT_FROM && (r.ci_hi < lo || r.ci_lo > hi))
        .count();
    let worst_z = rows
        .iter()
        .filter(|r| 4 * r.n >= 3 * ens.n_steps)
        .map(|r| (r.ratio - sigma2.value).abs() / r.std_err.hypot(sigma2.std_err))
        .fold(0.0, f64::max);
    out.write_json(
        "clt.json",
        &json!({
            "sigma2": sigma2.value,
            "sigma2_std_err": sigma2.std_err,
            "sigma2_source": sigma2.source,
            "ks": ks,
            "bootstrap_confidence": opts.confidence,
        }),
    )?;
    Ok(vec![
        Check::below("ks_statistic", ks.statistic, 0.03),
        Check::new(
            "variance_flat",
            outside == 0,
            outside as f64,
            0.0,
            format!("checkpoints n >= {FLAT_FROM} whose simultaneous interval misses the sigma2 band"),
        ),
        Check::new(
            "variance_consistency",
            worst_z <= 3.0,
            worst_z,
            3.0,
            "top-quartile |var(S_n)/n - sigma2| in combined standard errors",
        ),
    ])
}

pub fn lil(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<Check>> {
    let obs = cfg.observable()?;
    let Sigma2 { value: sigma2, source, .. } = resolve_sigma2(cfg, &obs)?;
    let ens = ensemble(cfg, &obs)?;
    let mut t = CsvTable::new(&["c", "sigma", "median_max", "iqr_max", "median_min", "iqr_min"]);
    let mut envelopes = Vec::new();
    for c in [1.0, 2.0] {
        let e = qlil_envelope(&ens, sigma2, c)?;
        t.push(csv_row![e.c, e.sigma, e.median_max, e.iqr_max, e.median_min, e.iqr_min]);
        envelopes.push(e);
    }
    out.write_csv("lil.csv", &t)?;
    out.write_json("lil.json", &json!({ "sigma2": sigma2, "sigma2_source": source, "envelopes": envelopes }))?;
    let e = &envelopes[1];
    let ratio = if e.sigma > 0.0 { e.median_max / e.sigma } else { f64::NAN };
    Ok(vec![Check::new(
        "lil_envelope_order_one",
        (0.25..=2.0).contains(&ratio),
        ratio,
        1.0,
        "median of max_k S_k / sqrt(2 k ln ln k) over sigma, accepted in [0.25, 2]",
    )])
}

pub fn fclt(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<Check>> {
    let obs = cfg.observable()?;
    let Sigma2 { value: sigma2, source, .. } = resolve_sigma2(cfg, &obs)?;
    let ens = ensemble(cfg, &obs)?;
    let reference = BrownianReference::simulate(cfg.brownian_paths, cfg.brownian_steps, cfg.master_seed)?;
    let self_test = reference.reflection_self_test();
    let test = qfclt_paths(&ens, sigma2, cfg.functional, &reference)?;
    let mut t = CsvTable::new(&["sample", "value"]);
    for (i, v) in test.values.iter().enumerate() {
        t.push(csv_row![i, *v]);
    }
    out.write_csv("functional.csv", &t)?;
    out.write_json(
        "fclt.json",
        &json!({
            "sigma2": sigma2,
            "sigma2_source": source,
            "functional": cfg.functional,
            "ks": test.ks,
            "brownian_self_test": self_test,
        }),
    )?;
    Ok(vec![
        Check::below("functional_ks", test.ks.statistic, 0.05),
        Check::below("brownian_self_test", self_test.statistic, 0.01),
    ])
}

pub fn rate(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<Check>> {
    let r = asip_rate(cfg.rate_params())?;
    let bound = |x: f64| if x.is_finite() { json!(x) } else { json!(crate::report::fmt_float(x)) };
    out.write_json(
        "rate.json",
        &json!({
            "epsilon_1": r.epsilon_1,
            "epsilon_D": r.epsilon_d,
            "epsilon_0_interval": [bound(r.epsilon_0_interval.0), bound(r.epsilon_0_interval.1)],
            "arbitrarily_small": r.arbitrarily_small,
        }),
    )?;
    Ok(vec![Check::new("admissible", true, 1.0, 1.0, "rate parameters accepted")])
}
