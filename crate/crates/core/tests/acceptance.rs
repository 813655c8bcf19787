//! End-to-end acceptance suite. Runs every criterion, prints one PASS/FAIL
//! line each, writes a combined verdict JSON and fails if any criterion fails.
//!
//! Run alone with `cargo test --release --test acceptance`.

use std::time::Instant;

use quenched_limits::cli::{run, ExperimentConfig};
use quenched_limits::coupling::{coupling_tail, match_pair, CouplingTailOptions, MatchLimits};
use quenched_limits::decomp::{
    coboundary_test, decompose_ensemble, martingale_psi, sigma_squared, DecompSettings, Degeneracy,
};
use quenched_limits::fit::fit_power_law;
use quenched_limits::stats::{
    asip_rate, birkhoff_ensemble, null_calibration, qclt_test, qfclt_paths, variance_growth,
    BirkhoffEnsemble, BootstrapOptions, BrownianReference, EnsembleSettings, Functional, RateParams,
    SamplingMode,
};
use quenched_limits::tower::{build_partition, gcd_check, in_base, tail_curve, TailOptions, TailSampling};
use quenched_limits::transfer::{equivariance_residual, pushforward, ulam_matrix, GridDensity, GridSettings};
use quenched_limits::{Family, FiberMap, FiberSequence, Observable, ParamBounds, ParamSequence, Result};
use serde_json::json;

const LSV: (f64, f64) = (0.05, 0.15);
const N_BINS: usize = 1 << 12;
const N_STEPS: usize = 1 << 12;
const N_SAMPLES: usize = 10_000;

fn lsv_bounds() -> ParamBounds {
    ParamBounds::new(LSV.0, LSV.1)
}

fn doubling_bounds() -> ParamBounds {
    ParamBounds::fixed(0.0)
}

struct Outcome {
    pass: bool,
    summary: String,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Self {
            pass,
            summary: summary.into(),
        }
    }
}

/// Ensembles shared between the CLT, FCLT and variance criteria.
struct Shared {
    doubling: BirkhoffEnsemble,
    doubling_sigma2: f64,
    lsv: BirkhoffEnsemble,
    lsv_sigma2: f64,
}

fn ensemble(family: Family, bounds: ParamBounds, obs: &Observable, n_steps: usize, n_samples: usize) -> Result<BirkhoffEnsemble> {
    let seq = ParamSequence::new(1, family, bounds)?;
    let settings = EnsembleSettings {
        n_steps,
        n_samples,
        sampling: SamplingMode::Equivariant,
        grid: GridSettings::new(N_BINS, 32),
        sample_seed: 1,
    };
    birkhoff_ensemble(&seq, obs, &settings, Some(1))
}

fn seeds(n: u64) -> Vec<u64> {
    (1..=n).collect()
}

fn c1_transfer() -> Result<Outcome> {
    let mut worst_row: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    let maps = [
        FiberMap::lsv(0.05)?,
        FiberMap::lsv(0.1)?,
        FiberMap::lsv(0.15)?,
        FiberMap::doubling(),
    ];
    let mut build_time: f64 = 0.0;
    for map in &maps {
        let t = Instant::now();
        let m = ulam_matrix(map, N_BINS, 64)?;
        build_time = build_time.max(t.elapsed().as_secs_f64());
        worst_row = (0..N_BINS).map(|i| (m.row_sum(i) - 1.0).abs()).fold(worst_row, f64::max);
        let mut rho = GridDensity::uniform(N_BINS);
        for _ in 0..8 {
            rho = pushforward(&m, &rho)?;
            worst_mass = worst_mass.max((rho.total_mass() - 1.0).abs());
        }
    }
    Ok(Outcome::new(
        worst_row <= 1e-12 && worst_mass <= 1e-12 && build_time < 1.0,
        format!("max |row sum - 1| {worst_row:.1e}, max mass defect {worst_mass:.1e}, slowest matrix {build_time:.3} s"),
    ))
}

fn c2_doubling_variance(shared: &Shared) -> Result<Outcome> {
    let s = sigma_squared(
        Family::Doubling,
        doubling_bounds(),
        &seeds(4),
        &Observable::Cos2Pi,
        &DecompSettings::new(16, N_BINS, 32),
    )?;
    let ens = &shared.doubling;
    let tested = ens.checkpoints.iter().filter(|&&n| n >= 256).count();
    let opts = BootstrapOptions {
        resamples: 1000,
        confidence: 1.0 - 0.01 / tested as f64,
        seed: 1,
    };
    let rows = variance_growth(ens, &opts)?;
    let missed = rows
        .iter()
        .filter(|r| r.n >= 256 && !(r.ci_lo..=r.ci_hi).contains(&0.5))
        .count();
    Ok(Outcome::new(
        (s.mean - 0.5).abs() <= 0.01 && missed == 0,
        format!(
            "sigma2 {:.5}; {missed} of {tested} simultaneous intervals (n >= 256) miss 0.5",
            s.mean
        ),
    ))
}

fn c3_martingale_residual() -> Result<Outcome> {
    let dbl = ParamSequence::new(1, Family::Doubling, doubling_bounds())?;
    let r_dbl = martingale_psi(&dbl, &Observable::Cos2Pi, &DecompSettings::new(16, N_BINS, 32))?.residual_l1;
    let ks = [4usize, 8, 16];
    let mut res = Vec::new();
    for &k in &ks {
        let mut total = 0.0;
        for seed in seeds(3) {
            let seq = ParamSequence::new(seed, Family::Lsv, lsv_bounds())?;
            total += martingale_psi(&seq, &Observable::Cos2Pi, &DecompSettings::new(k, N_BINS, 32))?.residual_l1;
        }
        res.push(total / 3.0);
    }
    let monotone = res.windows(2).all(|w| w[1] <= 2.0 * w[0]) && res[2] < res[0];
    Ok(Outcome::new(
        r_dbl < 1e-6 && monotone,
        format!(
            "doubling {r_dbl:.1e}; LSV K=4/8/16: {:.2e} / {:.2e} / {:.2e}",
            res[0], res[1], res[2]
        ),
    ))
}

fn c4_equivariance() -> Result<Outcome> {
    let (mut better, mut worst) = (0, 0.0f64);
    for seed in seeds(10) {
        let seq = ParamSequence::new(seed, Family::Lsv, lsv_bounds())?;
        let deep = equivariance_residual(&seq, &GridSettings::new(N_BINS, 32))?;
        let shallow = equivariance_residual(&seq, &GridSettings::new(N_BINS, 4))?;
        better += (deep < shallow) as usize;
        worst = worst.max(deep);
    }
    Ok(Outcome::new(
        better >= 9 && worst <= 1e-2,
        format!("depth 32 beats depth 4 on {better}/10 seeds; worst depth-32 residual {worst:.2e}"),
    ))
}

fn c5_return_tail() -> Result<Outcome> {
    let sampling = TailSampling::LogUniformMixture {
        y_min: 1e-18,
        uniform_share: 0.5,
    };
    let curve = tail_curve(
        Family::Lsv,
        ParamBounds::fixed(0.2),
        &[1],
        &TailOptions::new(10_000, 1_000_000).with_sampling(sampling),
    )?;
    let fit = curve.fit((100.0, 10_000.0))?;
    let rel = (fit.exponent - 5.0).abs() / 5.0;

    let dbl = tail_curve(
        Family::Doubling,
        doubling_bounds(),
        &[1],
        &TailOptions::new(40, 100_000).with_sampling(sampling),
    )?;
    let worst_z = dbl
        .rows
        .iter()
        .filter(|r| r.n <= 30)
        .map(|r| (r.estimate - 0.5f64.powi(r.n as i32)).abs() / r.std_err)
        .fold(0.0, f64::max);
    Ok(Outcome::new(
        rel <= 0.15 && worst_z <= 3.0,
        format!(
            "alpha = 0.2 exponent {:.3} ({:.1}% from 5); doubling max |tail - 2^-n| = {worst_z:.2} se",
            fit.exponent,
            100.0 * rel
        ),
    ))
}

fn c6_aperiodicity() -> Result<Outcome> {
    let mut gcds = Vec::new();
    for seed in seeds(10) {
        let seq = ParamSequence::new(seed, Family::Lsv, lsv_bounds())?;
        gcds.push(gcd_check(&build_partition(&seq, 200, 1e-12)?, 0.01)?);
    }
    Ok(Outcome::new(gcds.iter().all(|&g| g == 1), format!("gcd per seed {gcds:?}")))
}

fn c7_qclt(shared: &Shared) -> Result<Outcome> {
    let d = qclt_test(&shared.doubling, shared.doubling_sigma2)?;
    let l = qclt_test(&shared.lsv, shared.lsv_sigma2)?;
    let rejection = null_calibration(100, N_SAMPLES, 16, 0.01, 7)?;
    Ok(Outcome::new(
        d.statistic < 0.03 && l.statistic < 0.03 && rejection <= 0.05,
        format!(
            "KS doubling {:.4}, LSV {:.4} (sigma2 {:.4}); null rejection rate {rejection:.2}",
            d.statistic, l.statistic, shared.lsv_sigma2
        ),
    ))
}

fn c8_qfclt(shared: &Shared) -> Result<Outcome> {
    let reference = BrownianReference::simulate(100_000, 1024, 1)?;
    let self_test = reference.reflection_self_test().statistic;
    let d = qfclt_paths(&shared.doubling, shared.doubling_sigma2, Functional::Sup, &reference)?.ks.statistic;
    let l = qfclt_paths(&shared.lsv, shared.lsv_sigma2, Functional::Sup, &reference)?.ks.statistic;
    Ok(Outcome::new(
        d < 0.05 && l < 0.05 && self_test < 0.01,
        format!("sup KS doubling {d:.4}, LSV {l:.4}; reflection self-test {self_test:.4}"),
    ))
}

fn c9_coupling() -> Result<Outcome> {
    // hand-unrolled doubling case
    let dbl = ParamSequence::new(0, Family::Doubling, doubling_bounds())?;
    let tr = match_pair(&dbl, 0.6875, 0.875, 1, &MatchLimits::new(64, 1000, 5))?;
    let hand = tr.taus == [0, 2, 3] && tr.ts == [0, 2] && tr.capped;

    // replay on independently iterated orbits
    let mut replay_ok = true;
    for seed in 0..5 {
        let seq = ParamSequence::new(seed, Family::Lsv, lsv_bounds())?;
        for (i, &(x, y)) in [(0.51, 0.93), (0.77, 0.62), (0.999, 0.5)].iter().enumerate() {
            let l0 = 1 + i as u32;
            let tr = match_pair(&seq, x, y, l0, &MatchLimits::new(1_000_000, 2_000, 6))?;
            let end = *tr.taus.last().unwrap() as usize;
            let orbit = |x0: f64| {
                let mut v = vec![x0];
                for k in 0..end {
                    v.push(seq.fiber(k as i64).image(v[k]));
                }
                v
            };
            let (ox, oy) = (orbit(x), orbit(y));
            let mut x_turn = true;
            for w in tr.taus.windows(2) {
                let (a, b) = (w[0] as usize, w[1] as usize);
                let path = if x_turn { &ox } else { &oy };
                let visits = (a + 1..=b).filter(|&k| in_base(path[k])).count();
                let both = in_base(ox[b]) && in_base(oy[b]);
                replay_ok &= visits == l0 as usize && both == tr.ts.contains(&(b as u64));
                x_turn = both || !x_turn;
            }
        }
    }

    let tail = coupling_tail(
        Family::Doubling,
        doubling_bounds(),
        &[1],
        &CouplingTailOptions::new(1, 40, 10_000),
    )?;
    let rate = tail.fit_exponential((1.0, 20.0))?.rate;
    Ok(Outcome::new(
        hand && replay_ok && rate > 0.0,
        format!("hand-unrolled {hand}, replay {replay_ok}, doubling log-linear rate {rate:.3}"),
    ))
}

fn c10_rate() -> Result<Outcome> {
    let r = asip_rate(RateParams::Polynomial {
        p: f64::INFINITY,
        d: 10.0,
    })?;
    let exact = r.epsilon_1 == Some(0.25) && r.epsilon_d == Some(0.1640625);
    let rejected = match asip_rate(RateParams::Polynomial { p: 2.0, d: 9.0 }) {
        Err(e) => e.to_string().contains("10"),
        Ok(_) => false,
    };
    Ok(Outcome::new(
        exact && rejected,
        format!(
            "eps_1 {:?}, eps_D {:?}; (p=2, D=9) rejected: {rejected}",
            r.epsilon_1, r.epsilon_d
        ),
    ))
}

fn c11_coboundary() -> Result<Outcome> {
    let settings = DecompSettings::new(16, N_BINS, 32);
    let cob = Observable::from_name("coboundary_cos2pi", 0.5)?;
    let ens = decompose_ensemble(Family::Lsv, lsv_bounds(), &seeds(4), &cob, &settings, 10_000, 1)?;
    let v = coboundary_test(&ens);
    let cos = decompose_ensemble(Family::Lsv, lsv_bounds(), &seeds(4), &Observable::Cos2Pi, &settings, 0, 1)?;
    let v_cos = coboundary_test(&cos);

    let walk = ensemble(Family::Lsv, lsv_bounds(), &cob, 1024, 4000)?;
    let rows = variance_growth(&walk, &BootstrapOptions { resamples: 10, ..Default::default() })?;
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.ratio)).collect();
    let slope = fit_power_law(&pts, (16.0, 1024.0))?.exponent;

    let residual = v.pointwise_residual.unwrap_or(f64::INFINITY);
    Ok(Outcome::new(
        v.verdict == Degeneracy::Degenerate
            && residual < 1e-3
            && (slope - 1.0).abs() <= 0.2
            && v_cos.verdict == Degeneracy::Nondegenerate,
        format!(
            "coboundary {:?} (sigma2 {:.1e}, pointwise residual {residual:.1e}, var/n slope -{slope:.3}); cos {:?} (sigma2 {:.4})",
            v.verdict, v.sigma2, v_cos.verdict, v_cos.sigma2
        ),
    ))
}

fn c12_reproducibility() -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let cfg = ExperimentConfig::from_text(
        "family = lsv\nn_seeds = 2\nn_bins = 512\npullback_depth = 16\nk_trunc = 8\nn_steps = 256\n\
         n_samples = 500\nn_max = 200\ndecay_steps = 16\npair_samples = 500\norbit_samples = 200\n\
         bootstrap_resamples = 50\nbrownian_paths = 2000\nbrownian_steps = 64\ndepth_cap = 60\n",
    )?;
    let mut differing = Vec::new();
    let mut compared = 0;
    for sub in quenched_limits::cli::SUBCOMMANDS {
        let a = dir.path().join(format!("{sub}-a"));
        let b = dir.path().join(format!("{sub}-b"));
        run(sub, &cfg, &a)?;
        run(sub, &cfg, &b)?;
        for entry in std::fs::read_dir(&a)? {
            let name = entry?.file_name();
            if name == "manifest.json" {
                // carries the wall time
                continue;
            }
            compared += 1;
            if std::fs::read(a.join(&name))? != std::fs::read(b.join(&name))? {
                differing.push(format!("{sub}/{}", name.to_string_lossy()));
            }
        }
    }
    Ok(Outcome::new(
        differing.is_empty() && compared > 0,
        format!("{compared} output files over 10 subcommands, differing: {differing:?}"),
    ))
}

fn main() {
    // honour `cargo test -- --list` and filters without running the suite
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let t0 = Instant::now();
    let shared = (|| -> Result<Shared> {
        let cos = Observable::Cos2Pi;
        let doubling_sigma2 = sigma_squared(
            Family::Doubling,
            doubling_bounds(),
            &seeds(4),
            &cos,
            &DecompSettings::new(16, N_BINS, 32),
        )?
        .mean;
        let lsv_sigma2 = sigma_squared(
            Family::Lsv,
            lsv_bounds(),
            &seeds(16),
            &cos,
            &DecompSettings::new(16, N_BINS, 32),
        )?
        .mean;
        Ok(Shared {
            doubling: ensemble(Family::Doubling, doubling_bounds(), &cos, N_STEPS, N_SAMPLES)?,
            doubling_sigma2,
            lsv: ensemble(Family::Lsv, lsv_bounds(), &cos, N_STEPS, N_SAMPLES)?,
            lsv_sigma2,
        })
    })()
    .expect("shared ensembles");
    println!("shared ensembles built in {:.1} s", t0.elapsed().as_secs_f64());

    type Criterion<'a> = (&'a str, Box<dyn Fn() -> Result<Outcome> + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("transfer-operator soundness", Box::new(c1_transfer)),
        ("doubling baseline variance", Box::new(|| c2_doubling_variance(&shared))),
        ("martingale residual", Box::new(c3_martingale_residual)),
        ("equivariance", Box::new(c4_equivariance)),
        ("return-time tail", Box::new(c5_return_tail)),
        ("aperiodicity", Box::new(c6_aperiodicity)),
        ("quenched CLT", Box::new(|| c7_qclt(&shared))),
        ("quenched functional CLT", Box::new(|| c8_qfclt(&shared))),
        ("coupling scheme", Box::new(c9_coupling)),
        ("rate calculator", Box::new(c10_rate)),
        ("coboundary dichotomy", Box::new(c11_coboundary)),
        ("reproducibility", Box::new(c12_reproducibility)),
    ];

    let mut records = Vec::new();
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        println!(
            "criterion {:>2} {} {name}: {} [{secs:.1} s]",
            i + 1,
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.summary
        );
        failures += !outcome.pass as usize;
        records.push(json!({
            "criterion": i + 1,
            "name": name,
            "pass": outcome.pass,
            "summary": outcome.summary,
            "seconds": secs,
        }));
    }
    let verdict = json!({ "pass": failures == 0, "criteria": records });
    let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_verdict.json");
    std::fs::write(&path, serde_json::to_string_pretty(&verdict).unwrap() + "\n").expect("write verdict");
    println!("verdict written to {}", path.display());
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
