//! Property tests for the structural invariants.

use proptest::prelude::*;

use quenched_limits::decomp::{DecompSettings, MartingaleChain};
use quenched_limits::report::fmt_float;
use quenched_limits::stats::rate::{epsilon_1, epsilon_d};
use quenched_limits::stats::{asip_rate, ks_two_sample, RateParams};
use quenched_limits::tower::gcd_of_times;
use quenched_limits::transfer::{pushforward, ulam_matrix, GridDensity};
use quenched_limits::{Family, FiberMap, FiberSequence, Observable, ParamBounds, ParamSequence};

fn lsv(seed: u64) -> ParamSequence {
    ParamSequence::new(seed, Family::Lsv, ParamBounds::new(0.05, 0.15)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_is_a_group_action(seed in any::<u64>(), a in -1000i64..1000, b in -1000i64..1000, i in -1000i64..1000) {
        let seq = lsv(seed);
        prop_assert_eq!(seq.shift(a).shift(b).param(i), seq.param(i + a + b));
        prop_assert_eq!(seq.shift(a).shift(-a), seq);
    }

    #[test]
    fn derivative_matches_finite_difference(alpha in 0.01f64..0.99, x in 0.01f64..0.99) {
        prop_assume!((x - 0.5).abs() > 1e-3);
        let f = FiberMap::lsv(alpha).unwrap();
        let h = 1e-6;
        let fd = (f.image(x + h) - f.image(x - h)) / (2.0 * h);
        prop_assert!((fd - f.derivative(x)).abs() < 1e-5 * f.derivative(x).max(1.0), "{} vs {}", fd, f.derivative(x));
        prop_assert!(f.derivative(x) >= 1.0);
    }

    #[test]
    fn cocycle_property(seed in any::<u64>(), x in 0.0f64..1.0, m in 0i64..20, n in 0i64..20) {
        let seq = lsv(seed);
        let run = |s: &ParamSequence, x: f64, k: i64| (0..k).fold(x, |y, j| s.fiber(j).image(y));
        let direct = run(&seq, x, m + n);
        let split = run(&seq.shift(m), run(&seq, x, m), n);
        prop_assert_eq!(direct.to_bits(), split.to_bits());
    }

    #[test]
    fn ulam_rows_and_mass(alpha in 0.0f64..0.9, log_bins in 4u32..11, sub in 1usize..40, steps in 1usize..6) {
        let n = 1usize << log_bins;
        let map = if alpha == 0.0 { FiberMap::doubling() } else { FiberMap::lsv(alpha).unwrap() };
        let m = ulam_matrix(&map, n, sub).unwrap();
        for i in 0..n {
            prop_assert!((m.row_sum(i) - 1.0).abs() <= 1e-12);
        }
        let mut rho = GridDensity::uniform(n);
        for _ in 0..steps {
            rho = pushforward(&m, &rho).unwrap();
            prop_assert!((rho.total_mass() - 1.0).abs() <= 1e-12);
            prop_assert!(rho.masses().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn epsilon_1_decreases_in_d(p in prop_oneof![Just(f64::INFINITY), 1.1f64..50.0], d in 0.0f64..100.0, step in 0.01f64..10.0) {
        let threshold = if p.is_infinite() { 6.0 } else { 2.0 + 4.0 * p / (p - 1.0) };
        let d = threshold + 1e-6 + d;
        prop_assert!(epsilon_1(p, d + step) < epsilon_1(p, d));
        let r = asip_rate(RateParams::Polynomial { p, d }).unwrap();
        prop_assert!(r.epsilon_0_interval.0 <= r.epsilon_0_interval.1);
    }

    #[test]
    fn inadmissible_rates_are_rejected(p in 1.1f64..50.0, frac in 0.0f64..1.0) {
        let d = frac * (2.0 + 4.0 * p / (p - 1.0));
        let rejected = asip_rate(RateParams::Polynomial { p, d }).is_err();
        prop_assert!(rejected);
    }

    #[test]
    fn gcd_divides_heavy_times(cells in prop::collection::vec((1u64..200, 0.0f64..0.2), 1..30), floor in 0.0f64..0.1) {
        match gcd_of_times(cells.clone(), floor) {
            Ok(g) => {
                for &(t, m) in &cells {
                    if m > floor {
                        prop_assert_eq!(t % g, 0);
                    }
                }
            }
            Err(_) => prop_assert!(cells.iter().all(|&(_, m)| m <= floor)),
        }
    }

    #[test]
    fn ks_two_sample_symmetric_and_bounded(a in prop::collection::vec(-5.0f64..5.0, 1..50), b in prop::collection::vec(-5.0f64..5.0, 1..50)) {
        let ab = ks_two_sample(&a, &b).statistic;
        prop_assert_eq!(ab, ks_two_sample(&b, &a).statistic);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn csv_floats_round_trip(bits in any::<u64>()) {
        let x = f64::from_bits(bits);
        prop_assume!(x.is_finite());
        prop_assert_eq!(fmt_float(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }
}

#[test]
fn epsilon_d_vanishes_for_large_d() {
    let values: Vec<f64> = [10.0, 100.0, 1e3, 1e4, 1e6]
        .iter()
        .map(|&d| epsilon_d(epsilon_1(f64::INFINITY, d)))
        .collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]));
    assert!(values[4] < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// Reverse martingale differences along a fiber chain are orthogonal:
    /// `int psi_0 (psi_1 o f_0) dmu_0 = int (P_0 psi_0) psi_1 dmu_1`, which
    /// vanishes up to the grid floor of `P psi`.
    #[test]
    fn martingale_differences_orthogonal(seed in 0u64..1000) {
        let seq = lsv(seed);
        let chain = MartingaleChain::build(&seq, &Observable::Cos2Pi, 2, &DecompSettings::new(12, 1 << 10, 16)).unwrap();
        let ops = chain.operators();
        let lifted = ops.compose(0, chain.psi(1)).unwrap();
        let cross: f64 = chain
            .psi(0)
            .values
            .iter()
            .zip(&lifted.values)
            .zip(ops.density(0).masses())
            .map(|((a, b), m)| a * b * m)
            .sum();
        let floor = chain.residual(0).unwrap() * chain.psi(1).sup_abs();
        prop_assert!(cross.abs() <= floor + 1e-12, "cross {} floor {}", cross, floor);
        prop_assert!(cross.abs() < 1e-2 * chain.psi_second_moment(0));
    }

    /// Variance of the first two martingale terms is the sum of their variances
    /// (orthogonality, read through the second moment of the sum).
    #[test]
    fn martingale_variance_additive(seed in 0u64..1000) {
        let seq = lsv(seed);
        let chain = MartingaleChain::build(&seq, &Observable::Cos2Pi, 2, &DecompSettings::new(12, 1 << 10, 16)).unwrap();
        let ops = chain.operators();
        let lifted = ops.compose(0, chain.psi(1)).unwrap();
        let total: f64 = chain
            .psi(0)
            .values
            .iter()
            .zip(&lifted.values)
            .zip(ops.density(0).masses())
            .map(|((a, b), m)| (a + b).powi(2) * m)
            .sum();
        let parts = chain.psi_second_moment(0) + chain.psi_second_moment(1);
        prop_assert!((total - parts).abs() < 0.02 * parts, "{} vs {}", total, parts);
    }
}
