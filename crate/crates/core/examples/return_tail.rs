//! Tail of the first return time to the base for a fixed-alpha LSV map.
//! `P(R > n)` decays like `n^{-1/alpha}`.

use quenched_limits::tower::{tail_curve, TailOptions, TailSampling};
use quenched_limits::{Family, ParamBounds};

fn main() -> quenched_limits::Result<()> {
    let alpha = 0.2;
    let opts = TailOptions::new(10_000, 200_000).with_sampling(TailSampling::LogUniformMixture {
        y_min: 1e-18,
        uniform_share: 0.5,
    });
    let curve = tail_curve(Family::Lsv, ParamBounds::fixed(alpha), &[1], &opts)?;
    for r in curve.rows.iter().filter(|r| [1, 10, 100, 1000, 10_000].contains(&r.n)) {
        println!("P(R > {:>5}) = {:.4e} +- {:.1e}", r.n, r.estimate, r.std_err);
    }
    let fit = curve.fit((100.0, 10_000.0))?;
    println!("fitted exponent {:.3} (1/alpha = {})", fit.exponent, 1.0 / alpha);
    Ok(())
}
