//! Alternating matching times of two orbits and their tail.

use quenched_limits::coupling::{coupling_tail, match_pair, CouplingTailOptions, MatchLimits};
use quenched_limits::{Family, ParamBounds, ParamSequence};

fn main() -> quenched_limits::Result<()> {
    let seq = ParamSequence::new(1, Family::Lsv, ParamBounds::new(0.05, 0.15))?;
    let trace = match_pair(&seq, 0.61, 0.87, 1, &MatchLimits::new(1_000_000, 10_000, 6))?;
    println!("tau = {:?}", trace.taus);
    println!("T   = {:?}", trace.ts);

    let tail = coupling_tail(
        Family::Doubling,
        ParamBounds::fixed(0.0),
        &[1],
        &CouplingTailOptions::new(1, 40, 10_000),
    )?;
    for r in tail.rows.iter().step_by(5) {
        println!("P(T > {:>2}) = {:.4}", r.n, r.tail);
    }
    println!("log-linear rate {:.3}", tail.fit_exponential((1.0, 20.0))?.rate);
    Ok(())
}
