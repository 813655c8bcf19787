//! Return partition of the base, aperiodicity and distortion.

use quenched_limits::tower::{build_partition, distortion_check, gcd_check};
use quenched_limits::{Family, ParamBounds, ParamSequence};

fn main() -> quenched_limits::Result<()> {
    let seq = ParamSequence::new(5, Family::Lsv, ParamBounds::new(0.05, 0.15))?;
    let p = build_partition(&seq, 200, 1e-12)?;
    println!("{} cells, uncovered mass {:.3e}", p.cells.len(), p.residual_mass);
    for c in p.cells.iter().take(6) {
        println!("R = {:>2}  [{:.6}, {:.6})  share {:.4}", c.return_time, c.lo, c.hi, c.fraction());
    }
    println!("gcd of return times above 1% mass: {}", gcd_check(&p, 0.01)?);
    let d = distortion_check(&seq, &p, 2000, 1, 0.5)?;
    println!("distortion constant {:.3}, min expansion {:.3}", d.empirical_cf, d.min_expansion);
    Ok(())
}
