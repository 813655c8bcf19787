//! L1 decay of the transfer operator applied to a centered observable.

use quenched_limits::transfer::{decay_curve, GridSettings};
use quenched_limits::{Family, Observable, ParamBounds};

fn main() -> quenched_limits::Result<()> {
    let curve = decay_curve(
        Family::Lsv,
        ParamBounds::new(0.05, 0.15),
        &[1, 2, 3],
        &Observable::Cos2Pi,
        32,
        &GridSettings::new(1 << 12, 32),
    )?;
    for r in curve.rows.iter().step_by(4) {
        println!("n = {:>2}: {:.3e}", r.n, r.estimate);
    }
    Ok(())
}
