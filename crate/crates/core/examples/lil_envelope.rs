//! Iterated-logarithm envelope of Birkhoff sums under both normalizations.

use quenched_limits::stats::{qlil_envelope, BirkhoffEnsemble};

fn main() -> quenched_limits::Result<()> {
    // Gaussian increments stand in for a process with sigma^2 = 1
    let ens = BirkhoffEnsemble::gaussian(4096, 2000, 1.0, 3)?;
    for c in [1.0, 2.0] {
        let e = qlil_envelope(&ens, 1.0, c)?;
        println!("c = {c}: median max {:.3} (iqr {:.3}), median min {:.3}", e.median_max, e.iqr_max, e.median_min);
    }
    Ok(())
}
