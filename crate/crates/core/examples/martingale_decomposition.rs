//! phi o f = psi + g o f - g and the variance it gives.

use quenched_limits::decomp::{coboundary_test, decompose_ensemble, martingale_psi, DecompSettings};
use quenched_limits::{Family, Observable, ParamBounds, ParamSequence};

fn main() -> quenched_limits::Result<()> {
    let bounds = ParamBounds::new(0.05, 0.15);
    for k in [4, 8, 16] {
        let settings = DecompSettings::new(k, 1 << 12, 32);
        let d = martingale_psi(&ParamSequence::new(1, Family::Lsv, bounds)?, &Observable::Cos2Pi, &settings)?;
        println!("K = {k:>2}: |P psi|_1 = {:.3e}, int psi^2 = {:.5}", d.residual_l1, d.sigma2_fiber);
    }
    let settings = DecompSettings::new(16, 1 << 11, 32);
    for name in ["cos2pi", "coboundary_cos2pi"] {
        let obs = Observable::from_name(name, 0.5)?;
        let ens = decompose_ensemble(Family::Lsv, bounds, &[1, 2, 3, 4], &obs, &settings, 2000, 1)?;
        let v = coboundary_test(&ens);
        println!("{name}: sigma2 = {:.4e} +- {:.1e} -> {:?}", v.sigma2, v.std_err, v.verdict);
    }
    Ok(())
}
