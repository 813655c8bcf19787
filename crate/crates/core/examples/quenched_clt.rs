//! Quenched CLT along one driving sequence of the doubling map.

use quenched_limits::stats::{birkhoff_ensemble, qclt_test, EnsembleSettings, SamplingMode};
use quenched_limits::transfer::GridSettings;
use quenched_limits::{Family, Observable, ParamBounds, ParamSequence};

fn main() -> quenched_limits::Result<()> {
    let seq = ParamSequence::new(1, Family::Doubling, ParamBounds::fixed(0.0))?;
    let settings = EnsembleSettings {
        n_steps: 1024,
        n_samples: 5000,
        sampling: SamplingMode::Equivariant,
        grid: GridSettings::new(1 << 10, 8),
        sample_seed: 1,
    };
    let ens = birkhoff_ensemble(&seq, &Observable::Cos2Pi, &settings, Some(1))?;
    let ks = qclt_test(&ens, 0.5)?;
    println!("KS = {:.4}, p = {:.3}", ks.statistic, ks.p_value);
    Ok(())
}
