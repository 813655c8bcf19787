//! Equivariant density by pulling back Lebesgue measure, and its defect.

use quenched_limits::transfer::{equivariance_residual, equivariant_density, GridSettings};
use quenched_limits::{Family, ParamBounds, ParamSequence};

fn main() -> quenched_limits::Result<()> {
    let seq = ParamSequence::new(2, Family::Lsv, ParamBounds::new(0.05, 0.15))?;
    let grid = GridSettings::new(1 << 12, 32);
    let h = equivariant_density(&seq, &grid)?;
    for x in [0.001, 0.01, 0.1, 0.5, 0.9] {
        let i = quenched_limits::transfer::bin_of(x, grid.n_bins);
        println!("h({x}) = {:.4}", h.density(i));
    }
    for depth in [4, 8, 32] {
        let r = equivariance_residual(&seq, &GridSettings::new(1 << 12, depth))?;
        println!("depth {depth:>2}: |push(h) - h_shift|_1 = {r:.3e}");
    }
    Ok(())
}
