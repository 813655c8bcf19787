//! Fiber maps and a short random orbit.

use quenched_limits::maps::orbit;
use quenched_limits::{Family, FiberMap, ParamBounds, ParamSequence};

fn main() -> quenched_limits::Result<()> {
    let f = FiberMap::lsv(0.1)?;
    for x in [0.1, 0.25, 0.5, 0.75] {
        println!("f({x}) = {:.6}  f'({x}) = {:.6}", f.image(x), f.derivative(x));
    }
    let seq = ParamSequence::new(3, Family::Lsv, ParamBounds::new(0.05, 0.15))?;
    let xs = orbit(&seq, 0.3, 12)?;
    println!("orbit of 0.3: {:?}", xs.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>());
    Ok(())
}
