//! A two-sided driving sequence and its shift.

use quenched_limits::{Family, FiberSequence, ParamBounds, ParamSequence};

fn main() -> quenched_limits::Result<()> {
    let seq = ParamSequence::new(7, Family::Lsv, ParamBounds::new(0.05, 0.15))?;
    for i in -3..=3 {
        println!("alpha[{i:+}] = {:.6}", seq.param(i));
    }
    // the shift moves the origin without drawing anything new
    let shifted = seq.shift(2);
    assert_eq!(shifted.param(0), seq.param(2));
    assert_eq!(shifted.shift(-2).param(-1), seq.param(-1));
    println!("descriptor: {}", serde_json::to_string(&seq.descriptor()).unwrap());
    Ok(())
}
