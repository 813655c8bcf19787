//! Path functionals against a Brownian reference.

use quenched_limits::stats::{qfclt_paths, BirkhoffEnsemble, BrownianReference, Functional};

fn main() -> quenched_limits::Result<()> {
    let reference = BrownianReference::simulate(50_000, 256, 1)?;
    println!("reflection self-test KS = {:.4}", reference.reflection_self_test().statistic);
    let ens = BirkhoffEnsemble::gaussian(1024, 5000, 1.0, 2)?;
    for f in [Functional::Sup, Functional::SupAbs, Functional::Terminal] {
        let t = qfclt_paths(&ens, 1.0, f, &reference)?;
        println!("{:>8}: KS = {:.4}", f.name(), t.ks.statistic);
    }
    Ok(())
}
