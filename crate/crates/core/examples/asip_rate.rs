//! Almost-sure invariance principle rate from the tail parameters.

use quenched_limits::stats::{asip_rate, RateParams};

fn main() {
    for (p, d) in [(f64::INFINITY, 10.0), (f64::INFINITY, 20.0), (3.0, 12.0), (2.0, 9.0)] {
        match asip_rate(RateParams::Polynomial { p, d }) {
            Ok(r) => println!("p = {p}, D = {d}: eps_1 = {:?}, eps_D = {:?}", r.epsilon_1, r.epsilon_d),
            Err(e) => println!("p = {p}, D = {d}: {e}"),
        }
    }
    let r = asip_rate(RateParams::Exponential { a: 1.0, b: 1.0 }).unwrap();
    println!("exponential tails: eps_0 in {:?}, arbitrarily small = {}", r.epsilon_0_interval, r.arbitrarily_small);
}
