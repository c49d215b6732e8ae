//! Fit the initial velocity of a damped spring, unrolled for 100 steps, so it ends at a target.

use scalar_ad::cli::{spring, spring_trace, DemoConfig, SpringParams};

fn main() {
    let report = spring(&DemoConfig::spring(), &SpringParams::default()).expect("runs");
    print!("{}", report.render(false));
    for steps in [50, 100, 200] {
        println!("lets at T = {steps}: {}", spring_trace(steps).unwrap());
    }
}
