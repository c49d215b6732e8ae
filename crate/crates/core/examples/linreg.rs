//! Least-squares regression on Anscombe's first dataset by gradient descent.

use scalar_ad::cli::{linreg, DemoConfig};

fn main() {
    let report = linreg(&DemoConfig::linreg()).expect("runs");
    print!("{}", report.render(false));
}
