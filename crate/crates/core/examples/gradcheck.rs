//! Check file-defined gradients against central differences.

use scalar_ad::cli::{gradcheck, GradCheckOptions};

fn main() {
    let src = include_str!("../data/log_pow.ir");
    let report = gradcheck(src, &GradCheckOptions::default()).expect("checks");
    print!("{}", report.report().render(false));

    let sqrt = include_str!("../data/clamped_sqrt.ir");
    let opts = GradCheckOptions {
        func: Some("root".into()),
        at: vec![vec![1e-12]],
        custom_jvp: true,
        ..GradCheckOptions::default()
    };
    print!("{}", gradcheck(sqrt, &opts).expect("checks").report().render(false));
}
