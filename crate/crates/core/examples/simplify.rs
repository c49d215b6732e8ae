//! Forward/backward split of `f(u) = -sin(u)`, raw and simplified.

use scalar_ad::cli::{dump, DumpOptions};

fn main() {
    let src = include_str!("../data/sin_example.ir");
    for opt in [false, true] {
        let opts = DumpOptions {
            func: Some("f".into()),
            opt,
            jvp: false,
        };
        let rep = dump(src, &opts).expect("transforms");
        println!("-- simplified: {opt}");
        println!("{}", rep.get("ir").and_then(|v| v.as_str()).unwrap_or_default());
    }
}
