//! Static size with and without fn boundaries, and gradient/primal op counts.

use scalar_ad::cli::{bench_opcount, bench_scaling};

fn main() {
    let s = bench_scaling(50).expect("builds");
    println!("{s:#?}");
    for row in bench_opcount(&[50, 200], 3, 0).expect("runs") {
        println!("n = {:3}: primal {:5} ops, gradient {:5} ops, ratio {:.3}", row.n, row.primal_ops, row.gradient_ops, row.ratio);
    }
}
