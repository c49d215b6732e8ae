//! Value, gradient and Hessian of `x^y` at (2, 3) with an opaque `pow`.

use scalar_ad::cli::{quadratic_at, quadratic_hessian_generic};

fn main() {
    let (z, g, h) = quadratic_at(2.0, 3.0).expect("runs");
    println!("z = {z}");
    println!("g = {g:?}");
    println!("h = {h:?}");
    let again = quadratic_hessian_generic(2.0, 3.0).expect("runs");
    println!("h via the generic helper = {again:?}");
}
