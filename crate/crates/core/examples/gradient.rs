//! Reverse-mode gradient of a scalar function via `vjp(..).grad(1)`.

use scalar_ad::autodiff::vjp;
use scalar_ad::builder::{BuildError, StdMath, Tracer};
use scalar_ad::ir::Ty;
use serde_json::json;

fn main() -> Result<(), BuildError> {
    let mut t = Tracer::new();
    let m = StdMath::define(&mut t)?;
    let v3 = Ty::vec(3, Ty::Real);
    // f(x) = sum_i exp(x_i) * sin(x_i)
    let f = t.define_fn("f", &[v3.clone()], Ty::Real, |t, ps| {
        let x = ps[0].clone();
        t.sum(3, |t, i| {
            let e = t.index(&x, &i)?;
            let a = t.call(&m.exp, &[(&e).into()])?;
            let b = t.call(&m.sin, &[(&e).into()])?;
            t.mul(&a, &b)
        })
    })?;
    let fc = f.clone();
    let grad = t.define_fn("grad_f", &[v3.clone()], v3, |t, ps| {
        let v = vjp(t, &fc, &ps[0]).map_err(BuildError::from)?;
        v.grad(t, 1.0).map_err(BuildError::from)
    })?;
    let g = t.compile(&grad).expect("compiles");
    let x = [0.1, 0.5, -1.0];
    println!("grad f({x:?}) = {}", g.invoke(&[json!(x)]).unwrap());
    let want: Vec<f64> = x.iter().map(|v: &f64| v.exp() * (v.sin() + v.cos())).collect();
    println!("analytic        = {want:?}");
    Ok(())
}
