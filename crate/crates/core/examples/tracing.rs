//! Trace host closures into typed IR, print it, and run it.

use scalar_ad::builder::{BuildError, RecordType, Tracer};
use scalar_ad::ir::{print_ir, Ty};
use serde_json::json;

fn main() -> Result<(), BuildError> {
    let mut t = Tracer::new();
    let point = RecordType::new(&[("w", Ty::vec(3, Ty::Real)), ("bias", Ty::Real)]);
    let p = point.clone();
    // `sq` is a host helper, expanded at every use
    let sq = |t: &mut Tracer, x: &scalar_ad::builder::Handle| t.mul(x, x);
    let norm = t.define_fn("norm", &[point.ty()], Ty::Real, |t, ps| {
        let w = t.field(&ps[0], &p, "w")?;
        let b = t.field(&ps[0], &p, "bias")?;
        let s = t.sum(3, |t, i| {
            let e = t.index(&w, &i)?;
            sq(t, &e)
        })?;
        t.add(&s, &b)
    })?;
    println!("{}", print_ir(t.registry()));

    let run = t.compile(&norm).expect("compiles");
    let ret = run.ret_shape().clone();
    let run = run.with_shapes(vec![point.shape().unwrap()], ret).expect("shapes match");
    let y = run.invoke(&[json!({"w": [1.0, 2.0, 3.0], "bias": 0.5})]).expect("runs");
    println!("norm = {y}");
    Ok(())
}
