//! A square root whose derivative is clamped, so the gradient at 0 stays finite.

use scalar_ad::autodiff::vjp;
use scalar_ad::builder::{clamped_sqrt, BuildError, Tracer};
use scalar_ad::exec::Value;
use scalar_ad::ir::Ty;

fn main() -> Result<(), BuildError> {
    let mut t = Tracer::new();
    let sqrt = clamped_sqrt(&mut t)?;
    let s = sqrt.clone();
    let d = t.define_fn("d_sqrt", &[Ty::Real], Ty::Real, |t, ps| {
        let v = vjp(t, &s, &ps[0]).map_err(BuildError::from)?;
        v.grad(t, 1.0).map_err(BuildError::from)
    })?;
    let d = t.compile(&d).expect("compiles");
    for x in [0.0, 1e-12, 1e-6, 1.0, 4.0] {
        let g = d.invoke_values(vec![Value::Real(x)]).unwrap();
        println!("d/dx sqrt({x:e}) = {:e}  (unclamped {:e})", g.as_real().unwrap(), 0.5 / x.sqrt());
    }
    Ok(())
}
