//! Hand-built programs exercising loops, generics, structured values and
//! accumulators, checked by the inner-product identity and finite differences.

mod common;

use common::{fd_gradient, rel_err};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scalar_ad::autodiff::{lift_jvp, vjp, AdError};
use scalar_ad::builder::{BuildError, FuncHandle, Tracer};
use scalar_ad::exec::compile;
use scalar_ad::ir::{Kind, Ty};
use serde_json::{json, Value};

fn leaves(v: &Value, out: &mut Vec<f64>) {
    match v {
        Value::Number(n) => out.push(n.as_f64().unwrap()),
        Value::Array(xs) => xs.iter().for_each(|x| leaves(x, out)),
        _ => {}
    }
}

fn rebuild(template: &Value, it: &mut impl Iterator<Item = f64>) -> Value {
    match template {
        Value::Number(_) => json!(it.next().unwrap()),
        Value::Array(xs) => Value::Array(xs.iter().map(|x| rebuild(x, it)).collect()),
        other => other.clone(),
    }
}

fn zip_duals(x: &Value, dx: &Value) -> Value {
    match (x, dx) {
        (Value::Number(_), Value::Number(_)) => json!([x, dx]),
        (Value::Array(a), Value::Array(b)) => Value::Array(a.iter().zip(b).map(|(p, q)| zip_duals(p, q)).collect()),
        _ => x.clone(),
    }
}

fn tangents(y: &Value, ty: &Ty, out: &mut Vec<f64>) {
    match ty {
        Ty::Real => out.push(y[1].as_f64().unwrap()),
        Ty::Pair(a, b) => {
            tangents(&y[0], a, out);
            tangents(&y[1], b, out);
        }
        Ty::Arr(_, e) => y.as_array().unwrap().iter().for_each(|v| tangents(v, e, out)),
        _ => {}
    }
}

fn random_like(rng: &mut ChaCha8Rng, template: &Value) -> Value {
    let mut n = Vec::new();
    leaves(template, &mut n);
    let fresh: Vec<f64> = n.iter().map(|_| rng.gen_range(-1.5..1.5)).collect();
    rebuild(template, &mut fresh.into_iter())
}

/// Check `<dy, J dx> = <J^T dy, dx>` for `f` at random points shaped like `x0`, with output shaped like `y0`.
fn check_transpose(mut t: Tracer, f: &FuncHandle, x0: Value, y0: Value) {
    let pty = f.params[0].clone();
    let rty = f.ret.clone();
    let jvp = lift_jvp(&mut t, f.id).unwrap();
    let fc = f.clone();
    let pb = t
        .define_fn("pullback", &[pty.clone(), rty.clone()], pty, |t, ps| {
            let v = vjp(t, &fc, &ps[0]).map_err(BuildError::from)?;
            v.grad(t, &ps[1]).map_err(BuildError::from)
        })
        .unwrap();
    let cj = compile(t.registry(), jvp).unwrap();
    let cp = compile(t.registry(), pb.id).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let x = random_like(&mut rng, &x0);
        let dx = random_like(&mut rng, &x0);
        let dy = random_like(&mut rng, &y0);
        let out = cj.invoke(&[zip_duals(&x, &dx)]).unwrap();
        let mut ydot = Vec::new();
        tangents(&out, &rty, &mut ydot);
        let mut dys = Vec::new();
        leaves(&dy, &mut dys);
        let lhs: f64 = ydot.iter().zip(&dys).map(|(a, b)| a * b).sum();
        let bar = cp.invoke(&[x.clone(), dy.clone()]).unwrap();
        let (mut bars, mut dxs) = (Vec::new(), Vec::new());
        leaves(&bar, &mut bars);
        leaves(&dx, &mut dxs);
        let rhs: f64 = bars.iter().zip(&dxs).map(|(a, b)| a * b).sum();
        assert!(rel_err(lhs, rhs) <= 1e-9, "{lhs} vs {rhs} at {x}");
    }
}

fn gradient_fd(mut t: Tracer, f: &FuncHandle, n: usize) {
    let arr = Ty::vec(n, Ty::Real);
    let fc = f.clone();
    let g = t
        .define_fn("grad", &[arr.clone()], arr, |t, ps| {
            let v = vjp(t, &fc, &ps[0]).map_err(BuildError::from)?;
            v.grad(t, 1.0).map_err(BuildError::from)
        })
        .unwrap();
    let cf = compile(t.registry(), f.id).unwrap();
    let cg = compile(t.registry(), g.id).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let mut grad = Vec::new();
        leaves(&cg.invoke(&[json!(x)]).unwrap(), &mut grad);
        let fd = fd_gradient(|p| cf.invoke(&[json!(p)]).unwrap().as_f64().unwrap(), &x);
        for (a, b) in grad.iter().zip(&fd) {
            assert!(rel_err(*a, *b) <= 1e-5, "{grad:?} vs {fd:?}");
        }
    }
}

#[test]
fn loop_producing_an_array_then_reduced() {
    let mut t = Tracer::new();
    let f = t
        .define_fn("f", &[Ty::vec(3, Ty::Real)], Ty::Real, |t, ps| {
            let x = ps[0].clone();
            let sq = t.array(3, |t, i| {
                let e = t.index(&x, &i)?;
                t.mul(&e, &e)
            })?;
            t.sum(3, |t, i| {
                let a = t.index(&sq, &i)?;
                let b = t.index(&x, &i)?;
                t.mul(&a, &b)
            })
        })
        .unwrap();
    gradient_fd(t, &f, 3);
}

#[test]
fn nested_loops_over_a_matrix() {
    let mut t = Tracer::new();
    let m = Ty::vec(2, Ty::vec(3, Ty::Real));
    let f = t
        .define_fn("f", &[m.clone()], Ty::vec(2, Ty::Real), |t, ps| {
            let a = ps[0].clone();
            t.array(2, |t, i| {
                let row = t.index(&a, &i)?;
                t.sum(3, |t, j| {
                    let e = t.index(&row, &j)?;
                    let s = t.mul(&e, &e)?;
                    t.mul(&s, &e)
                })
            })
        })
        .unwrap();
    check_transpose(t, &f, json!([[0, 0, 0], [0, 0, 0]]), json!([0, 0]));
}

#[test]
fn generic_helper_called_at_two_sizes() {
    let mut t = Tracer::new();
    let n = Ty::Var("n".into());
    let dot = t
        .define_generic_fn(
            "dot",
            &[("n", Kind::Index)],
            &[Ty::arr(n.clone(), Ty::Real), Ty::arr(n.clone(), Ty::Real)],
            Ty::Real,
            |t, ps| {
                let (a, b) = (ps[0].clone(), ps[1].clone());
                t.sum(n.clone(), |t, i| {
                    let x = t.index(&a, &i)?;
                    let y = t.index(&b, &i)?;
                    t.mul(&x, &y)
                })
            },
        )
        .unwrap();
    let p = Ty::pair(Ty::vec(2, Ty::Real), Ty::vec(3, Ty::Real));
    let f = t
        .define_fn("f", &[p], Ty::Real, |t, ps| {
            let a = t.fst(&ps[0])?;
            let b = t.snd(&ps[0])?;
            let x = t.call(&dot, &[(&a).into(), (&a).into()])?;
            let y = t.call(&dot, &[(&b).into(), (&b).into()])?;
            t.mul(&x, &y)
        })
        .unwrap();
    check_transpose(t, &f, json!([[0, 0], [0, 0, 0]]), json!(0));
}

#[test]
fn structured_output_and_shared_subexpressions() {
    let mut t = Tracer::new();
    let f = t
        .define_fn("f", &[Ty::vec(2, Ty::Real)], Ty::pair(Ty::Real, Ty::vec(2, Ty::Real)), |t, ps| {
            let a = t.index(&ps[0], 0usize)?;
            let b = t.index(&ps[0], 1usize)?;
            let ab = t.mul(&a, &b)?;
            let q = t.div(&ab, 3.0)?;
            let v = t.vec(&[(&ab).into(), (&q).into()])?;
            let s = t.sub(&ab, &a)?;
            t.pair(&s, &v)
        })
        .unwrap();
    check_transpose(t, &f, json!([0, 0]), json!([0, [0, 0]]));
}

#[test]
fn select_between_accumulators() {
    let mut t = Tracer::new();
    let f = t
        .define_fn("f", &[Ty::vec(3, Ty::Real)], Ty::vec(2, Ty::Real), |t, ps| {
            let x = ps[0].clone();
            let z = t.vec(&[0.0.into(), 0.0.into()])?;
            let r = t.accum(&z, |t, acc| {
                t.array(3, |t, i| {
                    let e = t.index(&x, &i)?;
                    let p = t.gt(&e, 0.0)?;
                    let lo = t.ref_index(&acc, 0usize)?;
                    let hi = t.ref_index(&acc, 1usize)?;
                    let s = t.select(&p, &hi, &lo)?;
                    let sq = t.mul(&e, &e)?;
                    t.accumulate(&s, &sq)
                })
            })?;
            t.fst(&r)
        })
        .unwrap();
    check_transpose(t, &f, json!([0, 0, 0]), json!([0, 0]));
}

#[test]
fn constant_functions_have_zero_gradient() {
    let mut t = Tracer::new();
    let f = t.define_fn("f", &[Ty::vec(2, Ty::Real)], Ty::Real, |t, _| t.real(4.0)).unwrap();
    let g = t
        .define_fn("g", &[Ty::vec(2, Ty::Real)], Ty::vec(2, Ty::Real), |t, ps| {
            let v = vjp(t, &f, &ps[0]).map_err(BuildError::from)?;
            v.grad(t, 1.0).map_err(BuildError::from)
        })
        .unwrap();
    let c = compile(t.registry(), g.id).unwrap();
    assert_eq!(c.invoke(&[json!([1.0, 2.0])]).unwrap(), json!([0.0, 0.0]));
}

#[test]
fn tangent_products_are_rejected() {
    let mut t = Tracer::new();
    let f = t.define_fn("f", &[Ty::Real], Ty::Real, |t, p| t.mul(&p[0], &p[0])).unwrap();
    let bad = t
        .define_fn("bad", &[Ty::dual()], Ty::dual(), |t, p| {
            let x = t.fst(&p[0])?;
            let dx = t.snd(&p[0])?;
            let y = t.mul(&x, &x)?;
            let dy = t.mul(&dx, &dx)?;
            t.pair(&y, &dy)
        })
        .unwrap();
    t.set_jvp(&f, &bad).unwrap();
    let err = t
        .define_fn("g", &[Ty::Real], Ty::Real, |t, ps| {
            let v = vjp(t, &f, &ps[0]).map_err(BuildError::from)?;
            v.grad(t, 1.0).map_err(BuildError::from)
        })
        .unwrap_err();
    assert!(matches!(AdError::from(err), AdError::NonlinearTangentUse { .. }));
}

#[test]
fn missing_derivative_is_reported() {
    let mut t = Tracer::new();
    let op = t.define_opaque("tan", &[Ty::Real], Ty::Real, "tan").unwrap();
    let f = t.define_fn("f", &[Ty::Real], Ty::Real, |t, p| t.call(&op, &[(&p[0]).into()])).unwrap();
    let err = t
        .define_fn("g", &[Ty::Real], Ty::Real, |t, ps| {
            let v = vjp(t, &f, &ps[0]).map_err(BuildError::from)?;
            v.grad(t, 1.0).map_err(BuildError::from)
        })
        .unwrap_err();
    assert_eq!(AdError::from(err), AdError::MissingDerivative("tan".into()));
}
