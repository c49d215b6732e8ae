use std::sync::Arc;

use serde_json::json;

use super::*;
use crate::ir::{print_def, typecheck_function, validate_registry, Kind, Ty};

fn real_fn(t: &mut Tracer, name: &str, k: usize) -> FuncHandle {
    // f(x) = x * k + ... with `k` multiplications
    t.define_fn(name, &[Ty::Real], Ty::Real, |t, p| {
        let mut y = p[0].clone();
        for _ in 0..k {
            y = t.mul(&y, 3.0)?;
        }
        Ok(y)
    })
    .unwrap()
}

#[test]
fn host_arguments_become_separate_definitions() {
    let mut t = Tracer::new();
    let f5 = real_fn(&mut t, "f", 5);
    let f7 = real_fn(&mut t, "f", 7);
    let f5b = real_fn(&mut t, "f", 5);
    assert_eq!(t.registry().len(), 3);
    let names: Vec<_> = [&f5, &f7, &f5b].iter().map(|f| t.registry().name(f.id).to_string()).collect();
    assert_eq!(names, ["f", "f_1", "f_2"]);
    // one shared constant plus one product per multiplication
    assert_eq!(t.registry().def(f7.id).unwrap().let_count(), 8);
    assert!(validate_registry(t.registry()).is_ok());
}

#[test]
fn calls_are_not_inlined() {
    let mut t = Tracer::new();
    let g = real_fn(&mut t, "g", 10);
    let h = t
        .define_fn("h", &[Ty::Real], Ty::Real, |t, p| {
            let mut y = p[0].clone();
            for _ in 0..4 {
                y = t.call(&g, &[(&y).into()])?;
            }
            Ok(y)
        })
        .unwrap();
    assert_eq!(t.registry().def(h.id).unwrap().let_count(), 4);
    let c = t.compile(&h).unwrap();
    assert_eq!(c.invoke(&[json!(1.0)]).unwrap(), json!(3f64.powi(40)));
}

#[test]
fn sum_over_traced_array() {
    let mut t = Tracer::new();
    let s = t
        .define_generic_fn("sum", &[("n", Kind::Index)], &[Ty::arr(Ty::Var("n".into()), Ty::Real)], Ty::Real, |t, p| {
            let v = p[0].clone();
            t.sum(Ty::Var("n".into()), |t, i| t.index(&v, &i))
        })
        .unwrap();
    let def = t.registry().def(s.id).unwrap();
    assert_eq!(def.body.lets.len(), 3);
    assert_eq!(def.let_count(), 6);
    let twice = t
        .define_fn("twice", &[Ty::vec(2, Ty::Real)], Ty::Real, |t, p| t.call(&s, &[(&p[0]).into()]))
        .unwrap();
    let c = t.compile(&twice).unwrap();
    assert_eq!(c.invoke(&[json!([1.5, 2.5])]).unwrap(), json!(4.0));
}

#[test]
fn arrays_and_inference() {
    let mut t = Tracer::new();
    let n = Ty::Var("n".into());
    let first = t
        .define_generic_fn("first", &[("n", Kind::Index)], &[Ty::arr(n.clone(), Ty::Real), n.clone()], Ty::Real, |t, p| {
            t.index(&p[0], &p[1])
        })
        .unwrap();
    let g = t
        .define_fn("g", &[Ty::vec(5, Ty::Real)], Ty::vec(3, Ty::Fin(3)), |t, p| {
            let x = t.call(&first, &[(&p[0]).into(), 4usize.into()]);
            assert!(matches!(x, Err(BuildError::Type { .. })));
            let four = t.fin(4, 5)?;
            let y = t.call(&first, &[(&p[0]).into(), (&four).into()])?;
            let Ty::Real = y.ty() else { panic!() };
            let e = t.call(&first, &[(&p[0]).into()]);
            assert_eq!(e, Err(BuildError::ArityMismatch { expected: 2, found: 1 }));
            t.array(3, |_, i| Ok(i))
        })
        .unwrap();
    let c = t.compile(&g).unwrap();
    assert_eq!(c.invoke(&[json!([0.0, 0.0, 0.0, 0.0, 0.0])]).unwrap(), json!([0, 1, 2]));
}

#[test]
fn generic_that_cannot_be_inferred() {
    let mut t = Tracer::new();
    let z = t
        .define_generic_fn("zero", &[("n", Kind::Index)], &[], Ty::Real, |t, _| t.real(0.0))
        .unwrap();
    let r = t.define_fn("f", &[], Ty::Real, |t, _| t.call(&z, &[]));
    assert_eq!(r, Err(BuildError::InferenceFailure("n".into())));
    let ok = t.define_fn("f", &[], Ty::Real, |t, _| t.call_with(&z, &[Ty::Fin(4)], &[]));
    assert!(ok.is_ok());
    let bad = t.define_fn("f", &[], Ty::Real, |t, _| t.call_with(&z, &[Ty::Real], &[]));
    assert!(matches!(bad, Err(BuildError::Type { .. })));
}

#[test]
fn type_errors_and_escapes() {
    let mut t = Tracer::new();
    let r = t.define_fn("f", &[Ty::Real, Ty::Bool], Ty::Real, |t, p| t.select(&p[0], &p[0], &p[0]));
    assert!(matches!(r, Err(BuildError::Type { rule: "select", .. })));
    let r = t.define_fn("f", &[Ty::Real], Ty::Bool, |_, p| Ok(p[0].clone()));
    assert!(matches!(r, Err(BuildError::Type { rule: "def", .. })));

    let mut leaked = None;
    t.define_fn("f", &[Ty::Real], Ty::Real, |_, p| {
        leaked = Some(p[0].clone());
        Ok(p[0].clone())
    })
    .unwrap();
    let leaked = leaked.unwrap();
    let r = t.define_fn("g", &[Ty::Real], Ty::Real, |t, p| t.add(&p[0], &leaked));
    assert_eq!(r, Err(BuildError::Escape));
    assert_eq!(t.add(1.0, 2.0), Err(BuildError::NoActiveContext));

    let r = t.define_fn("g", &[Ty::Real], Ty::Real, |t, p| {
        let mut inner = None;
        t.accum(&p[0], |t, a| {
            inner = Some(a);
            t.unit()
        })?;
        t.accumulate(inner.as_ref().unwrap(), &p[0])?;
        Ok(p[0].clone())
    });
    assert_eq!(r, Err(BuildError::AccumulatorEscape));
    let r = t.define_fn("g", &[Ty::Real], Ty::Real, |t, p| {
        let t2 = t.accum(&p[0], |_, a| Ok(a))?;
        t.fst(&t2)
    });
    assert_eq!(r, Err(BuildError::AccumulatorEscape));
    let r = t.define_fn("g", &[Ty::Real], Ty::Real, |t, p| {
        let mut inner = None;
        t.array(2, |t, _| {
            let y = t.mul(&p[0], &p[0])?;
            inner = Some(y.clone());
            Ok(y)
        })?;
        Ok(inner.unwrap())
    });
    assert_eq!(r, Err(BuildError::OutOfScope));
}

#[test]
fn nested_definitions() {
    let mut t = Tracer::new();
    let outer = t
        .define_fn("outer", &[Ty::Real], Ty::Real, |t, p| {
            let sq = t.define_fn("sq", &[Ty::Real], Ty::Real, |t, q| t.mul(&q[0], &q[0]))?;
            let bad = t.define_fn("bad", &[Ty::Real], Ty::Real, |t, q| t.mul(&q[0], &p[0]));
            assert_eq!(bad, Err(BuildError::Escape));
            t.call(&sq, &[(&p[0]).into()])
        })
        .unwrap();
    let c = t.compile(&outer).unwrap();
    assert_eq!(c.invoke(&[json!(3.0)]).unwrap(), json!(9.0));
}

#[test]
fn opaque_and_custom_derivatives() {
    let mut t = Tracer::new();
    assert_eq!(
        t.define_opaque("v", &[Ty::vec(2, Ty::Real)], Ty::Real, "sin"),
        Err(BuildError::NonScalarOpaque)
    );
    let cube = t
        .define_opaque_with("cube", &[Ty::Real], Ty::Real, Arc::new(|x: &[f64]| Ok(x[0] * x[0] * x[0])))
        .unwrap();
    let wrong = t.define_fn("wrong", &[Ty::Real], Ty::Real, |_, p| Ok(p[0].clone())).unwrap();
    assert!(matches!(t.set_jvp(&cube, &wrong), Err(BuildError::BadCustomJvpSignature(_))));
    let d = t
        .define_fn("d_cube", &[Ty::dual()], Ty::dual(), |t, p| {
            let x = t.fst(&p[0])?;
            let dx = t.snd(&p[0])?;
            let y = t.call(&cube, &[(&x).into()])?;
            let x2 = t.mul(&x, &x)?;
            let s = t.mul(&x2, 3.0)?;
            let dy = t.mul(&dx, &s)?;
            t.pair(&y, &dy)
        })
        .unwrap();
    t.set_jvp(&cube, &d).unwrap();
    assert_eq!(t.registry().custom_jvp(cube.id), Some(d.id));
    let c = t.compile(&d).unwrap();
    assert_eq!(c.invoke(&[json!([2.0, 1.0])]).unwrap(), json!([8.0, 12.0]));
}

#[test]
fn records_and_constants() {
    let mut t = Tracer::new();
    let rec = RecordType::new(&[("a", Ty::Real), ("b", Ty::Bool), ("c", Ty::Real)]);
    let f = t
        .define_fn("f", &[rec.ty()], Ty::Real, |t, p| {
            let a = t.field(&p[0], &rec, "a")?;
            let c = t.field(&p[0], &rec, "c")?;
            let b = t.field(&p[0], &rec, "b")?;
            assert!(matches!(t.field(&p[0], &rec, "z"), Err(BuildError::UnknownField(_))));
            let s = t.add(&a, &c)?;
            let k1 = t.real(2.0)?;
            let k2 = t.real(2.0)?;
            assert_eq!(k1, k2);
            t.select(&b, &s, 2.0)
        })
        .unwrap();
    let def = t.registry().def(f.id).unwrap();
    typecheck_function(def, t.registry()).unwrap();
    assert!(print_def(t.registry(), def).contains("2.0"));
    let c = t
        .compile(&f)
        .unwrap()
        .with_shapes(vec![rec.shape().unwrap()], crate::exec::Shape::Real)
        .unwrap();
    assert_eq!(c.invoke(&[json!({"a": 1.0, "b": true, "c": 2.0})]).unwrap(), json!(3.0));
    assert_eq!(c.invoke(&[json!({"a": 1.0, "b": false, "c": 2.0})]).unwrap(), json!(2.0));
}
