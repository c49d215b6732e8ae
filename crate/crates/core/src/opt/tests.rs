use serde_json::json;

use super::*;
use crate::autodiff::{lift_jvp, transpose};
use crate::builder::Tracer;
use crate::exec::compile;
use crate::ir::{alpha_equivalent, parse_into, parse_ir, print_def, typecheck_function, Registry, Ty};

const SIN: &str = include_str!("../../data/sin_example.ir");

const OPTIMIZED: &str = "
opaque sin(Real): Real
opaque cos(Real): Real

def fwd_sin(x: Real): (Real, Real) =
  let y: Real = sin(x) in
  let z: Real = cos(x) in
  let r: (Real, Real) = (y, z) in
  r

def bwd_sin(ddx: &Real, dy: Real, z: Real): () =
  let m: Real = (dy * z) in
  let u: () = ddx += m in
  u

def fwd_f(u: Real): (Real, Real) =
  let p: (Real, Real) = fwd_sin(u) in
  let v: Real = fst p in
  let t: Real = snd p in
  let w: Real = -v in
  let r: (Real, Real) = (w, t) in
  r

def bwd_f(ddu: &Real, dw: Real, t: Real): () =
  let dv: Real = -dw in
  let r: () = bwd_sin(ddu, dv, t) in
  r
";

#[test]
fn sin_example_simplifies_to_the_optimized_listing() {
    let mut t = Tracer::with_registry(parse_into(SIN, Registry::with_std_hosts()).unwrap());
    let f = t.registry().lookup("f").unwrap();
    let jf = lift_jvp(&mut t, f).unwrap();
    let tr = transpose(&mut t, jf).unwrap();
    let reg = t.into_registry();
    let want = parse_ir(OPTIMIZED).unwrap();
    for name in ["fwd_sin", "bwd_sin", "fwd_f", "bwd_f"] {
        let got = simplify(reg.def(reg.lookup(name).unwrap()).unwrap(), &reg);
        let exp = want.def(want.lookup(name).unwrap()).unwrap();
        assert!(
            alpha_equivalent(&reg, &got, &want, exp),
            "{name}:\n{}\nexpected\n{}",
            print_def(&reg, &got),
            print_def(&want, exp)
        );
        typecheck_function(&got, &reg).unwrap();
    }
    let mut reg = reg;
    let before = reg.def(tr.bwd).unwrap().let_count();
    simplify_registry(&mut reg, &[tr.fwd, tr.bwd]);
    assert_eq!(reg.def(tr.bwd).unwrap().let_count(), 2);
    assert!(before > 2);
}

#[test]
fn idempotent_and_never_larger() {
    let mut t = Tracer::with_registry(parse_into(SIN, Registry::with_std_hosts()).unwrap());
    let f = t.registry().lookup("f").unwrap();
    lift_jvp(&mut t, f).unwrap();
    let jf = t.registry().memo().lifted[&f];
    transpose(&mut t, jf).unwrap();
    let reg = t.into_registry();
    for id in reg.ids() {
        let Some(def) = reg.def(id) else { continue };
        let once = simplify(def, &reg);
        assert!(once.let_count() <= def.let_count());
        assert_eq!(simplify(&once, &reg), once);
    }
}

#[test]
fn zero_folding_and_plumbing() {
    let src = "
def f(x: Real): Real =
  let z: Real = 0.0 in
  let a: Real = (x + z) in
  let b: Real = (z - a) in
  let c: Real = -b in
  let d: Real = (z * c) in
  let e: Real = (c + d) in
  let p: (Real, Real) = (e, z) in
  let q: Real = fst p in
  q
";
    let reg = parse_ir(src).unwrap();
    let out = simplify(reg.def(reg.lookup("f").unwrap()).unwrap(), &reg);
    assert_eq!(out.let_count(), 0, "{}", print_def(&reg, &out));
    assert_eq!(out.body.result, out.params[0].0);
}

#[test]
fn effects_in_dead_blocks_survive() {
    let src = "
def f(a: &[3]Real, x: Real): Real =
  let r: [3]() = [for i: 3,
    let s: &Real = &a[i] in
    let u: () = s += x in
    u
  ] in
  let dead: Real = (x * x) in
  x
";
    let reg = parse_ir(src).unwrap();
    let def = reg.def(reg.lookup("f").unwrap()).unwrap();
    let out = simplify(def, &reg);
    assert_eq!(out.let_count(), def.let_count() - 1, "{}", print_def(&reg, &out));

    let mut t = Tracer::with_registry(reg);
    let g = t
        .define_fn("g", &[Ty::Real], Ty::vec(3, Ty::Real), |t, ps| {
            let z = t.vec(&[0.0.into(), 0.0.into(), 0.0.into()])?;
            let fh = t.func_handle(t.registry().lookup("f").unwrap()).unwrap();
            let x = ps[0].clone();
            let r = t.accum(&z, |t, acc| t.call(&fh, &[acc.into(), (&x).into()]))?;
            t.fst(&r)
        })
        .unwrap();
    let mut reg = t.into_registry();
    let before = compile(&reg, g.id).unwrap().invoke(&[json!(2.5)]).unwrap();
    simplify_registry(&mut reg, &[]);
    let after = compile(&reg, g.id).unwrap().invoke(&[json!(2.5)]).unwrap();
    assert_eq!(before, json!([2.5, 2.5, 2.5]));
    assert_eq!(before, after);
}

#[test]
fn disabled_passes_do_nothing() {
    let src = "
def f(x: Real): Real =
  let z: Real = 0.0 in
  let a: Real = (x + z) in
  a
";
    let reg = parse_ir(src).unwrap();
    let def = reg.def(reg.lookup("f").unwrap()).unwrap();
    let off = PassConfig {
        pair_scalarization: false,
        copy_propagation: false,
        zero_folding: false,
        unit_erasure: false,
        dead_let_elimination: false,
        max_rounds: 32,
    };
    assert_eq!(simplify_with(def, &reg, &off), def.normalize());
}
