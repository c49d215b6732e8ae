//! One pass/fail line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach the output; exits non-zero on any failure.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scalar_ad::autodiff::vjp;
use scalar_ad::builder::{clamped_sqrt, BuildError, FuncHandle, StdMath, Tracer};
use scalar_ad::cli::{
    bench_opcount, bench_scaling, demo_registries, dump, fit_linreg, gradcheck, least_squares, quadratic_at,
    spring_callables, DemoConfig, DumpOptions, GradCheckOptions, SpringParams, ANSCOMBE_X, ANSCOMBE_Y,
};
use scalar_ad::exec::{compile, Callable, Value};
use scalar_ad::ir::{
    alpha_equivalent, parse_into, parse_ir, print_ir, validate_registry, Expr, Kind, KindError, Registry, RegistryError,
    TypeErrorKind,
};

type Outcome = Result<String, String>;

const SIN: &str = include_str!("../data/sin_example.ir");
const SUM: &str = include_str!("../data/sum.ir");
const LOG_POW: &str = include_str!("../data/log_pow.ir");

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// `|a - b| / max(|a|, |b|, 1)`.
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn transpose_identity() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut seen = [false; 4];
    for seed in 0..20u64 {
        let g = common::generate(1000 + seed);
        for id in g.reg.ids() {
            if let Some(d) = g.reg.def(id) {
                d.body.visit(&mut |l| match &l.expr {
                    Expr::For { .. } => seen[0] = true,
                    Expr::Accum { .. } => seen[1] = true,
                    Expr::Select(..) => seen[2] = true,
                    Expr::Call { .. } => seen[3] = true,
                    _ => {}
                });
            }
        }
        let c = g.compile();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let x: Vec<f64> = (0..g.n).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let dx: Vec<f64> = (0..g.n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dy: f64 = rng.gen_range(-1.0..1.0);
            let lhs = dy * c.jvp(&x, &dx);
            let rhs: f64 = c.pullback(&x, dy).iter().zip(&dx).map(|(a, b)| a * b).sum();
            worst = worst.max(rel(lhs, rhs));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-9 && secs < 10.0 && seen.iter().all(|s| *s),
        format!("20 functions x 50 probes, max scaled error {worst:.2e}, for/accum/select/call seen {seen:?}, {secs:.2}s"),
    )
}

/// Largest relative error between `grad` and central differences of `f` over the points.
fn fd_worst(f: &Callable, grad: &Callable, template: &Value, points: &[Vec<f64>]) -> f64 {
    let eval = |xs: &[f64]| {
        let v = template.with_real_leaves(&mut xs.iter().copied());
        f.invoke_values(vec![v]).unwrap().as_real().unwrap()
    };
    let mut worst = 0.0f64;
    for x in points {
        let mut g = Vec::new();
        grad.invoke_values(vec![template.with_real_leaves(&mut x.iter().copied())])
            .unwrap()
            .real_leaves(&mut g);
        let fd = common::fd_gradient(eval, x);
        for (a, b) in g.iter().zip(&fd) {
            let e = rel(*a, *b);
            worst = worst.max(if e.is_nan() { f64::INFINITY } else { e });
        }
    }
    worst
}

fn with_grad(t: &mut Tracer, f: &FuncHandle) -> Result<FuncHandle, BuildError> {
    let fc = f.clone();
    let p = f.params[0].clone();
    t.define_fn("grad", &[p.clone()], p, |t, ps| {
        let v = vjp(t, &fc, &ps[0]).map_err(BuildError::from)?;
        v.grad(t, 1.0).map_err(BuildError::from)
    })
}

fn points(seed: u64, k: usize, lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..100)
        .map(|_| (0..k).map(|i| rng.gen_range(lo[i.min(lo.len() - 1)]..hi[i.min(hi.len() - 1)])).collect())
        .collect()
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();

    // least-squares loss over the regression data, beta free
    let mut t = Tracer::new();
    let (f, _) = least_squares(&mut t, 1, 11).unwrap();
    let g = with_grad(&mut t, &f).unwrap();
    let (cf, cg) = (t.compile(&f).unwrap(), t.compile(&g).unwrap());
    let template = Value::pair(
        Value::array(vec![Value::reals(&[0.0]); 11]),
        Value::pair(Value::reals(&[0.0; 11]), Value::pair(Value::Real(0.0), Value::reals(&[0.0]))),
    );
    let pts: Vec<Vec<f64>> = points(1, 2, &[-1.0, -1.0], &[5.0, 2.0])
        .into_iter()
        .map(|b| {
            let mut v: Vec<f64> = ANSCOMBE_X.to_vec();
            v.extend(ANSCOMBE_Y);
            v.extend(b);
            v
        })
        .collect();
    parts.push(("linreg", fd_worst(&cf, &cg, &template, &pts)));

    // pow wrapper and a sin/cos product through the opaque math functions
    let mut t = Tracer::new();
    let m = StdMath::define(&mut t).unwrap();
    let r2 = scalar_ad::ir::Ty::vec(2, scalar_ad::ir::Ty::Real);
    let pow = t
        .define_fn("pow2", &[r2.clone()], scalar_ad::ir::Ty::Real, |t, ps| {
            let x = t.index(&ps[0], 0usize)?;
            let y = t.index(&ps[0], 1usize)?;
            t.call(&m.pow, &[(&x).into(), (&y).into()])
        })
        .unwrap();
    let trig = t
        .define_fn("trig", &[r2.clone()], scalar_ad::ir::Ty::Real, |t, ps| {
            let x = t.index(&ps[0], 0usize)?;
            let y = t.index(&ps[0], 1usize)?;
            let s = t.call(&m.sin, &[(&x).into()])?;
            let c = t.call(&m.cos, &[(&y).into()])?;
            t.mul(&s, &c)
        })
        .unwrap();
    let gp = with_grad(&mut t, &pow).unwrap();
    let gt = with_grad(&mut t, &trig).unwrap();
    let v2 = Value::reals(&[0.0, 0.0]);
    let pp = points(2, 2, &[0.5, -2.0], &[3.0, 3.0]);
    parts.push(("pow", fd_worst(&t.compile(&pow).unwrap(), &t.compile(&gp).unwrap(), &v2, &pp)));
    let pt = points(3, 2, &[-3.0, -3.0], &[3.0, 3.0]);
    parts.push(("sin/cos", fd_worst(&t.compile(&trig).unwrap(), &t.compile(&gt).unwrap(), &v2, &pt)));

    // the negated-sine file and the log/pow file, through the checking command
    let mut sin_src = SIN.to_string();
    sin_src.push_str(
        "
def jvp_cos(p: (Real, Real)): (Real, Real) =
  let x: Real = fst p in
  let dx: Real = snd p in
  let y: Real = cos(x) in
  let s: Real = sin(x) in
  let m: Real = (dx * s) in
  let dy: Real = -m in
  let r: (Real, Real) = (y, dy) in
  r

def g(u: Real): Real =
  let v: Real = f(u) in
  let w: Real = cos(v) in
  w

jvp cos = jvp_cos
",
    );
    let r = gradcheck(&sin_src, &GradCheckOptions::default()).map_err(|e| e.to_string())?;
    parts.push(("sin file", r.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)));
    let r = gradcheck(LOG_POW, &GradCheckOptions::default()).map_err(|e| e.to_string())?;
    parts.push(("log/pow file", r.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)));

    let (loss, grad) = spring_callables(&SpringParams::default()).map_err(|e| e.to_string())?;
    let ps = points(4, 1, &[-2.0], &[2.0]);
    parts.push(("spring", fd_worst(&loss, &grad, &Value::Real(0.0), &ps)));

    let secs = start.elapsed().as_secs_f64();
    let worst = parts.iter().map(|p| p.1).fold(0.0, f64::max);
    let detail: Vec<String> = parts.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    ensure(
        worst <= 1e-5 && secs < 30.0,
        format!("100 points each: {}; {secs:.2}s", detail.join(", ")),
    )
}

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

fn listing() -> Outcome {
    let opts = DumpOptions {
        func: Some("f".into()),
        opt: true,
        jvp: false,
    };
    let rep = dump(SIN, &opts).map_err(|e| e.to_string())?;
    let text = rep.get("ir").and_then(|v| v.as_str()).unwrap_or_default().to_string();
    let got = parse_ir(&format!("opaque sin(Real): Real\nopaque cos(Real): Real\n{text}")).map_err(|e| e.to_string())?;
    let want = parse_ir(OPTIMIZED).unwrap();
    let mut ok = true;
    for name in ["fwd_sin", "bwd_sin", "fwd_f", "bwd_f"] {
        let (Some(a), Some(b)) = (got.lookup(name), want.lookup(name)) else {
            return Err(format!("`{name}` missing from dump"));
        };
        ok &= alpha_equivalent(&got, got.def(a).unwrap(), &want, want.def(b).unwrap());
    }
    let bwd = got.def(got.lookup("bwd_sin").unwrap()).unwrap();
    let mac = bwd.let_count() == 2
        && matches!(bwd.body.lets[0].expr, Expr::Binary(scalar_ad::ir::BinaryOp::Mul, ..))
        && matches!(bwd.body.lets[1].expr, Expr::Accumulate(..));
    ensure(
        ok && mac,
        format!("fwd/bwd alpha-equivalent to the optimized listing: {ok}; bwd_sin is one multiply-accumulate: {mac}"),
    )
}

fn linreg() -> Outcome {
    let start = Instant::now();
    let x: Vec<Vec<f64>> = ANSCOMBE_X.iter().map(|v| vec![*v]).collect();
    let r = fit_linreg(&x, &ANSCOMBE_Y, &DemoConfig::linreg(), None).map_err(|e| e.to_string())?;
    // normal equations for one regressor
    let n = ANSCOMBE_X.len() as f64;
    let (sx, sy) = (ANSCOMBE_X.iter().sum::<f64>(), ANSCOMBE_Y.iter().sum::<f64>());
    let sxx: f64 = ANSCOMBE_X.iter().map(|a| a * a).sum();
    let sxy: f64 = ANSCOMBE_X.iter().zip(ANSCOMBE_Y).map(|(a, b)| a * b).sum();
    let b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let b0 = (sy - b * sx) / n;
    let secs = start.elapsed().as_secs_f64();
    ensure(
        r.converged
            && (r.b0 - 3.0).abs() <= 0.01
            && (r.b[0] - 0.5).abs() <= 0.005
            && (r.b0 - b0).abs() <= 0.01
            && (r.b[0] - b).abs() <= 0.005
            && secs < 60.0,
        format!(
            "b0 = {:.5}, b = {:.5} after {} iterations (normal equations {b0:.5}, {b:.5}); {secs:.2}s",
            r.b0, r.b[0], r.iterations
        ),
    )
}

fn quadratic() -> Outcome {
    let (z, g, h) = quadratic_at(2.0, 3.0).map_err(|e| e.to_string())?;
    let l = 2f64.ln();
    // d/dx x^y = y x^(y-1), d/dy = x^y ln x, and the second partials
    let want_g = [3.0 * 4.0, 8.0 * l];
    let want_h = [[3.0 * 2.0 * 2.0, 4.0 + 3.0 * 4.0 * l], [4.0 + 3.0 * 4.0 * l, 8.0 * l * l]];
    let ge = (0..2).map(|i| (g[i] - want_g[i]).abs()).fold(0.0, f64::max);
    let he = (0..4).map(|k| (h[k / 2][k % 2] - want_h[k / 2][k % 2]).abs()).fold(0.0, f64::max);
    let sym = (h[0][1] - h[1][0]).abs();
    ensure(
        z == 8.0 && ge <= 1e-9 && he <= 1e-9 && sym <= 1e-9,
        format!("z = {z}, gradient error {ge:.1e}, Hessian error {he:.1e}, asymmetry {sym:.1e}"),
    )
}

fn opcount() -> Outcome {
    let rows = bench_opcount(&[50, 200], 3, 0).map_err(|e| e.to_string())?;
    let drift = (rows[1].ratio - rows[0].ratio).abs() / rows[0].ratio;
    ensure(
        rows.iter().all(|r| r.ratio <= 8.0) && drift <= 0.2,
        format!("gradient/primal ratio {:.3} at n=50, {:.3} at n=200, drift {:.1}%", rows[0].ratio, rows[1].ratio, drift * 100.0),
    )
}

fn scaling() -> Outcome {
    let s = bench_scaling(50).map_err(|e| e.to_string())?;
    // a generic helper at two sizes: caller + dot@2 + dot@3
    let reg = parse_ir(&format!(
        "{SUM}
def both(p: ([2]Real, [3]Real)): Real =
  let a: [2]Real = fst p in
  let b: [3]Real = snd p in
  let x: Real = sum<2>(a) in
  let y: Real = sum<3>(b) in
  let z: Real = sum<2>(a) in
  let r: Real = (x + y) in
  let q: Real = (r + z) in
  q
"
    ))
    .map_err(|e| e.to_string())?;
    let c = compile(&reg, reg.lookup("both").unwrap()).map_err(|e| e.to_string())?;
    ensure(
        s.callee_lets == 100 && s.lowered_lets <= 400 && s.inlined_lets >= 5000 && s.instance_count == s.reachable_pairs && c.instance_count() == 3,
        format!(
            "{}-let callee x {} calls: traced and lowered {} lets vs {} inlined; instances {} = reachable {}; generic instances {} = 3; gradient defs {} lets",
            s.callee_lets,
            s.calls,
            s.lowered_lets,
            s.inlined_lets,
            s.instance_count,
            s.reachable_pairs,
            c.instance_count(),
            s.gradient_lets
        ),
    )
}

fn robustness() -> Outcome {
    let mut t = Tracer::new();
    let sq = clamped_sqrt(&mut t).unwrap();
    let g = with_grad(&mut t, &sq).unwrap();
    let d0 = t.compile(&g).unwrap().invoke_values(vec![Value::Real(0.0)]).unwrap().as_real().unwrap();

    let mut finite = Vec::new();
    let (_, gq, hq) = quadratic_at(2.0, 3.0).map_err(|e| e.to_string())?;
    finite.push(gq.iter().chain(hq.iter().flatten()).all(|v| v.is_finite()));
    let (_, grad) = spring_callables(&SpringParams::default()).map_err(|e| e.to_string())?;
    let v0: f64 = ChaCha8Rng::seed_from_u64(DemoConfig::spring().seed).gen_range(-1.0..1.0);
    finite.push(grad.invoke_values(vec![Value::Real(v0)]).unwrap().as_real().unwrap().is_finite());
    let mut lt = Tracer::new();
    let (f, _) = least_squares(&mut lt, 1, 11).unwrap();
    let lg = with_grad(&mut lt, &f).unwrap();
    let x = Value::array(ANSCOMBE_X.iter().map(|v| Value::reals(&[*v])).collect());
    let arg = Value::pair(x, Value::pair(Value::reals(&ANSCOMBE_Y), Value::pair(Value::Real(0.0), Value::reals(&[0.0]))));
    let mut leaves = Vec::new();
    lt.compile(&lg).unwrap().invoke_values(vec![arg]).unwrap().real_leaves(&mut leaves);
    finite.push(leaves.iter().all(|v| v.is_finite()));
    ensure(
        d0.is_finite() && (d0 - 0.5 / 1e-5).abs() < 1e-6 && finite.iter().all(|b| *b),
        format!("clamped sqrt derivative at 0 = {d0}; demo gradients finite {finite:?}"),
    )
}

fn typechecker() -> Outcome {
    let errors = |src: &str| -> Vec<RegistryError> {
        match parse_ir(src) {
            Ok(reg) => validate_registry(&reg).err().unwrap_or_default(),
            Err(_) => Vec::new(),
        }
    };
    let kind = |src: &str| match errors(src).into_iter().next() {
        Some(RegistryError::Type(e)) => Some(e.kind),
        _ => None,
    };
    let non_value = |k: Option<TypeErrorKind>| matches!(k, Some(TypeErrorKind::Kind(KindError::NonValueComponent { .. })));
    let cases: Vec<(&str, bool)> = vec![
        ("fin overflow", matches!(kind(include_str!("../data/fin_overflow.ir")), Some(TypeErrorKind::FinOutOfRange { .. }))),
        ("fin overflow in array", matches!(kind("def f(x: [2]Real): Real = let i: 2 = 2 in let y: Real = x[i] in y"), Some(TypeErrorKind::FinOutOfRange { .. }))),
        ("ref in array", non_value(kind("def f(x: Real): Real = let a: [1]&Real = [x] in x"))),
        ("ref in pair", non_value(kind("def f(x: Real): Real = let p: (&Real, Real) = (x, x) in x"))),
        ("accum result holds a ref", non_value(kind("def f(x: Real): Real = let t: (Real, &Real) = accum a from x in a in x"))),
        (
            "accumulator escape",
            matches!(
                kind("def f(x: Real): Real =\n  let t: (Real, ()) = accum a from x in (let u: () = a += x in u) in\n  a"),
                Some(TypeErrorKind::AccumulatorEscape(_))
            ),
        ),
        (
            "recursion",
            matches!(
                errors("def f(x: Real): Real = let y: Real = g(x) in y\ndef g(x: Real): Real = let y: Real = f(x) in y").first(),
                Some(RegistryError::RecursionCycle(_))
            ),
        ),
        ("self recursion", matches!(errors("def f(x: Real): Real = let y: Real = f(x) in y").first(), Some(RegistryError::RecursionCycle(_)))),
        ("arity", matches!(kind("def g(x: Real): Real = x\ndef f(x: Real): Real = let y: Real = g(x, x) in y"), Some(TypeErrorKind::ArityMismatch { .. }))),
        ("unbound variable", matches!(kind("def f(x: Real): Real = y"), Some(TypeErrorKind::UnboundVar(_)))),
        (
            "generic at a non-index type",
            matches!(kind(&format!("{SUM}def f(v: [2]Real): Real = let y: Real = sum<Real>(v) in y")), Some(TypeErrorKind::BadTypeArg { kind: Kind::Index, .. })),
        ),
        ("generic at the wrong size", matches!(kind(&format!("{SUM}def f(v: [2]Real): Real = let y: Real = sum<3>(v) in y")), Some(TypeErrorKind::Mismatch { .. }))),
        ("missing type argument", matches!(kind(&format!("{SUM}def f(v: [2]Real): Real = let y: Real = sum(v) in y")), Some(TypeErrorKind::TypeArgCount { .. }))),
        ("reference result", matches!(kind("def f(x: Real): &Real = x"), Some(TypeErrorKind::NonValueResult(_)))),
    ];
    let failed: Vec<&str> = cases.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let sum_ok = parse_ir(SUM).map(|r| validate_registry(&r).is_ok()).unwrap_or(false);
    let demos = demo_registries().map_err(|e| e.to_string())?;
    let demos_ok = demos.iter().all(|(_, r)| validate_registry(r).is_ok());
    ensure(
        cases.len() >= 12 && failed.is_empty() && sum_ok && demos_ok,
        format!(
            "{} negative programs, {} misclassified {failed:?}; generic sum accepted: {sum_ok}; demo defs accepted: {demos_ok}",
            cases.len(),
            failed.len()
        ),
    )
}

fn round_trip() -> Outcome {
    let mut regs: Vec<(String, Registry)> = demo_registries()
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(n, r)| (n.to_string(), r))
        .collect();
    for (n, src) in [("sin", SIN), ("sum", SUM), ("log/pow", LOG_POW)] {
        regs.push((n.into(), parse_into(src, Registry::with_std_hosts()).unwrap()));
    }
    let mut bad = Vec::new();
    let mut defs = 0;
    for (name, reg) in &regs {
        let text = print_ir(reg);
        let back = match parse_into(&text, Registry::with_std_hosts()) {
            Ok(b) => b,
            Err(e) => {
                bad.push(format!("{name}: {e}"));
                continue;
            }
        };
        let same = reg.len() == back.len()
            && reg.ids().all(|id| {
                reg.name(id) == back.name(id)
                    && reg.def(id).map(|d| d.normalize()) == back.def(id).map(|d| d.normalize())
                    && reg.opaque(id).map(|o| (&o.params, &o.ret)) == back.opaque(id).map(|o| (&o.params, &o.ret))
                    && reg.custom_jvp(id) == back.custom_jvp(id)
            })
            && print_ir(&back) == text;
        defs += reg.len();
        if !same {
            bad.push(name.clone());
        }
    }
    ensure(
        bad.is_empty(),
        format!("{} registries ({defs} items) survive print then parse structurally; mismatches {bad:?}", regs.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("transpose identity", transpose_identity),
        ("gradient checks", gradient_checks),
        ("listing reproduction", listing),
        ("linear regression", linreg),
        ("quadratic demo", quadratic),
        ("cheap gradient", opcount),
        ("no-inline scaling", scaling),
        ("robustness", robustness),
        ("typechecker suite", typechecker),
        ("round trip", round_trip),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
