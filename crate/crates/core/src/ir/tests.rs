use super::*;

const SUM: &str = include_str!("../../data/sum.ir");
const SIN: &str = include_str!("../../data/sin_example.ir");

fn class(src: &str) -> Vec<RegistryError> {
    let reg = parse_ir(src).expect("parses");
    validate_registry(&reg).err().unwrap_or_default()
}

fn type_kind(src: &str) -> TypeErrorKind {
    match class(src).into_iter().next() {
        Some(RegistryError::Type(e)) => e.kind,
        other => panic!("expected a type error, got {other:?}"),
    }
}

#[test]
fn sum_parses_and_checks() {
    let reg = parse_ir(SUM).unwrap();
    assert_eq!(reg.len(), 1);
    let sum = reg.def(FuncId(0)).unwrap();
    assert_eq!(sum.generics, vec![("n".to_string(), Kind::Index)]);
    assert_eq!(sum.body.lets.len(), 3);
    assert_eq!(sum.let_count(), 6);
    validate_registry(&reg).unwrap();
}

#[test]
fn printing_is_stable_and_round_trips() {
    for src in [SUM, SIN] {
        let reg = parse_ir(src).unwrap();
        let text = print_ir(&reg);
        let again = parse_ir(&text).unwrap();
        assert_eq!(reg, again);
        assert_eq!(print_ir(&again), text);
    }
}

#[test]
fn printed_sum_shape() {
    let text = print_ir(&parse_ir(SUM).unwrap());
    let expected = "\
def sum<n: Index>(v: [n]Real): Real =
  let z: Real = 0.0 in
  let t: (Real, [n]()) = accum a from z in (
    let x4: [n]() = [for i: n,
      let x: Real = v[i] in
      let u: () = a += x in
      u
    ] in
    x4
  ) in
  let y: Real = fst t in
  y
";
    assert_eq!(text, expected);
}

#[test]
fn empty_registry_prints_nothing() {
    assert_eq!(print_ir(&Registry::new()), "");
}

#[test]
fn nullary_and_unbound() {
    let reg = parse_ir("def f(): Real = let c: Real = 1.0 in c").unwrap();
    validate_registry(&reg).unwrap();
    assert_eq!(
        type_kind("def f(x: Real): Real = y"),
        TypeErrorKind::UnboundVar("y".into())
    );
}

#[test]
fn sugar_sequencing_and_trailing_expressions() {
    let src = "def f(v: [2]Real): Real =
      let z: Real = 0.0 in
      let t: (Real, ()) = accum a from z in (
        let i: 2 = 0 in
        let j: 2 = 1 in
        let x: Real = v[i] in
        let y: Real = v[j] in
        a += x;
        a += y
      ) in
      let s: Real = fst t in
      s";
    let reg = parse_ir(src).unwrap();
    validate_registry(&reg).unwrap();
    let text = print_ir(&reg);
    assert_eq!(parse_ir(&text).unwrap(), reg);
}

#[test]
fn literals_round_trip_bitwise() {
    for c in [0.1, -3.5, 1e-300, 6.02e23, f64::INFINITY, f64::NEG_INFINITY, -0.0, f64::MIN_POSITIVE] {
        let src = format!("def f(): Real = let c: Real = {} in c", print::real_literal(c));
        let reg = parse_ir(&src).unwrap();
        let d = reg.def(FuncId(0)).unwrap();
        assert_eq!(d.body.lets[0].expr, Expr::real(c), "{c}");
    }
    let reg = parse_ir("def f(): Real = let c: Real = nan in c").unwrap();
    assert!(matches!(reg.def(FuncId(0)).unwrap().body.lets[0].expr, Expr::Const(Real(x)) if x.is_nan()));
}

#[test]
fn parse_errors_have_positions() {
    let err = parse_ir("def f(x: Real): Real =\n  let y: Real = (x ? x) in y").unwrap_err();
    assert_eq!(err.line, 2);
    assert!(parse_ir("def f(x: Real): Real = let y: Real = g(x) in y").is_err());
    assert!(parse_ir("def f(): () = let u: () = () in u\ndef f(): () = let u: () = () in u").is_err());
}

#[test]
fn negative_programs() {
    assert!(matches!(
        type_kind(include_str!("../../data/fin_overflow.ir")),
        TypeErrorKind::FinOutOfRange { m: 3, .. }
    ));
    assert!(matches!(
        type_kind("def f(x: Real): Real = let a: [1]&Real = [x] in x"),
        TypeErrorKind::Kind(KindError::NonValueComponent { .. })
    ));
    assert!(matches!(
        type_kind("def f(x: Real): Real = let p: (&Real, Real) = (x, x) in x"),
        TypeErrorKind::Kind(KindError::NonValueComponent { .. })
    ));
    assert!(matches!(
        type_kind(
            "def f(x: Real): Real =
               let t: (Real, ()) = accum a from x in (let u: () = a += x in u) in
               a"
        ),
        TypeErrorKind::AccumulatorEscape(_)
    ));
    assert!(matches!(
        type_kind("def f(x: Real): Real = let t: (Real, &Real) = accum a from x in a in x"),
        TypeErrorKind::Kind(KindError::NonValueComponent { .. })
    ));
    assert!(matches!(
        class("def f(x: Real): Real = let y: Real = g(x) in y\ndef g(x: Real): Real = let y: Real = f(x) in y")[0],
        RegistryError::RecursionCycle(ref names) if names == &["f".to_string(), "g".to_string()]
    ));
    assert!(matches!(
        type_kind("def g(x: Real): Real = x\ndef f(x: Real): Real = let y: Real = g(x, x) in y"),
        TypeErrorKind::ArityMismatch { expected: 1, found: 2 }
    ));
    assert!(matches!(
        type_kind(&format!("{SUM}def f(v: [2]Real): Real = let y: Real = sum<Real>(v) in y")),
        TypeErrorKind::BadTypeArg { kind: Kind::Index, .. }
    ));
    assert!(matches!(
        type_kind(&format!("{SUM}def f(v: [2]Real): Real = let y: Real = sum<3>(v) in y")),
        TypeErrorKind::Mismatch { .. }
    ));
    assert!(matches!(
        type_kind(&format!("{SUM}def f(v: [2]Real): Real = let y: Real = sum(v) in y")),
        TypeErrorKind::TypeArgCount { expected: 1, found: 0 }
    ));
    assert!(matches!(
        type_kind("def f(x: Real): Real = let y: Bool = (x + x) in x"),
        TypeErrorKind::Mismatch { .. }
    ));
    assert!(matches!(
        type_kind("def f(x: Real, b: Bool): Real = let y: Real = select(b, x, b) in y"),
        TypeErrorKind::Mismatch { .. }
    ));
    assert!(matches!(
        type_kind("def f(x: Real): &Real = x"),
        TypeErrorKind::NonValueResult(_)
    ));
}

#[test]
fn custom_jvp_signatures() {
    let reg = parse_ir(SIN).unwrap();
    validate_registry(&reg).unwrap();
    let bad = format!("{SIN}def sqrt_jvp(x: Real): Real = x\nopaque root(Real): Real\njvp root = sqrt_jvp\n");
    let errs = class(&bad);
    assert!(matches!(errs[0], RegistryError::BadCustomJvpSignature { .. }), "{errs:?}");
}

#[test]
fn neq_is_a_real_comparison() {
    let reg = parse_ir("def f(x: Real, y: Real): Bool = let b: Bool = (x != y) in b").unwrap();
    validate_registry(&reg).unwrap();
}

#[test]
fn fin_zero_arrays() {
    let reg = parse_ir(
        "def f(): [0]Real = let a: [0]Real = [for i: 0, let c: Real = 1.0 in c] in a",
    )
    .unwrap();
    validate_registry(&reg).unwrap();
}
