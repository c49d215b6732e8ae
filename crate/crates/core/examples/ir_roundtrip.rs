//! Parse IR text, typecheck it, print it back and reparse.

use scalar_ad::ir::{parse_into, print_ir, validate_registry, Registry};

const SRC: &str = include_str!("../data/sum5.ir");

fn main() {
    let reg = parse_into(SRC, Registry::with_std_hosts()).expect("parses");
    validate_registry(&reg).expect("typechecks");
    let text = print_ir(&reg);
    print!("{text}");
    let back = parse_into(&text, Registry::with_std_hosts()).expect("reparses");
    assert_eq!(print_ir(&back), text);

    let bad = "def f(): 3 =\n  let x: 3 = 3 in\n  x\n";
    let reg = parse_into(bad, Registry::new()).expect("parses");
    for e in validate_registry(&reg).unwrap_err() {
        println!("rejected: {e}");
    }
}
