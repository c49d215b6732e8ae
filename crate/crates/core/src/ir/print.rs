use std::fmt::Write;

use super::expr::{Block, Expr, FuncDef, OpaqueDef, VarId};
use super::registry::{Item, Registry};

/// Words with a fixed meaning in the text format; never used as variable names.
pub const KEYWORDS: &[&str] = &[
    "def", "opaque", "jvp", "let", "in", "for", "accum", "from", "select", "fst", "snd", "true",
    "false", "and", "or", "iff", "xor", "abs", "sgn", "ceil", "floor", "trunc", "sqrt", "inf",
    "nan", "Bool", "Real", "Index", "Value", "Type",
];

/// Names of the form `x<digits>` denote unnamed variables.
pub fn is_anonymous(name: &str) -> bool {
    name.len() > 1 && name.starts_with('x') && name[1..].bytes().all(|b| b.is_ascii_digit())
}

pub fn is_ident(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Whether `name` can be printed as a variable name and read back unchanged.
pub fn is_printable_var(name: &str) -> bool {
    is_ident(name) && !is_anonymous(name) && !KEYWORDS.contains(&name)
}

/// Real literal in a form the lexer reads back to the same bits.
pub fn real_literal(c: f64) -> String {
    if c.is_nan() {
        "nan".into()
    } else if c.is_infinite() {
        if c > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{c:?}")
    }
}

struct Printer<'a> {
    reg: &'a Registry,
    def: &'a FuncDef,
    out: String,
}

impl Printer<'_> {
    fn var(&self, v: VarId) -> String {
        match self.def.names.get(&v) {
            Some(n) => n.clone(),
            None => v.to_string(),
        }
    }

    fn indent(&mut self, depth: usize) {
        for _ in 0..depth {
            self.out.push_str("  ");
        }
    }

    fn block(&mut self, b: &Block, depth: usize) {
        for l in &b.lets {
            self.indent(depth);
            let _ = write!(self.out, "let {}: {} = ", self.var(l.var), l.ty);
            self.expr(&l.expr, depth);
            self.out.push_str(" in\n");
        }
        self.indent(depth);
        let r = self.var(b.result);
        self.out.push_str(&r);
        self.out.push('\n');
    }

    fn list(&self, vs: &[VarId]) -> String {
        vs.iter().map(|v| self.var(*v)).collect::<Vec<_>>().join(", ")
    }

    fn expr(&mut self, e: &Expr, depth: usize) {
        let v = |x: &VarId| self.var(*x);
        let s = match e {
            Expr::Unit => "()".to_string(),
            Expr::True => "true".into(),
            Expr::False => "false".into(),
            Expr::Const(c) => real_literal(c.0),
            Expr::Fin(m) => m.to_string(),
            Expr::Array(xs) => format!("[{}]", self.list(xs)),
            Expr::Pair(a, b) => format!("({}, {})", v(a), v(b)),
            Expr::Unary(op, x) => match op.symbol() {
                s @ ("-" | "!") => format!("{s}{}", v(x)),
                s => format!("{s} {}", v(x)),
            },
            Expr::Binary(op, x, y) => format!("({} {} {})", v(x), op.symbol(), v(y)),
            Expr::Select(p, x, y) => format!("select({}, {}, {})", v(p), v(x), v(y)),
            Expr::Accumulate(x, y) => format!("{} += {}", v(x), v(y)),
            Expr::Index(a, i) => format!("{}[{}]", v(a), v(i)),
            Expr::Fst(x) => format!("fst {}", v(x)),
            Expr::Snd(x) => format!("snd {}", v(x)),
            Expr::RefIndex(a, i) => format!("&{}[{}]", v(a), v(i)),
            Expr::RefFst(x) => format!("&fst {}", v(x)),
            Expr::RefSnd(x) => format!("&snd {}", v(x)),
            Expr::Call { func, targs, args } => {
                let mut s = self.reg.name(*func).to_string();
                if !targs.is_empty() {
                    let ts: Vec<String> = targs.iter().map(|t| t.to_string()).collect();
                    let _ = write!(s, "<{}>", ts.join(", "));
                }
                let _ = write!(s, "({})", self.list(args));
                s
            }
            Expr::For { index, index_ty, body } => {
                let _ = writeln!(self.out, "[for {}: {},", self.var(*index), index_ty);
                self.block(body, depth + 1);
                self.indent(depth);
                self.out.push(']');
                return;
            }
            Expr::Accum { acc, from, body } => {
                let _ = writeln!(self.out, "accum {} from {} in (", self.var(*acc), self.var(*from));
                self.block(body, depth + 1);
                self.indent(depth);
                self.out.push(')');
                return;
            }
        };
        self.out.push_str(&s);
    }
}

pub fn print_def(reg: &Registry, def: &FuncDef) -> String {
    let mut p = Printer {
        reg,
        def,
        out: String::new(),
    };
    p.out.push_str("def ");
    p.out.push_str(&def.name);
    if !def.generics.is_empty() {
        let gs: Vec<String> = def.generics.iter().map(|(n, k)| format!("{n}: {k}")).collect();
        let _ = write!(p.out, "<{}>", gs.join(", "));
    }
    let ps: Vec<String> = def
        .params
        .iter()
        .map(|(v, t)| format!("{}: {}", p.var(*v), t))
        .collect();
    let _ = writeln!(p.out, "({}): {} =", ps.join(", "), def.ret);
    p.block(&def.body, 1);
    p.out
}

pub fn print_opaque(op: &OpaqueDef) -> String {
    let ps: Vec<String> = op.params.iter().map(|t| t.to_string()).collect();
    let mut s = format!("opaque {}({}): {}", op.name, ps.join(", "), op.ret);
    if op.routine != op.name {
        let _ = write!(s, " = {}", op.routine);
    }
    s.push('\n');
    s
}

/// The whole registry in the text format, items in id order, custom derivatives last.
pub fn print_ir(reg: &Registry) -> String {
    let mut out = String::new();
    for (_, item) in reg.items() {
        match item {
            Item::Def(d) => out.push_str(&print_def(reg, d)),
            Item::Opaque(o) => out.push_str(&print_opaque(o)),
        }
    }
    for (base, jvp) in reg.custom_jvps() {
        let _ = writeln!(out, "jvp {} = {}", reg.name(base), reg.name(jvp));
    }
    out
}
