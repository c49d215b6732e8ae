use std::collections::BTreeMap;

use thiserror::Error;

use super::expr::{BinaryOp, Block, Expr, FuncDef, FuncId, Let, OpaqueDef, UnaryOp, VarId};
use super::print::{is_anonymous, KEYWORDS};
use super::registry::{Item, Registry};
use super::types::{Kind, Ty};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(usize),
    Real(f64),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: &[&str] = &[
    "+=", "!=", "<=", ">=", "==", "(", ")", "[", "]", "<", ">", ",", ":", "=", "&", "+", "-", "*",
    "/", "!", ";",
];

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let err = |line, col, message: String| ParseError { line, col, message };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let j = (i..chars.len())
                .find(|&j| !(chars[j].is_ascii_alphanumeric() || chars[j] == '_'))
                .unwrap_or(chars.len());
            let word: String = chars[i..j].iter().collect();
            col += j - i;
            i = j;
            out.push(Token { tok: Tok::Ident(word), line: start.0, col: start.1 });
            continue;
        }
        if c.is_ascii_digit() {
            let mut j = i;
            let mut real = false;
            while j < chars.len() {
                let d = chars[j];
                if d.is_ascii_digit() {
                    j += 1;
                } else if d == '.' {
                    real = true;
                    j += 1;
                } else if (d == 'e' || d == 'E') && j + 1 < chars.len() {
                    real = true;
                    j += 1;
                    if chars[j] == '-' || chars[j] == '+' {
                        j += 1;
                    }
                } else {
                    break;
                }
            }
            let text: String = chars[i..j].iter().collect();
            let tok = if real {
                Tok::Real(text.parse().map_err(|_| err(line, col, format!("bad number `{text}`")))?)
            } else {
                Tok::Int(text.parse().map_err(|_| err(line, col, format!("bad integer `{text}`")))?)
            };
            col += j - i;
            i = j;
            out.push(Token { tok, line: start.0, col: start.1 });
            continue;
        }
        let rest: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                i += s.len();
                col += s.len();
                out.push(Token { tok: Tok::Sym(s), line: start.0, col: start.1 });
            }
            None => return Err(err(line, col, format!("unexpected character `{c}`"))),
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    funcs: BTreeMap<String, FuncId>,
    // Per-definition state.
    scopes: Vec<(String, VarId)>,
    next_var: u32,
    names: BTreeMap<VarId, String>,
    free: BTreeMap<String, VarId>,
    types: BTreeMap<VarId, Ty>,
    closed: Vec<(String, VarId)>,
}

type P<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn error<T>(&self, message: impl Into<String>) -> P<T> {
        let t = &self.toks[self.pos];
        Err(ParseError {
            line: t.line,
            col: t.col,
            message: message.into(),
        })
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(t) if *t == s)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Ident(t) if t == w)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn sym(&mut self, s: &str) -> P<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.error(format!("expected `{s}`, found {}", self.describe()))
        }
    }

    fn word(&mut self, w: &str) -> P<()> {
        if self.is_word(w) {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected `{w}`, found {}", self.describe()))
        }
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(n) => format!("`{n}`"),
            Tok::Real(c) => format!("`{c}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn ident(&mut self) -> P<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            _ => self.error(format!("expected a name, found {}", self.describe())),
        }
    }

    fn ty(&mut self) -> P<Ty> {
        match self.bump() {
            Tok::Ident(s) => Ok(match s.as_str() {
                "Bool" => Ty::Bool,
                "Real" => Ty::Real,
                _ => Ty::Var(s),
            }),
            Tok::Int(n) => Ok(Ty::Fin(n)),
            Tok::Sym("&") => Ok(Ty::acc(self.ty()?)),
            Tok::Sym("[") => {
                let i = self.ty()?;
                self.sym("]")?;
                Ok(Ty::arr(i, self.ty()?))
            }
            Tok::Sym("(") => {
                if self.eat_sym(")") {
                    return Ok(Ty::Unit);
                }
                let a = self.ty()?;
                self.sym(",")?;
                let b = self.ty()?;
                self.sym(")")?;
                Ok(Ty::pair(a, b))
            }
            _ => {
                self.pos -= 1;
                self.error(format!("expected a type, found {}", self.describe()))
            }
        }
    }

    fn kind(&mut self) -> P<Kind> {
        let k = match self.peek() {
            Tok::Ident(s) if s == "Index" => Kind::Index,
            Tok::Ident(s) if s == "Value" => Kind::Value,
            Tok::Ident(s) if s == "Type" => Kind::Type,
            _ => return self.error(format!("expected a kind, found {}", self.describe())),
        };
        self.bump();
        Ok(k)
    }

    fn bind(&mut self, name: &str, ty: Option<Ty>) -> VarId {
        let v = VarId(self.next_var);
        self.next_var += 1;
        if let Some(t) = ty {
            self.types.insert(v, t);
        }
        if !is_anonymous(name) {
            self.names.insert(v, name.to_string());
        }
        self.scopes.push((name.to_string(), v));
        v
    }

    /// Resolve a variable reference; unknown names get a fresh id so the typechecker can report them.
    fn var(&mut self) -> P<VarId> {
        let name = self.ident()?;
        if let Some((_, v)) = self.scopes.iter().rev().find(|(n, _)| *n == name) {
            return Ok(*v);
        }
        if let Some(v) = self.free.get(&name) {
            return Ok(*v);
        }
        // Out-of-scope references keep the binding's id so errors can name what escaped.
        if let Some((_, v)) = self.closed.iter().rev().find(|(n, _)| *n == name) {
            return Ok(*v);
        }
        let v = VarId(u32::MAX - self.free.len() as u32);
        self.free.insert(name.clone(), v);
        Ok(v)
    }

    fn close_scope(&mut self, mark: usize) {
        let gone = self.scopes.split_off(mark);
        self.closed.extend(gone);
    }

    fn vars_until(&mut self, close: &str) -> P<Vec<VarId>> {
        let mut out = Vec::new();
        if self.eat_sym(close) {
            return Ok(out);
        }
        loop {
            out.push(self.var()?);
            if self.eat_sym(close) {
                return Ok(out);
            }
            self.sym(",")?;
        }
    }

    fn block(&mut self) -> P<Block> {
        let mark = self.scopes.len();
        let mut lets = Vec::new();
        let result = loop {
            if self.is_word("let") {
                self.bump();
                let name = self.ident()?;
                self.sym(":")?;
                let ty = self.ty()?;
                self.sym("=")?;
                let expr = self.expr()?;
                self.word("in")?;
                let var = self.bind(&name, Some(ty.clone()));
                lets.push(Let { var, ty, expr });
                continue;
            }
            // A bare variable ends the block unless it starts a `;` statement.
            let simple_end = matches!(self.peek(), Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()))
                && !matches!(self.peek_at(1), Tok::Sym("+=" | "[" | "(" | "<" | ";"));
            if simple_end {
                break self.var()?;
            }
            let expr = self.expr()?;
            if self.eat_sym(";") {
                let var = self.bind(&format!("_seq{}", self.next_var), Some(Ty::Unit));
                self.names.remove(&var);
                lets.push(Let { var, ty: Ty::Unit, expr });
                continue;
            }
            // A trailing expression: bind it and return it.
            let Some(ty) = self.infer(&expr) else {
                return self.error("cannot infer the type of a trailing expression; bind it with `let`");
            };
            let var = self.bind(&format!("_tail{}", self.next_var), Some(ty.clone()));
            self.names.remove(&var);
            lets.push(Let { var, ty, expr });
            break var;
        };
        self.close_scope(mark);
        Ok(Block { lets, result })
    }

    fn expr(&mut self) -> P<Expr> {
        match self.peek().clone() {
            Tok::Int(m) => {
                self.bump();
                Ok(Expr::Fin(m))
            }
            Tok::Real(c) => {
                self.bump();
                Ok(Expr::real(c))
            }
            Tok::Sym("-") => {
                self.bump();
                match self.peek().clone() {
                    Tok::Real(c) => {
                        self.bump();
                        Ok(Expr::real(-c))
                    }
                    Tok::Ident(s) if s == "inf" => {
                        self.bump();
                        Ok(Expr::real(f64::NEG_INFINITY))
                    }
                    _ => Ok(Expr::Unary(UnaryOp::Neg, self.var()?)),
                }
            }
            Tok::Sym("!") => {
                self.bump();
                Ok(Expr::Unary(UnaryOp::Not, self.var()?))
            }
            Tok::Sym("&") => {
                self.bump();
                if self.is_word("fst") || self.is_word("snd") {
                    let fst = self.is_word("fst");
                    self.bump();
                    let x = self.var()?;
                    return Ok(if fst { Expr::RefFst(x) } else { Expr::RefSnd(x) });
                }
                let a = self.var()?;
                self.sym("[")?;
                let i = self.var()?;
                self.sym("]")?;
                Ok(Expr::RefIndex(a, i))
            }
            Tok::Sym("(") => {
                self.bump();
                if self.eat_sym(")") {
                    return Ok(Expr::Unit);
                }
                let x = self.var()?;
                if self.eat_sym(",") {
                    let y = self.var()?;
                    self.sym(")")?;
                    return Ok(Expr::Pair(x, y));
                }
                let op = match self.bump() {
                    Tok::Sym(s) => BinaryOp::ALL.iter().find(|o| o.symbol() == s).copied(),
                    Tok::Ident(w) => BinaryOp::ALL.iter().find(|o| o.symbol() == w).copied(),
                    _ => None,
                };
                let Some(op) = op else {
                    self.pos -= 1;
                    return self.error(format!("expected an operator, found {}", self.describe()));
                };
                let y = self.var()?;
                self.sym(")")?;
                Ok(Expr::Binary(op, x, y))
            }
            Tok::Sym("[") => {
                self.bump();
                if self.is_word("for") {
                    self.bump();
                    let name = self.ident()?;
                    self.sym(":")?;
                    let index_ty = self.ty()?;
                    self.sym(",")?;
                    let mark = self.scopes.len();
                    let index = self.bind(&name, Some(index_ty.clone()));
                    let body = self.block()?;
                    self.close_scope(mark);
                    self.sym("]")?;
                    return Ok(Expr::For { index, index_ty, body });
                }
                Ok(Expr::Array(self.vars_until("]")?))
            }
            Tok::Ident(w) => self.word_expr(&w),
            _ => self.error(format!("expected an expression, found {}", self.describe())),
        }
    }

    fn word_expr(&mut self, w: &str) -> P<Expr> {
        let called = matches!(self.peek_at(1), Tok::Sym("(" | "<"));
        match w {
            "true" => {
                self.bump();
                return Ok(Expr::True);
            }
            "false" => {
                self.bump();
                return Ok(Expr::False);
            }
            "inf" => {
                self.bump();
                return Ok(Expr::real(f64::INFINITY));
            }
            "nan" => {
                self.bump();
                return Ok(Expr::real(f64::NAN));
            }
            "fst" | "snd" => {
                self.bump();
                let x = self.var()?;
                return Ok(if w == "fst" { Expr::Fst(x) } else { Expr::Snd(x) });
            }
            "select" => {
                self.bump();
                self.sym("(")?;
                let p = self.var()?;
                self.sym(",")?;
                let x = self.var()?;
                self.sym(",")?;
                let y = self.var()?;
                self.sym(")")?;
                return Ok(Expr::Select(p, x, y));
            }
            "accum" => {
                self.bump();
                let name = self.ident()?;
                self.word("from")?;
                let from = self.var()?;
                self.word("in")?;
                let mark = self.scopes.len();
                let acc_ty = self.types.get(&from).cloned().map(Ty::acc);
                let acc = self.bind(&name, acc_ty);
                let paren = self.eat_sym("(");
                let body = self.block()?;
                if paren {
                    self.sym(")")?;
                }
                self.close_scope(mark);
                return Ok(Expr::Accum { acc, from, body });
            }
            _ => {}
        }
        if let Some(op) = UnaryOp::ALL.iter().find(|o| o.symbol() == w) {
            if !called {
                self.bump();
                return Ok(Expr::Unary(*op, self.var()?));
            }
        }
        if called {
            self.bump();
            let Some(&func) = self.funcs.get(w) else {
                self.pos -= 1;
                return self.error(format!("unknown function `{w}`"));
            };
            let mut targs = Vec::new();
            if self.eat_sym("<") {
                loop {
                    targs.push(self.ty()?);
                    if self.eat_sym(">") {
                        break;
                    }
                    self.sym(",")?;
                }
            }
            self.sym("(")?;
            let args = self.vars_until(")")?;
            return Ok(Expr::Call { func, targs, args });
        }
        let x = self.var()?;
        if self.eat_sym("+=") {
            return Ok(Expr::Accumulate(x, self.var()?));
        }
        if self.eat_sym("[") {
            let i = self.var()?;
            self.sym("]")?;
            return Ok(Expr::Index(x, i));
        }
        self.error(format!("expected an expression, found {}", self.describe()))
    }

    /// Type of an unannotated trailing expression, where it follows from annotations.
    fn infer(&self, e: &Expr) -> Option<Ty> {
        let t = |v: &VarId| self.types.get(v).cloned();
        match e {
            Expr::Unit | Expr::Accumulate(..) => Some(Ty::Unit),
            Expr::True | Expr::False => Some(Ty::Bool),
            Expr::Const(_) => Some(Ty::Real),
            Expr::Pair(a, b) => Some(Ty::pair(t(a)?, t(b)?)),
            Expr::Array(xs) => Some(Ty::vec(xs.len(), t(xs.first()?)?)),
            Expr::Unary(UnaryOp::Not, _) => Some(Ty::Bool),
            Expr::Unary(..) => Some(Ty::Real),
            Expr::Binary(op, ..) => Some(super::typeck::binary_signature(*op).1),
            Expr::Select(_, x, _) => t(x),
            Expr::Index(a, _) => match t(a)? {
                Ty::Arr(_, e) => Some(*e),
                _ => None,
            },
            Expr::Fst(x) | Expr::Snd(x) => match t(x)? {
                Ty::Pair(a, b) => Some(if matches!(e, Expr::Fst(_)) { *a } else { *b }),
                _ => None,
            },
            Expr::For { index_ty, body, .. } => Some(Ty::arr(index_ty.clone(), t(&body.result)?)),
            Expr::Accum { from, body, .. } => Some(Ty::pair(t(from)?, t(&body.result)?)),
            _ => None,
        }
    }

    fn def(&mut self) -> P<FuncDef> {
        self.word("def")?;
        let name = self.item_name()?;
        self.scopes.clear();
        self.names.clear();
        self.free.clear();
        self.types.clear();
        self.closed.clear();
        self.next_var = 0;
        let mut generics = Vec::new();
        if self.eat_sym("<") {
            loop {
                let g = self.ident()?;
                self.sym(":")?;
                generics.push((g, self.kind()?));
                if self.eat_sym(">") {
                    break;
                }
                self.sym(",")?;
            }
        }
        self.sym("(")?;
        let mut params = Vec::new();
        if !self.eat_sym(")") {
            loop {
                let p = self.ident()?;
                self.sym(":")?;
                let t = self.ty()?;
                params.push((self.bind(&p, Some(t.clone())), t));
                if self.eat_sym(")") {
                    break;
                }
                self.sym(",")?;
            }
        }
        self.sym(":")?;
        let ret = self.ty()?;
        self.sym("=")?;
        let body = self.block()?;
        // Free variables are numbered after all bound ones, in order of appearance.
        let bound = self.next_var;
        let mut free: Vec<(VarId, String)> = self.free.iter().map(|(n, v)| (*v, n.clone())).collect();
        free.sort_by_key(|(v, _)| std::cmp::Reverse(*v));
        let renum: BTreeMap<VarId, (VarId, String)> = free
            .into_iter()
            .enumerate()
            .map(|(k, (v, n))| (v, (VarId(bound + k as u32), n)))
            .collect();
        let mut names = std::mem::take(&mut self.names);
        for (new, n) in renum.values() {
            names.insert(*new, n.clone());
        }
        let body = body.map_vars(&mut |v| renum.get(&v).map_or(v, |(w, _)| *w));
        Ok(FuncDef { name, generics, params, ret, body, names })
    }

    fn item_name(&mut self) -> P<String> {
        self.ident()
    }

    fn opaque(&mut self) -> P<OpaqueDef> {
        self.word("opaque")?;
        let name = self.item_name()?;
        self.sym("(")?;
        let mut params = Vec::new();
        if !self.eat_sym(")") {
            loop {
                params.push(self.ty()?);
                if self.eat_sym(")") {
                    break;
                }
                self.sym(",")?;
            }
        }
        self.sym(":")?;
        let ret = self.ty()?;
        let routine = if self.eat_sym("=") { self.ident()? } else { name.clone() };
        Ok(OpaqueDef { name, params, ret, routine })
    }
}

/// Parse the text format; the result is not typechecked.
pub fn parse_ir(src: &str) -> Result<Registry, ParseError> {
    parse_into(src, Registry::new())
}

/// Parse into an existing registry (keeping its host routines).
pub fn parse_into(src: &str, mut reg: Registry) -> Result<Registry, ParseError> {
    let toks = lex(src)?;
    let mut funcs = BTreeMap::new();
    for (id, item) in reg.items() {
        funcs.insert(item.name().to_string(), id);
    }
    // Item names are collected up front so calls may refer forward.
    let mut next = reg.len() as u32;
    for w in toks.windows(2) {
        if let (Tok::Ident(k), Tok::Ident(n)) = (&w[0].tok, &w[1].tok) {
            if k == "def" || k == "opaque" {
                if funcs.insert(n.clone(), FuncId(next)).is_some() {
                    return Err(ParseError {
                        line: w[1].line,
                        col: w[1].col,
                        message: format!("`{n}` is defined twice"),
                    });
                }
                next += 1;
            }
        }
    }
    let mut p = Parser {
        toks,
        pos: 0,
        funcs,
        scopes: Vec::new(),
        next_var: 0,
        names: BTreeMap::new(),
        free: BTreeMap::new(),
        types: BTreeMap::new(),
        closed: Vec::new(),
    };
    let mut jvps = Vec::new();
    loop {
        match p.peek().clone() {
            Tok::Eof => break,
            Tok::Ident(w) if w == "def" => {
                let d = p.def()?;
                reg.push_raw(Item::Def(d.normalize()));
            }
            Tok::Ident(w) if w == "opaque" => {
                let o = p.opaque()?;
                reg.push_raw(Item::Opaque(o));
            }
            Tok::Ident(w) if w == "jvp" => {
                p.bump();
                let base = p.ident()?;
                p.sym("=")?;
                let jvp = p.ident()?;
                jvps.push((base, jvp));
            }
            _ => return p.error(format!("expected `def`, `opaque` or `jvp`, found {}", p.describe())),
        }
    }
    for (base, jvp) in jvps {
        match (reg.lookup(&base), reg.lookup(&jvp)) {
            (Some(b), Some(j)) => reg.set_custom_jvp(b, j),
            _ => {
                return Err(ParseError {
                    line: 0,
                    col: 0,
                    message: format!("unknown function in `jvp {base} = {jvp}`"),
                })
            }
        }
    }
    Ok(reg)
}
