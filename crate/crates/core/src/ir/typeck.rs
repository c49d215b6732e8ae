use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use super::expr::{BinaryOp, Block, Expr, FuncDef, FuncId, UnaryOp, VarId};
use super::registry::{Item, Registry};
use super::types::{kind_of, Kind, KindEnv, KindError, Ty};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TypeErrorKind {
    #[error("unbound variable `{0}`")]
    UnboundVar(String),
    #[error("variable `{0}` is bound twice")]
    DuplicateVar(String),
    #[error("literal {m} does not fit index type {n}")]
    FinOutOfRange { m: usize, n: String },
    #[error("expected `{expected}`, found `{found}`")]
    Mismatch { expected: String, found: String },
    #[error(transparent)]
    Kind(#[from] KindError),
    #[error("accumulator `{0}` escapes its accum block")]
    AccumulatorEscape(String),
    #[error("expected {expected} arguments, found {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("expected {expected} type arguments, found {found}")]
    TypeArgCount { expected: usize, found: usize },
    #[error("type argument `{ty}` does not satisfy `{kind}`")]
    BadTypeArg { ty: String, kind: Kind },
    #[error("call to unknown function #{0}")]
    UnresolvedCallee(u32),
    #[error("`{0}` is not an array")]
    NotArray(String),
    #[error("`{0}` is not a pair")]
    NotPair(String),
    #[error("`{0}` is not an accumulator")]
    NotAccumulator(String),
    #[error("definition result must be a Value, found `{0}`")]
    NonValueResult(String),
}

/// A type error located at a let (numbered in preorder over nested blocks).
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub struct TypeError {
    pub func: String,
    pub at: Option<usize>,
    pub rule: &'static str,
    pub kind: TypeErrorKind,
}

impl fmt::Display for TypeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.at {
            Some(i) => write!(f, "in `{}`, let #{} ({}): {}", self.func, i, self.rule, self.kind),
            None => write!(f, "in `{}` ({}): {}", self.func, self.rule, self.kind),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("recursive call cycle: {}", .0.join(" -> "))]
    RecursionCycle(Vec<String>),
    #[error("`{caller}` calls unknown function #{callee}")]
    UnresolvedCallee { caller: String, callee: u32 },
    #[error("custom derivative `{jvp}` of `{base}` must have signature {expected}")]
    BadCustomJvpSignature {
        base: String,
        jvp: String,
        expected: String,
    },
    #[error(transparent)]
    Type(#[from] TypeError),
}

struct Checker<'a> {
    reg: &'a Registry,
    def: &'a FuncDef,
    kinds: KindEnv,
    env: BTreeMap<VarId, Ty>,
    bound: BTreeSet<VarId>,
    closed_accs: BTreeSet<VarId>,
    counter: usize,
}

type R<T> = Result<T, (&'static str, TypeErrorKind)>;

fn mismatch(expected: &Ty, found: &Ty) -> TypeErrorKind {
    TypeErrorKind::Mismatch {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

impl Checker<'_> {
    fn name(&self, v: VarId) -> String {
        self.def.names.get(&v).cloned().unwrap_or_else(|| v.to_string())
    }

    fn var(&self, v: VarId, rule: &'static str) -> R<Ty> {
        match self.env.get(&v) {
            Some(t) => Ok(t.clone()),
            None if self.closed_accs.contains(&v) => {
                Err((rule, TypeErrorKind::AccumulatorEscape(self.name(v))))
            }
            None => Err((rule, TypeErrorKind::UnboundVar(self.name(v)))),
        }
    }

    fn expect(&self, v: VarId, ty: &Ty, rule: &'static str) -> R<()> {
        let t = self.var(v, rule)?;
        if &t == ty {
            Ok(())
        } else {
            Err((rule, mismatch(ty, &t)))
        }
    }

    fn bind(&mut self, v: VarId, ty: Ty, rule: &'static str) -> R<()> {
        if !self.bound.insert(v) {
            return Err((rule, TypeErrorKind::DuplicateVar(self.name(v))));
        }
        self.env.insert(v, ty);
        Ok(())
    }

    fn kind(&self, ty: &Ty, rule: &'static str) -> R<Kind> {
        kind_of(ty, &self.kinds).map_err(|e| (rule, e.into()))
    }

    fn block(&mut self, b: &Block) -> Result<Ty, TypeError> {
        let mut scoped = Vec::new();
        for l in &b.lets {
            let at = self.counter;
            self.counter += 1;
            let wrap = |(rule, kind)| TypeError {
                func: self.def.name.clone(),
                at: Some(at),
                rule,
                kind,
            };
            self.kind(&l.ty, "let").map_err(wrap)?;
            let ty = self.expr(&l.expr, &l.ty)?;
            let wrap = |(rule, kind)| TypeError {
                func: self.def.name.clone(),
                at: Some(at),
                rule,
                kind,
            };
            if ty != l.ty {
                return Err(wrap(("let", mismatch(&l.ty, &ty))));
            }
            self.bind(l.var, ty, "let").map_err(wrap)?;
            scoped.push(l.var);
        }
        let res = self.var(b.result, "block").map_err(|(rule, kind)| TypeError {
            func: self.def.name.clone(),
            at: None,
            rule,
            kind,
        });
        for v in scoped {
            self.env.remove(&v);
        }
        res
    }

    /// Type of `e`; `declared` is the let's annotation, needed for Fin literals.
    fn expr(&mut self, e: &Expr, declared: &Ty) -> Result<Ty, TypeError> {
        let at = self.counter - 1;
        let func = self.def.name.clone();
        let wrap = move |(rule, kind): (&'static str, TypeErrorKind)| TypeError {
            func: func.clone(),
            at: Some(at),
            rule,
            kind,
        };
        match e {
            Expr::For { index, index_ty, body } => {
                if self.kind(index_ty, "for").map_err(&wrap)? != Kind::Index {
                    return Err(wrap((
                        "for",
                        KindError::NonIndexComponent {
                            ty: format!("[{index_ty}]_"),
                            index: index_ty.to_string(),
                        }
                        .into(),
                    )));
                }
                self.bind(*index, index_ty.clone(), "for").map_err(&wrap)?;
                let elem = self.block(body);
                self.env.remove(index);
                let elem = elem?;
                if self.kind(&elem, "for").map_err(&wrap)? == Kind::Type {
                    return Err(wrap(("for", TypeErrorKind::AccumulatorEscape(self.name(body.result)))));
                }
                Ok(Ty::arr(index_ty.clone(), elem))
            }
            Expr::Accum { acc, from, body } => {
                let init = self.var(*from, "accum").map_err(&wrap)?;
                if self.kind(&init, "accum").map_err(&wrap)? == Kind::Type {
                    return Err(wrap(("accum", mismatch(&Ty::Var("Value".into()), &init))));
                }
                self.bind(*acc, Ty::acc(init.clone()), "accum").map_err(&wrap)?;
                let res = self.block(body);
                self.env.remove(acc);
                self.closed_accs.insert(*acc);
                let res = res?;
                if res.contains_acc() {
                    return Err(wrap(("accum", TypeErrorKind::AccumulatorEscape(self.name(body.result)))));
                }
                Ok(Ty::pair(init, res))
            }
            _ => self.simple(e, declared).map_err(wrap),
        }
    }

    fn simple(&mut self, e: &Expr, declared: &Ty) -> R<Ty> {
        match e {
            Expr::Unit => Ok(Ty::Unit),
            Expr::True | Expr::False => Ok(Ty::Bool),
            Expr::Const(_) => Ok(Ty::Real),
            Expr::Fin(m) => match declared {
                Ty::Fin(n) if m < n => Ok(declared.clone()),
                _ => Err((
                    "fin",
                    TypeErrorKind::FinOutOfRange {
                        m: *m,
                        n: declared.to_string(),
                    },
                )),
            },
            Expr::Array(xs) => {
                let elem = match (xs.first(), declared) {
                    (Some(x), _) => self.var(*x, "array")?,
                    (None, Ty::Arr(_, e)) => (**e).clone(),
                    (None, _) => return Err(("array", mismatch(&Ty::vec(0, Ty::Unit), declared))),
                };
                for x in xs {
                    self.expect(*x, &elem, "array")?;
                }
                let ty = Ty::vec(xs.len(), elem);
                self.kind(&ty, "array")?;
                Ok(ty)
            }
            Expr::Pair(a, b) => {
                let ty = Ty::pair(self.var(*a, "pair")?, self.var(*b, "pair")?);
                self.kind(&ty, "pair")?;
                Ok(ty)
            }
            Expr::Unary(op, x) => {
                let t = if *op == UnaryOp::Not { Ty::Bool } else { Ty::Real };
                self.expect(*x, &t, "unary")?;
                Ok(t)
            }
            Expr::Binary(op, x, y) => {
                let (arg, ret) = binary_signature(*op);
                self.expect(*x, &arg, "binary")?;
                self.expect(*y, &arg, "binary")?;
                Ok(ret)
            }
            Expr::Select(p, x, y) => {
                self.expect(*p, &Ty::Bool, "select")?;
                let t = self.var(*x, "select")?;
                self.expect(*y, &t, "select")?;
                Ok(t)
            }
            Expr::Accumulate(x, y) => {
                let t = self.var(*x, "accumulate")?;
                match t {
                    Ty::Acc(inner) => {
                        self.expect(*y, &inner, "accumulate")?;
                        Ok(Ty::Unit)
                    }
                    other => Err(("accumulate", TypeErrorKind::NotAccumulator(other.to_string()))),
                }
            }
            Expr::Index(a, i) => match self.var(*a, "index")? {
                Ty::Arr(idx, elem) => {
                    self.expect(*i, &idx, "index")?;
                    Ok(*elem)
                }
                other => Err(("index", TypeErrorKind::NotArray(other.to_string()))),
            },
            Expr::RefIndex(a, i) => match self.var(*a, "ref-index")? {
                Ty::Acc(inner) => match *inner {
                    Ty::Arr(idx, elem) => {
                        self.expect(*i, &idx, "ref-index")?;
                        Ok(Ty::acc(*elem))
                    }
                    other => Err(("ref-index", TypeErrorKind::NotArray(other.to_string()))),
                },
                other => Err(("ref-index", TypeErrorKind::NotAccumulator(other.to_string()))),
            },
            Expr::Fst(x) | Expr::Snd(x) => match self.var(*x, "project")? {
                Ty::Pair(a, b) => Ok(if matches!(e, Expr::Fst(_)) { *a } else { *b }),
                other => Err(("project", TypeErrorKind::NotPair(other.to_string()))),
            },
            Expr::RefFst(x) | Expr::RefSnd(x) => match self.var(*x, "ref-project")? {
                Ty::Acc(inner) => match *inner {
                    Ty::Pair(a, b) => Ok(Ty::acc(if matches!(e, Expr::RefFst(_)) { *a } else { *b })),
                    other => Err(("ref-project", TypeErrorKind::NotPair(other.to_string()))),
                },
                other => Err(("ref-project", TypeErrorKind::NotAccumulator(other.to_string()))),
            },
            Expr::Call { func, targs, args } => self.call(*func, targs, args),
            Expr::For { .. } | Expr::Accum { .. } => unreachable!("blocks are handled by expr"),
        }
    }

    fn call(&mut self, func: FuncId, targs: &[Ty], args: &[VarId]) -> R<Ty> {
        let item = self
            .reg
            .get(func)
            .ok_or(("call", TypeErrorKind::UnresolvedCallee(func.0)))?;
        let generics = item.generics();
        if generics.len() != targs.len() {
            return Err((
                "call",
                TypeErrorKind::TypeArgCount {
                    expected: generics.len(),
                    found: targs.len(),
                },
            ));
        }
        let mut subst = BTreeMap::new();
        for ((name, kind), t) in generics.iter().zip(targs) {
            if !self.kind(t, "call")?.is_sub(*kind) {
                return Err((
                    "call",
                    TypeErrorKind::BadTypeArg {
                        ty: t.to_string(),
                        kind: *kind,
                    },
                ));
            }
            subst.insert(name.clone(), t.clone());
        }
        let params = item.param_types();
        if params.len() != args.len() {
            return Err((
                "call",
                TypeErrorKind::ArityMismatch {
                    expected: params.len(),
                    found: args.len(),
                },
            ));
        }
        for (p, a) in params.iter().zip(args) {
            self.expect(*a, &p.subst(&subst), "call")?;
        }
        Ok(item.ret().subst(&subst))
    }
}

/// Check one definition against the typing rules.
pub fn typecheck_function(def: &FuncDef, reg: &Registry) -> Result<(), TypeError> {
    let top = |rule, kind| TypeError {
        func: def.name.clone(),
        at: None,
        rule,
        kind,
    };
    let mut kinds = KindEnv::new();
    for (name, k) in &def.generics {
        kinds.insert(name.clone(), *k);
    }
    let mut ck = Checker {
        reg,
        def,
        kinds,
        env: BTreeMap::new(),
        bound: BTreeSet::new(),
        closed_accs: BTreeSet::new(),
        counter: 0,
    };
    for (v, t) in &def.params {
        ck.kind(t, "def").map_err(|(r, k)| top(r, k))?;
        ck.bind(*v, t.clone(), "def").map_err(|(r, k)| top(r, k))?;
    }
    match ck.kind(&def.ret, "def") {
        Ok(Kind::Type) => {
            return Err(top("def", TypeErrorKind::NonValueResult(def.ret.to_string())));
        }
        Err((r, k)) => return Err(top(r, k)),
        Ok(_) => {}
    }
    let got = ck.block(&def.body)?;
    if got != def.ret {
        if got.contains_acc() {
            return Err(top("def", TypeErrorKind::AccumulatorEscape(ck.name(def.body.result))));
        }
        return Err(top("def", mismatch(&def.ret, &got)));
    }
    Ok(())
}

/// Check call-graph acyclicity, callee resolution, every definition, and custom derivative signatures.
pub fn validate_registry(reg: &Registry) -> Result<(), Vec<RegistryError>> {
    let mut errors = Vec::new();
    for (id, item) in reg.items() {
        if let Item::Def(_) = item {
            for callee in reg.callees(id) {
                if reg.get(callee).is_none() {
                    errors.push(RegistryError::UnresolvedCallee {
                        caller: item.name().to_string(),
                        callee: callee.0,
                    });
                }
            }
        }
    }
    if let Some(cycle) = find_cycle(reg) {
        errors.push(RegistryError::RecursionCycle(
            cycle.iter().map(|f| reg.name(*f).to_string()).collect(),
        ));
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    for (_, item) in reg.items() {
        if let Item::Def(d) = item {
            if let Err(e) = typecheck_function(d, reg) {
                errors.push(e.into());
            }
        }
    }
    for (base, jvp) in reg.custom_jvps() {
        if let Some(e) = check_custom_jvp(reg, base, jvp) {
            errors.push(e);
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// `Some(error)` unless `jvp` has the dual-lifted signature of `base`.
pub fn check_custom_jvp(reg: &Registry, base: FuncId, jvp: FuncId) -> Option<RegistryError> {
    let (Some(b), Some(j)) = (reg.get(base), reg.get(jvp)) else {
        return Some(RegistryError::UnresolvedCallee {
            caller: reg.name(base).to_string(),
            callee: if reg.get(base).is_none() { base.0 } else { jvp.0 },
        });
    };
    let want_params: Vec<Ty> = b.param_types().iter().map(Ty::lift).collect();
    let want_ret = b.ret().lift();
    let ok = j.param_types() == want_params && j.ret() == &want_ret && j.generics() == b.generics();
    if ok {
        None
    } else {
        let params: Vec<String> = want_params.iter().map(|t| t.to_string()).collect();
        Some(RegistryError::BadCustomJvpSignature {
            base: b.name().to_string(),
            jvp: j.name().to_string(),
            expected: format!("({}): {}", params.join(", "), want_ret),
        })
    }
}

/// Some cycle of the call graph, listed from its smallest member.
fn find_cycle(reg: &Registry) -> Option<Vec<FuncId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn dfs(reg: &Registry, f: FuncId, marks: &mut [Mark], path: &mut Vec<FuncId>) -> Option<Vec<FuncId>> {
        marks[f.index()] = Mark::Active;
        path.push(f);
        for g in reg.callees(f) {
            if g.index() >= marks.len() {
                continue;
            }
            match marks[g.index()] {
                Mark::Active => {
                    let start = path.iter().position(|&p| p == g).unwrap();
                    return Some(path[start..].to_vec());
                }
                Mark::New => {
                    if let Some(c) = dfs(reg, g, marks, path) {
                        return Some(c);
                    }
                }
                Mark::Done => {}
            }
        }
        path.pop();
        marks[f.index()] = Mark::Done;
        None
    }
    let mut marks = vec![Mark::New; reg.len()];
    for f in reg.ids() {
        if marks[f.index()] == Mark::New {
            if let Some(c) = dfs(reg, f, &mut marks, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}

/// Every binary operator paired with its operand and result types.
pub fn binary_signature(op: BinaryOp) -> (Ty, Ty) {
    if op.is_logic() {
        (Ty::Bool, Ty::Bool)
    } else if op.is_comparison() {
        (Ty::Real, Ty::Bool)
    } else {
        (Ty::Real, Ty::Real)
    }
}
