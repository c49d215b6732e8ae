use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::record::RecordType;
use super::BuildError;
use crate::exec::{compile, Callable, CompileError};
use crate::ir::typeck::{check_custom_jvp, typecheck_function};
use crate::ir::{
    kind_of, BinaryOp, Block, Expr, FuncDef, FuncId, HostFn, Item, Kind, KindEnv, Let, OpaqueDef, Origin, Registry,
    Ty, UnaryOp, VarId,
};

static NEXT_CTX: AtomicU64 = AtomicU64::new(1);

/// A traced value: a variable of the definition under construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Handle {
    var: VarId,
    ty: Ty,
    ctx: u64,
}

impl Handle {
    pub fn ty(&self) -> &Ty {
        &self.ty
    }

    pub fn var(&self) -> VarId {
        self.var
    }
}

/// An argument to a primitive: a handle, or a host number lifted to a constant.
#[derive(Clone, Debug)]
pub enum Operand {
    Handle(Handle),
    Real(f64),
    Fin(usize),
}

impl From<Handle> for Operand {
    fn from(h: Handle) -> Operand {
        Operand::Handle(h)
    }
}

impl From<&Handle> for Operand {
    fn from(h: &Handle) -> Operand {
        Operand::Handle(h.clone())
    }
}

impl From<f64> for Operand {
    fn from(c: f64) -> Operand {
        Operand::Real(c)
    }
}

impl From<usize> for Operand {
    fn from(m: usize) -> Operand {
        Operand::Fin(m)
    }
}

/// A registered function: traced definition or opaque host routine.
#[derive(Clone, Debug, PartialEq)]
pub struct FuncHandle {
    pub id: FuncId,
    pub generics: Vec<(String, Kind)>,
    pub params: Vec<Ty>,
    pub ret: Ty,
    pub opaque: bool,
}

struct OpenBlock {
    lets: Vec<Let>,
    bound: Vec<VarId>,
    consts: Vec<(u64, VarId)>,
}

struct Frame {
    ctx: u64,
    name: String,
    generics: Vec<(String, Kind)>,
    params: Vec<(VarId, Ty)>,
    ret: Ty,
    blocks: Vec<OpenBlock>,
    types: Vec<Ty>,
    live: Vec<bool>,
    is_acc: Vec<bool>,
    names: BTreeMap<VarId, String>,
}

impl Frame {
    fn kinds(&self) -> KindEnv {
        self.generics.iter().cloned().collect()
    }
}

type R<T> = Result<T, BuildError>;

fn type_error<T>(rule: &'static str, message: impl Into<String>) -> R<T> {
    Err(BuildError::Type {
        rule,
        message: message.into(),
    })
}

/// Records host-language calls as IR definitions in a registry it owns.
pub struct Tracer {
    reg: Registry,
    stack: Vec<Frame>,
}

impl Default for Tracer {
    fn default() -> Self {
        Tracer::new()
    }
}

impl Tracer {
    /// A tracer over a registry with the standard host routines bound.
    pub fn new() -> Tracer {
        Tracer::with_registry(Registry::with_std_hosts())
    }

    pub fn with_registry(reg: Registry) -> Tracer {
        Tracer {
            reg,
            stack: Vec::new(),
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.reg
    }

    pub fn registry_mut(&mut self) -> &mut Registry {
        &mut self.reg
    }

    pub fn into_registry(self) -> Registry {
        self.reg
    }

    pub fn compile(&self, f: &FuncHandle) -> Result<Callable, CompileError> {
        compile(&self.reg, f.id)
    }

    pub fn is_tracing(&self) -> bool {
        !self.stack.is_empty()
    }

    fn frame(&mut self) -> R<&mut Frame> {
        self.stack.last_mut().ok_or(BuildError::NoActiveContext)
    }

    fn frame_ref(&self) -> R<&Frame> {
        self.stack.last().ok_or(BuildError::NoActiveContext)
    }

    /// Fail unless `h` belongs to the active definition and is still in scope.
    pub fn check(&self, h: &Handle) -> R<()> {
        let f = self.frame_ref()?;
        if h.ctx != f.ctx {
            return Err(BuildError::Escape);
        }
        if !f.live[h.var.index()] {
            return Err(if f.is_acc[h.var.index()] {
                BuildError::AccumulatorEscape
            } else {
                BuildError::OutOfScope
            });
        }
        Ok(())
    }

    fn fresh(&mut self, ty: Ty) -> R<Handle> {
        let f = self.frame()?;
        let var = VarId(f.types.len() as u32);
        f.types.push(ty.clone());
        f.live.push(true);
        f.is_acc.push(matches!(ty, Ty::Acc(_)));
        Ok(Handle { var, ty, ctx: f.ctx })
    }

    fn emit(&mut self, ty: Ty, expr: Expr) -> R<Handle> {
        let h = self.fresh(ty.clone())?;
        let block = self.frame()?.blocks.last_mut().expect("open block");
        block.lets.push(Let { var: h.var, ty, expr });
        block.bound.push(h.var);
        Ok(h)
    }

    /// Attach a debug name, shown when printing.
    pub fn name(&mut self, h: &Handle, name: &str) -> R<()> {
        self.check(h)?;
        self.frame()?.names.insert(h.var, name.to_string());
        Ok(())
    }

    pub fn real(&mut self, c: f64) -> R<Handle> {
        let bits = c.to_bits();
        let f = self.frame()?;
        for b in f.blocks.iter().rev() {
            if let Some((_, v)) = b.consts.iter().find(|(k, _)| *k == bits) {
                return Ok(Handle {
                    var: *v,
                    ty: Ty::Real,
                    ctx: f.ctx,
                });
            }
        }
        let h = self.emit(Ty::Real, Expr::real(c))?;
        let f = self.frame()?;
        f.blocks.last_mut().unwrap().consts.push((bits, h.var));
        Ok(h)
    }

    pub fn unit(&mut self) -> R<Handle> {
        self.emit(Ty::Unit, Expr::Unit)
    }

    pub fn boolean(&mut self, b: bool) -> R<Handle> {
        self.emit(Ty::Bool, if b { Expr::True } else { Expr::False })
    }

    /// The index literal `m` of type `Fin(n)`.
    pub fn fin(&mut self, m: usize, n: usize) -> R<Handle> {
        if m >= n {
            return type_error("fin", format!("literal {m} does not fit index type {n}"));
        }
        self.emit(Ty::Fin(n), Expr::Fin(m))
    }

    fn operand(&mut self, o: impl Into<Operand>) -> R<Handle> {
        match o.into() {
            Operand::Handle(h) => {
                self.check(&h)?;
                Ok(h)
            }
            Operand::Real(c) => self.real(c),
            Operand::Fin(m) => type_error("fin", format!("index literal {m} needs a known index type")),
        }
    }

    fn expect(&self, h: &Handle, ty: &Ty, rule: &'static str) -> R<()> {
        if &h.ty == ty {
            Ok(())
        } else {
            type_error(rule, format!("expected `{ty}`, found `{}`", h.ty))
        }
    }

    pub fn unary(&mut self, op: UnaryOp, x: impl Into<Operand>) -> R<Handle> {
        let x = self.operand(x)?;
        let ty = if op == UnaryOp::Not { Ty::Bool } else { Ty::Real };
        self.expect(&x, &ty, "unary")?;
        self.emit(ty, Expr::Unary(op, x.var))
    }

    pub fn binary(&mut self, op: BinaryOp, x: impl Into<Operand>, y: impl Into<Operand>) -> R<Handle> {
        let (arg, ret) = crate::ir::typeck::binary_signature(op);
        let x = self.operand(x)?;
        let y = self.operand(y)?;
        self.expect(&x, &arg, "binary")?;
        self.expect(&y, &arg, "binary")?;
        self.emit(ret, Expr::Binary(op, x.var, y.var))
    }

    pub fn select(&mut self, p: impl Into<Operand>, x: impl Into<Operand>, y: impl Into<Operand>) -> R<Handle> {
        let p = self.operand(p)?;
        let x = self.operand(x)?;
        let y = self.operand(y)?;
        self.expect(&p, &Ty::Bool, "select")?;
        self.expect(&y, &x.ty, "select")?;
        self.emit(x.ty.clone(), Expr::Select(p.var, x.var, y.var))
    }

    pub fn pair(&mut self, a: impl Into<Operand>, b: impl Into<Operand>) -> R<Handle> {
        let a = self.operand(a)?;
        let b = self.operand(b)?;
        let ty = Ty::pair(a.ty.clone(), b.ty.clone());
        self.value_kind(&ty, "pair")?;
        self.emit(ty, Expr::Pair(a.var, b.var))
    }

    fn value_kind(&self, ty: &Ty, rule: &'static str) -> R<()> {
        match kind_of(ty, &self.frame_ref()?.kinds()) {
            Ok(Kind::Index | Kind::Value) => Ok(()),
            Ok(Kind::Type) => Err(BuildError::AccumulatorEscape),
            Err(e) => type_error(rule, e.to_string()),
        }
    }

    pub fn fst(&mut self, x: &Handle) -> R<Handle> {
        self.check(x)?;
        match x.ty.clone() {
            Ty::Pair(a, _) => self.emit(*a, Expr::Fst(x.var)),
            t => type_error("fst", format!("`{t}` is not a pair")),
        }
    }

    pub fn snd(&mut self, x: &Handle) -> R<Handle> {
        self.check(x)?;
        match x.ty.clone() {
            Ty::Pair(_, b) => self.emit(*b, Expr::Snd(x.var)),
            t => type_error("snd", format!("`{t}` is not a pair")),
        }
    }

    fn index_operand(&mut self, index_ty: &Ty, i: Operand) -> R<Handle> {
        match (i, index_ty) {
            (Operand::Fin(m), Ty::Fin(n)) => self.fin(m, *n),
            (i, _) => {
                let h = self.operand(i)?;
                self.expect(&h, index_ty, "index")?;
                Ok(h)
            }
        }
    }

    pub fn index(&mut self, a: &Handle, i: impl Into<Operand>) -> R<Handle> {
        self.check(a)?;
        let Ty::Arr(idx, elem) = a.ty.clone() else {
            return type_error("index", format!("`{}` is not an array", a.ty));
        };
        let i = self.index_operand(&idx, i.into())?;
        self.emit(*elem, Expr::Index(a.var, i.var))
    }

    /// Array literal; all items must share a type.
    pub fn vec(&mut self, items: &[Operand]) -> R<Handle> {
        let hs = items
            .iter()
            .map(|o| self.operand(o.clone()))
            .collect::<R<Vec<_>>>()?;
        let Some(first) = hs.first() else {
            return type_error("array", "an empty array literal needs an element type; use `vec_of`");
        };
        let elem = first.ty.clone();
        self.vec_of(elem, &hs)
    }

    pub fn vec_of(&mut self, elem: Ty, items: &[Handle]) -> R<Handle> {
        for h in items {
            self.check(h)?;
            self.expect(h, &elem, "array")?;
        }
        let ty = Ty::vec(items.len(), elem);
        self.value_kind(&ty, "array")?;
        self.emit(ty, Expr::Array(items.iter().map(|h| h.var).collect()))
    }

    pub fn accumulate(&mut self, acc: &Handle, v: impl Into<Operand>) -> R<Handle> {
        self.check(acc)?;
        let v = self.operand(v)?;
        let Ty::Acc(inner) = acc.ty.clone() else {
            return type_error("accumulate", format!("`{}` is not an accumulator", acc.ty));
        };
        self.expect(&v, &inner, "accumulate")?;
        self.emit(Ty::Unit, Expr::Accumulate(acc.var, v.var))
    }

    pub fn ref_index(&mut self, acc: &Handle, i: impl Into<Operand>) -> R<Handle> {
        self.check(acc)?;
        let Ty::Acc(inner) = acc.ty.clone() else {
            return type_error("ref-index", format!("`{}` is not an accumulator", acc.ty));
        };
        let Ty::Arr(idx, elem) = *inner else {
            return type_error("ref-index", format!("`{}` is not an array accumulator", acc.ty));
        };
        let i = self.index_operand(&idx, i.into())?;
        self.emit(Ty::acc(*elem), Expr::RefIndex(acc.var, i.var))
    }

    pub fn ref_fst(&mut self, acc: &Handle) -> R<Handle> {
        self.check(acc)?;
        match acc.ty.clone() {
            Ty::Acc(inner) => match *inner {
                Ty::Pair(a, _) => self.emit(Ty::acc(*a), Expr::RefFst(acc.var)),
                t => type_error("ref-fst", format!("`&{t}` is not a pair accumulator")),
            },
            t => type_error("ref-fst", format!("`{t}` is not an accumulator")),
        }
    }

    pub fn ref_snd(&mut self, acc: &Handle) -> R<Handle> {
        self.check(acc)?;
        match acc.ty.clone() {
            Ty::Acc(inner) => match *inner {
                Ty::Pair(_, b) => self.emit(Ty::acc(*b), Expr::RefSnd(acc.var)),
                t => type_error("ref-snd", format!("`&{t}` is not a pair accumulator")),
            },
            t => type_error("ref-snd", format!("`{t}` is not an accumulator")),
        }
    }

    fn open(&mut self) -> R<()> {
        self.frame()?.blocks.push(OpenBlock {
            lets: Vec::new(),
            bound: Vec::new(),
            consts: Vec::new(),
        });
        Ok(())
    }

    fn close(&mut self, result: &Handle, extra: &[VarId]) -> R<Block> {
        let f = self.frame()?;
        let b = f.blocks.pop().expect("open block");
        for v in b.bound.iter().chain(extra) {
            f.live[v.index()] = false;
        }
        Ok(Block {
            lets: b.lets,
            result: result.var,
        })
    }

    /// Build an array by tracing `body` once with a symbolic index.
    pub fn array(&mut self, n: impl Into<Ty>, body: impl FnOnce(&mut Tracer, Handle) -> R<Handle>) -> R<Handle> {
        let index_ty = n.into();
        if kind_of(&index_ty, &self.frame_ref()?.kinds()) != Ok(Kind::Index) {
            return type_error("for", format!("`{index_ty}` is not an index type"));
        }
        self.open()?;
        let i = self.fresh(index_ty.clone())?;
        let out = match body(self, i.clone()).and_then(|r| self.check(&r).map(|_| r)) {
            Ok(r) => r,
            Err(e) => {
                self.frame()?.blocks.pop();
                return Err(e);
            }
        };
        let elem = out.ty.clone();
        let block = self.close(&out, &[i.var])?;
        self.value_kind(&elem, "for")?;
        let var = self.emit(Ty::arr(index_ty.clone(), elem), Expr::Unit)?;
        self.replace_last(Expr::For {
            index: i.var,
            index_ty,
            body: block,
        })?;
        Ok(var)
    }

    fn replace_last(&mut self, expr: Expr) -> R<()> {
        let b = self.frame()?.blocks.last_mut().expect("open block");
        b.lets.last_mut().expect("let").expr = expr;
        Ok(())
    }

    /// Accumulate into a fresh zeroed accumulator shaped like `from`; yields `(decayed, result)`.
    pub fn accum(&mut self, from: &Handle, body: impl FnOnce(&mut Tracer, Handle) -> R<Handle>) -> R<Handle> {
        self.check(from)?;
        self.value_kind(&from.ty, "accum")?;
        self.open()?;
        let acc = self.fresh(Ty::acc(from.ty.clone()))?;
        let out = match body(self, acc.clone()).and_then(|r| self.check(&r).map(|_| r)) {
            Ok(r) => r,
            Err(e) => {
                self.frame()?.blocks.pop();
                return Err(e);
            }
        };
        let res_ty = out.ty.clone();
        let block = self.close(&out, &[acc.var])?;
        if res_ty.contains_acc() {
            return Err(BuildError::AccumulatorEscape);
        }
        let var = self.emit(Ty::pair(from.ty.clone(), res_ty), Expr::Unit)?;
        self.replace_last(Expr::Accum {
            acc: acc.var,
            from: from.var,
            body: block,
        })?;
        Ok(var)
    }

    /// `sum over i < n of body(i)`, traced as an accumulator over a loop.
    pub fn sum(&mut self, n: impl Into<Ty>, body: impl FnOnce(&mut Tracer, Handle) -> R<Handle>) -> R<Handle> {
        let n = n.into();
        let z = self.real(0.0)?;
        let t = self.accum(&z, |t, a| {
            t.array(n, |t, i| {
                let x = body(t, i)?;
                t.accumulate(&a, &x)
            })
        })?;
        self.fst(&t)
    }

    pub fn record(&mut self, rec: &RecordType, values: &[Operand]) -> R<Handle> {
        if values.len() != rec.fields.len() {
            return Err(BuildError::ArityMismatch {
                expected: rec.fields.len(),
                found: values.len(),
            });
        }
        let mut hs = Vec::new();
        for (v, (_, t)) in values.iter().zip(&rec.fields) {
            let h = self.operand(v.clone())?;
            self.expect(&h, t, "record")?;
            hs.push(h);
        }
        let mut acc = hs.pop();
        while let Some(h) = hs.pop() {
            acc = Some(self.pair(&h, &acc.unwrap())?);
        }
        match acc {
            Some(h) => Ok(h),
            None => self.unit(),
        }
    }

    pub fn field(&mut self, h: &Handle, rec: &RecordType, name: &str) -> R<Handle> {
        self.expect(h, &rec.ty(), "field")?;
        let k = rec.position(name).ok_or_else(|| BuildError::UnknownField(name.to_string()))?;
        let last = rec.fields.len() - 1;
        let mut cur = h.clone();
        for _ in 0..k {
            cur = self.snd(&cur)?;
        }
        if k < last {
            cur = self.fst(&cur)?;
        }
        Ok(cur)
    }

    /// Call with index generics inferred from argument types.
    pub fn call(&mut self, f: &FuncHandle, args: &[Operand]) -> R<Handle> {
        let hs = args.iter().map(|a| self.operand(a.clone())).collect::<R<Vec<_>>>()?;
        if hs.len() != f.params.len() {
            return Err(BuildError::ArityMismatch {
                expected: f.params.len(),
                found: hs.len(),
            });
        }
        let mut map = BTreeMap::new();
        for (p, h) in f.params.iter().zip(&hs) {
            unify(p, &h.ty, &f.generics, &mut map)?;
        }
        let mut targs = Vec::new();
        for (g, _) in &f.generics {
            match map.get(g) {
                Some(t) => targs.push(t.clone()),
                None => return Err(BuildError::InferenceFailure(g.clone())),
            }
        }
        self.call_typed(f, targs, hs)
    }

    /// Call with explicit type arguments.
    pub fn call_with(&mut self, f: &FuncHandle, targs: &[Ty], args: &[Operand]) -> R<Handle> {
        let hs = args.iter().map(|a| self.operand(a.clone())).collect::<R<Vec<_>>>()?;
        if hs.len() != f.params.len() {
            return Err(BuildError::ArityMismatch {
                expected: f.params.len(),
                found: hs.len(),
            });
        }
        self.call_typed(f, targs.to_vec(), hs)
    }

    fn call_typed(&mut self, f: &FuncHandle, targs: Vec<Ty>, hs: Vec<Handle>) -> R<Handle> {
        if targs.len() != f.generics.len() {
            return type_error("call", format!("expected {} type arguments", f.generics.len()));
        }
        let kinds = self.frame_ref()?.kinds();
        let mut subst = BTreeMap::new();
        for ((g, k), t) in f.generics.iter().zip(&targs) {
            match kind_of(t, &kinds) {
                Ok(tk) if tk.is_sub(*k) => {}
                _ => return type_error("call", format!("type argument `{t}` does not satisfy `{k}`")),
            }
            subst.insert(g.clone(), t.clone());
        }
        for (p, h) in f.params.iter().zip(&hs) {
            self.expect(h, &p.subst(&subst), "call")?;
        }
        self.emit(
            f.ret.subst(&subst),
            Expr::Call {
                func: f.id,
                targs,
                args: hs.iter().map(|h| h.var).collect(),
            },
        )
    }

    /// Trace a new definition; `body` runs exactly once, with one handle per parameter.
    pub fn define_fn(
        &mut self,
        name: &str,
        params: &[Ty],
        ret: Ty,
        body: impl FnOnce(&mut Tracer, &[Handle]) -> R<Handle>,
    ) -> R<FuncHandle> {
        self.define_generic_fn(name, &[], params, ret, body)
    }

    pub fn define_generic_fn(
        &mut self,
        name: &str,
        generics: &[(&str, Kind)],
        params: &[Ty],
        ret: Ty,
        body: impl FnOnce(&mut Tracer, &[Handle]) -> R<Handle>,
    ) -> R<FuncHandle> {
        let generics: Vec<(String, Kind)> = generics.iter().map(|(n, k)| (n.to_string(), *k)).collect();
        self.define_inner(name, generics, params, ret, None, body)
    }

    /// Register a definition produced by a program transform; the result is typechecked.
    pub(crate) fn define_derived(
        &mut self,
        name: &str,
        generics: Vec<(String, Kind)>,
        params: &[Ty],
        ret: Ty,
        origin: Origin,
        body: impl FnOnce(&mut Tracer, &[Handle]) -> R<Handle>,
    ) -> R<FuncHandle> {
        self.define_inner(name, generics, params, ret, Some(origin), body)
    }

    fn define_inner(
        &mut self,
        name: &str,
        generics: Vec<(String, Kind)>,
        params: &[Ty],
        ret: Ty,
        origin: Option<Origin>,
        body: impl FnOnce(&mut Tracer, &[Handle]) -> R<Handle>,
    ) -> R<FuncHandle> {
        let kinds: KindEnv = generics.iter().cloned().collect();
        for t in params {
            kind_of(t, &kinds).map_err(|e| BuildError::Type {
                rule: "def",
                message: e.to_string(),
            })?;
        }
        match kind_of(&ret, &kinds) {
            Ok(Kind::Type) => return Err(BuildError::AccumulatorEscape),
            Err(e) => return type_error("def", e.to_string()),
            Ok(_) => {}
        }
        self.stack.push(Frame {
            ctx: NEXT_CTX.fetch_add(1, Ordering::Relaxed),
            name: name.to_string(),
            generics,
            params: Vec::new(),
            ret: ret.clone(),
            blocks: vec![OpenBlock {
                lets: Vec::new(),
                bound: Vec::new(),
                consts: Vec::new(),
            }],
            types: Vec::new(),
            live: Vec::new(),
            is_acc: Vec::new(),
            names: BTreeMap::new(),
        });
        let result = (|| {
            let mut hs = Vec::new();
            for t in params {
                let h = self.fresh(t.clone())?;
                self.frame()?.params.push((h.var, t.clone()));
                hs.push(h);
            }
            let out = body(self, &hs)?;
            self.check(&out)?;
            if out.ty != ret {
                if out.ty.contains_acc() {
                    return Err(BuildError::AccumulatorEscape);
                }
                return type_error("def", format!("result is `{}`, declared `{ret}`", out.ty));
            }
            Ok(out)
        })();
        let frame = self.stack.pop().expect("frame");
        let out = result?;
        let mut frame = frame;
        let top = frame.blocks.pop().expect("body block");
        let def = FuncDef {
            name: frame.name,
            generics: frame.generics,
            params: frame.params,
            ret: frame.ret,
            body: Block {
                lets: top.lets,
                result: out.var,
            },
            names: frame.names,
        }
        .normalize();
        let handle = FuncHandle {
            id: FuncId(0),
            generics: def.generics.clone(),
            params: def.param_types(),
            ret: def.ret.clone(),
            opaque: false,
        };
        let id = match origin {
            None => self.reg.add_def(def),
            Some(origin) => {
                typecheck_function(&def, &self.reg).map_err(|e| BuildError::Type {
                    rule: "derived",
                    message: e.to_string(),
                })?;
                self.reg.add_derived(def, origin)
            }
        };
        Ok(FuncHandle { id, ..handle })
    }

    /// A handle for an already registered function.
    pub fn func_handle(&self, id: FuncId) -> Option<FuncHandle> {
        let item = self.reg.get(id)?;
        Some(FuncHandle {
            id,
            generics: item.generics().to_vec(),
            params: item.param_types(),
            ret: item.ret().clone(),
            opaque: matches!(item, Item::Opaque(_)),
        })
    }

    /// Declare a host routine already bound in the registry under `routine`.
    pub fn define_opaque(&mut self, name: &str, params: &[Ty], ret: Ty, routine: &str) -> R<FuncHandle> {
        if params.iter().chain([&ret]).any(|t| *t != Ty::Real) {
            return Err(BuildError::NonScalarOpaque);
        }
        let id = self.reg.add_opaque(OpaqueDef {
            name: name.to_string(),
            params: params.to_vec(),
            ret: ret.clone(),
            routine: routine.to_string(),
        });
        Ok(FuncHandle {
            id,
            generics: Vec::new(),
            params: params.to_vec(),
            ret,
            opaque: true,
        })
    }

    /// Declare a host routine and bind its implementation.
    pub fn define_opaque_with(&mut self, name: &str, params: &[Ty], ret: Ty, f: HostFn) -> R<FuncHandle> {
        let routine = format!("host_{name}_{}", self.reg.len());
        self.reg.bind_host(&routine, f);
        self.define_opaque(name, params, ret, &routine)
    }

    /// Use `jvp` as the derivative of `f` instead of transforming its body.
    pub fn set_jvp(&mut self, f: &FuncHandle, jvp: &FuncHandle) -> R<()> {
        if let Some(e) = check_custom_jvp(&self.reg, f.id, jvp.id) {
            return Err(BuildError::BadCustomJvpSignature(e.to_string()));
        }
        self.reg.set_custom_jvp(f.id, jvp.id);
        Ok(())
    }
}

/// Bind generic names in `param` by matching it against `arg`.
pub(crate) fn unify(param: &Ty, arg: &Ty, generics: &[(String, Kind)], map: &mut BTreeMap<String, Ty>) -> R<()> {
    match (param, arg) {
        (Ty::Var(g), _) if generics.iter().any(|(n, _)| n == g) => match map.get(g) {
            Some(t) if t != arg => type_error("call", format!("`{g}` is both `{t}` and `{arg}`")),
            Some(_) => Ok(()),
            None => {
                map.insert(g.clone(), arg.clone());
                Ok(())
            }
        },
        (Ty::Acc(a), Ty::Acc(b)) => unify(a, b, generics, map),
        (Ty::Arr(i, e), Ty::Arr(j, f)) => {
            unify(i, j, generics, map)?;
            unify(e, f, generics, map)
        }
        (Ty::Pair(a, b), Ty::Pair(c, d)) => {
            unify(a, c, generics, map)?;
            unify(b, d, generics, map)
        }
        (p, a) if p == a => Ok(()),
        (p, a) => type_error("call", format!("expected `{p}`, found `{a}`")),
    }
}

macro_rules! unary_ops {
    ($($name:ident => $op:ident),* $(,)?) => {
        impl Tracer {
            $(pub fn $name(&mut self, x: impl Into<Operand>) -> R<Handle> {
                self.unary(UnaryOp::$op, x)
            })*
        }
    };
}

macro_rules! binary_ops {
    ($($name:ident => $op:ident),* $(,)?) => {
        impl Tracer {
            $(pub fn $name(&mut self, x: impl Into<Operand>, y: impl Into<Operand>) -> R<Handle> {
                self.binary(BinaryOp::$op, x, y)
            })*
        }
    };
}

unary_ops! {
    not => Not, neg => Neg, abs => Abs, sgn => Sgn,
    ceil => Ceil, floor => Floor, trunc => Trunc, sqrt => Sqrt,
}

binary_ops! {
    and => And, or => Or, iff => Iff, xor => Xor,
    neq => Neq, lt => Lt, leq => Leq, eq => Eq, gt => Gt, geq => Geq,
    add => Add, sub => Sub, mul => Mul, div => Div,
}
