use std::collections::BTreeMap;
use std::sync::Mutex;

use thiserror::Error;

use super::value::Shape;
use crate::ir::{
    typecheck_function, BinaryOp, Block, Expr, FuncId, HostFn, Item, Registry, Ty, TypeError, UnaryOp,
};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("no function #{0}")]
    UnknownFunction(u32),
    #[error("`{0}` is opaque; compile a definition that calls it instead")]
    OpaqueEntry(String),
    #[error("generic `{generic}` of `{func}` has no size binding")]
    UnboundIndexGeneric { func: String, generic: String },
    #[error("opaque `{opaque}` needs host routine `{routine}`")]
    MissingHostRoutine { opaque: String, routine: String },
    #[error("`{func}` has no host representation for type `{ty}`")]
    Unmarshallable { func: String, ty: String },
    #[error("shape does not match `{expected}`")]
    ShapeMismatch { expected: String },
    #[error(transparent)]
    Type(#[from] TypeError),
}

pub(crate) type Slot = u32;

#[derive(Clone, Debug)]
pub(crate) enum LExpr {
    Unit,
    Bool(bool),
    Real(f64),
    Fin(usize),
    Array(Vec<Slot>),
    Pair(Slot, Slot),
    Unary(UnaryOp, Slot),
    Binary(BinaryOp, Slot, Slot),
    Select(Slot, Slot, Slot),
    Accumulate(Slot, Slot),
    Index(Slot, Slot),
    Fst(Slot),
    Snd(Slot),
    RefIndex(Slot, Slot),
    RefFst(Slot),
    RefSnd(Slot),
    Call { inst: usize, args: Vec<Slot> },
    Host { routine: usize, args: Vec<Slot> },
    For { n: usize, index: Slot, body: LBlock },
    Accum { acc: Slot, from: Slot, body: LBlock },
}

#[derive(Clone, Debug)]
pub(crate) struct LBlock {
    pub lets: Vec<(Slot, LExpr)>,
    pub result: Slot,
}

impl LBlock {
    fn let_count(&self) -> usize {
        self.lets
            .iter()
            .map(|(_, e)| {
                1 + match e {
                    LExpr::For { body, .. } | LExpr::Accum { body, .. } => body.let_count(),
                    _ => 0,
                }
            })
            .sum()
    }
}

/// One definition specialised to concrete type arguments.
#[derive(Clone, Debug)]
pub(crate) struct Instance {
    pub name: String,
    pub targs: Vec<Ty>,
    pub params: Vec<Slot>,
    pub slots: usize,
    pub body: LBlock,
    pub static_lets: usize,
}

/// An executable, monomorphized function with host marshalling and op counters.
pub struct Callable {
    pub(crate) instances: Vec<Instance>,
    pub(crate) hosts: Vec<(String, HostFn)>,
    pub(crate) params: Vec<Shape>,
    pub(crate) ret: Shape,
    pub(crate) last_counts: Mutex<Vec<u64>>,
}

struct Lowerer<'a> {
    reg: &'a Registry,
    instances: Vec<Option<Instance>>,
    keys: BTreeMap<(FuncId, Vec<Ty>), usize>,
    hosts: Vec<(String, HostFn)>,
    host_index: BTreeMap<String, usize>,
}

impl Lowerer<'_> {
    fn instance(&mut self, f: FuncId, targs: Vec<Ty>) -> Result<usize, CompileError> {
        if let Some(&k) = self.keys.get(&(f, targs.clone())) {
            return Ok(k);
        }
        let def = match self.reg.get(f) {
            Some(Item::Def(d)) => d,
            Some(Item::Opaque(o)) => return Err(CompileError::OpaqueEntry(o.name.clone())),
            None => return Err(CompileError::UnknownFunction(f.0)),
        };
        typecheck_function(def, self.reg)?;
        let k = self.instances.len();
        self.instances.push(None);
        self.keys.insert((f, targs.clone()), k);
        let subst: BTreeMap<String, Ty> = def
            .generics
            .iter()
            .map(|(n, _)| n.clone())
            .zip(targs.iter().cloned())
            .collect();
        let body = self.block(&def.body, &subst, &def.name)?;
        self.instances[k] = Some(Instance {
            name: def.name.clone(),
            targs,
            params: def.params.iter().map(|(v, _)| v.0).collect(),
            slots: def.var_bound() as usize,
            static_lets: body.let_count(),
            body,
        });
        Ok(k)
    }

    fn block(&mut self, b: &Block, subst: &BTreeMap<String, Ty>, func: &str) -> Result<LBlock, CompileError> {
        let mut lets = Vec::with_capacity(b.lets.len());
        for l in &b.lets {
            lets.push((l.var.0, self.expr(&l.expr, subst, func)?));
        }
        Ok(LBlock {
            lets,
            result: b.result.0,
        })
    }

    fn size(&self, ty: &Ty, subst: &BTreeMap<String, Ty>, func: &str) -> Result<usize, CompileError> {
        match ty.subst(subst) {
            Ty::Fin(n) => Ok(n),
            other => Err(CompileError::UnboundIndexGeneric {
                func: func.to_string(),
                generic: other.to_string(),
            }),
        }
    }

    fn expr(&mut self, e: &Expr, subst: &BTreeMap<String, Ty>, func: &str) -> Result<LExpr, CompileError> {
        Ok(match e {
            Expr::Unit => LExpr::Unit,
            Expr::True => LExpr::Bool(true),
            Expr::False => LExpr::Bool(false),
            Expr::Const(c) => LExpr::Real(c.0),
            Expr::Fin(m) => LExpr::Fin(*m),
            Expr::Array(xs) => LExpr::Array(xs.iter().map(|v| v.0).collect()),
            Expr::Pair(a, b) => LExpr::Pair(a.0, b.0),
            Expr::Unary(op, x) => LExpr::Unary(*op, x.0),
            Expr::Binary(op, x, y) => LExpr::Binary(*op, x.0, y.0),
            Expr::Select(p, x, y) => LExpr::Select(p.0, x.0, y.0),
            Expr::Accumulate(x, y) => LExpr::Accumulate(x.0, y.0),
            Expr::Index(a, i) => LExpr::Index(a.0, i.0),
            Expr::Fst(x) => LExpr::Fst(x.0),
            Expr::Snd(x) => LExpr::Snd(x.0),
            Expr::RefIndex(a, i) => LExpr::RefIndex(a.0, i.0),
            Expr::RefFst(x) => LExpr::RefFst(x.0),
            Expr::RefSnd(x) => LExpr::RefSnd(x.0),
            Expr::Call { func: g, targs, args } => {
                let args = args.iter().map(|v| v.0).collect();
                match self.reg.get(*g) {
                    Some(Item::Opaque(o)) => {
                        let routine = match self.host_index.get(&o.routine) {
                            Some(&r) => r,
                            None => {
                                let Some(h) = self.reg.host(&o.routine) else {
                                    return Err(CompileError::MissingHostRoutine {
                                        opaque: o.name.clone(),
                                        routine: o.routine.clone(),
                                    });
                                };
                                self.hosts.push((o.routine.clone(), h.clone()));
                                self.host_index.insert(o.routine.clone(), self.hosts.len() - 1);
                                self.hosts.len() - 1
                            }
                        };
                        LExpr::Host { routine, args }
                    }
                    _ => {
                        let targs: Vec<Ty> = targs.iter().map(|t| t.subst(subst)).collect();
                        let inst = self.instance(*g, targs)?;
                        LExpr::Call { inst, args }
                    }
                }
            }
            Expr::For { index, index_ty, body } => LExpr::For {
                n: self.size(index_ty, subst, func)?,
                index: index.0,
                body: self.block(body, subst, func)?,
            },
            Expr::Accum { acc, from, body } => LExpr::Accum {
                acc: acc.0,
                from: from.0,
                body: self.block(body, subst, func)?,
            },
        })
    }
}

/// Compile a definition without generics.
pub fn compile(reg: &Registry, f: FuncId) -> Result<Callable, CompileError> {
    if let Some(Item::Def(d)) = reg.get(f) {
        if let Some((g, _)) = d.generics.first() {
            return Err(CompileError::UnboundIndexGeneric {
                func: d.name.clone(),
                generic: g.clone(),
            });
        }
    }
    compile_with(reg, f, &[])
}

/// Compile a definition at the given type arguments.
pub fn compile_with(reg: &Registry, f: FuncId, targs: &[Ty]) -> Result<Callable, CompileError> {
    if let Some(Item::Def(d)) = reg.get(f) {
        if let Some((g, _)) = d.generics.get(targs.len()) {
            return Err(CompileError::UnboundIndexGeneric {
                func: d.name.clone(),
                generic: g.clone(),
            });
        }
    }
    let mut low = Lowerer {
        reg,
        instances: Vec::new(),
        keys: BTreeMap::new(),
        hosts: Vec::new(),
        host_index: BTreeMap::new(),
    };
    let entry = low.instance(f, targs.to_vec())?;
    debug_assert_eq!(entry, 0);
    let def = reg.def(f).expect("entry is a definition");
    let subst: BTreeMap<String, Ty> = def
        .generics
        .iter()
        .map(|(n, _)| n.clone())
        .zip(targs.iter().cloned())
        .collect();
    let shape = |t: &Ty| {
        Shape::of(&t.subst(&subst)).ok_or_else(|| CompileError::Unmarshallable {
            func: def.name.clone(),
            ty: t.to_string(),
        })
    };
    let params = def.params.iter().map(|(_, t)| shape(t)).collect::<Result<_, _>>()?;
    let ret = shape(&def.ret)?;
    let n = low.instances.len();
    Ok(Callable {
        instances: low.instances.into_iter().map(|i| i.expect("lowered")).collect(),
        hosts: low.hosts,
        params,
        ret,
        last_counts: Mutex::new(vec![0; n]),
    })
}

impl Callable {
    /// Replace the default host shapes, e.g. to marshal records as objects.
    pub fn with_shapes(mut self, params: Vec<Shape>, ret: Shape) -> Result<Callable, CompileError> {
        if params.len() != self.params.len() {
            return Err(CompileError::ShapeMismatch {
                expected: format!("{} parameters", self.params.len()),
            });
        }
        for (new, old) in params.iter().zip(&self.params) {
            if new.ty() != old.ty() {
                return Err(CompileError::ShapeMismatch {
                    expected: old.ty().to_string(),
                });
            }
        }
        if ret.ty() != self.ret.ty() {
            return Err(CompileError::ShapeMismatch {
                expected: self.ret.ty().to_string(),
            });
        }
        self.params = params;
        self.ret = ret;
        Ok(self)
    }

    /// Number of lowered (definition, type arguments) instances.
    pub fn instance_count(&self) -> usize {
        self.instances.len()
    }

    /// Lowered instances as (name, type arguments), entry first.
    pub fn instances(&self) -> Vec<(String, Vec<Ty>)> {
        self.instances.iter().map(|i| (i.name.clone(), i.targs.clone())).collect()
    }

    pub fn param_shapes(&self) -> &[Shape] {
        &self.params
    }

    pub fn ret_shape(&self) -> &Shape {
        &self.ret
    }
}
