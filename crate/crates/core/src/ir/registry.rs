use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use super::expr::{Expr, FuncDef, FuncId, OpaqueDef};
use super::types::{Kind, Ty};

/// Failure reported by a host routine.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("host routine `{routine}` failed: {message}")]
pub struct HostFault {
    pub routine: String,
    pub message: String,
}

pub type HostFn = Arc<dyn Fn(&[f64]) -> Result<f64, HostFault> + Send + Sync>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Item {
    Def(FuncDef),
    Opaque(OpaqueDef),
}

impl Item {
    pub fn name(&self) -> &str {
        match self {
            Item::Def(d) => &d.name,
            Item::Opaque(o) => &o.name,
        }
    }

    pub fn generics(&self) -> &[(String, Kind)] {
        match self {
            Item::Def(d) => &d.generics,
            Item::Opaque(_) => &[],
        }
    }

    pub fn param_types(&self) -> Vec<Ty> {
        match self {
            Item::Def(d) => d.param_types(),
            Item::Opaque(o) => o.params.clone(),
        }
    }

    pub fn ret(&self) -> &Ty {
        match self {
            Item::Def(d) => &d.ret,
            Item::Opaque(o) => &o.ret,
        }
    }
}

/// How a definition came to exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    /// Written by hand: traced or parsed.
    Source,
    /// Dual lifting of the given definition.
    Lifted(FuncId),
    /// Forward pass of the given dual-lifted definition.
    Forward(FuncId),
    /// Backward pass of the given dual-lifted definition.
    Backward(FuncId),
}

/// Results of transforms, keyed by the definition they were applied to.
#[derive(Clone, Debug, Default)]
pub struct Memo {
    pub lifted: BTreeMap<FuncId, FuncId>,
    pub transposed: BTreeMap<FuncId, (FuncId, FuncId)>,
}

#[derive(Clone, Default)]
pub struct Registry {
    items: Vec<Item>,
    custom_jvp: BTreeMap<FuncId, FuncId>,
    origins: Vec<Origin>,
    hosts: BTreeMap<String, HostFn>,
    pub(crate) memo: Memo,
}

impl PartialEq for Registry {
    /// Structural equality over definitions and custom derivatives.
    fn eq(&self, other: &Self) -> bool {
        self.items == other.items && self.custom_jvp == other.custom_jvp
    }
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("items", &self.items)
            .field("custom_jvp", &self.custom_jvp)
            .field("hosts", &self.hosts.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Registry {
    pub fn new() -> Registry {
        Registry::default()
    }

    /// A registry with the standard scalar host routines bound.
    pub fn with_std_hosts() -> Registry {
        let mut reg = Registry::new();
        for (name, f) in std_routines() {
            reg.bind_host(name, f);
        }
        reg
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = FuncId> {
        (0..self.items.len() as u32).map(FuncId)
    }

    pub fn items(&self) -> impl Iterator<Item = (FuncId, &Item)> {
        self.items.iter().enumerate().map(|(i, it)| (FuncId(i as u32), it))
    }

    pub fn get(&self, id: FuncId) -> Option<&Item> {
        self.items.get(id.index())
    }

    pub fn item(&self, id: FuncId) -> &Item {
        &self.items[id.index()]
    }

    pub fn def(&self, id: FuncId) -> Option<&FuncDef> {
        match self.get(id) {
            Some(Item::Def(d)) => Some(d),
            _ => None,
        }
    }

    pub fn opaque(&self, id: FuncId) -> Option<&OpaqueDef> {
        match self.get(id) {
            Some(Item::Opaque(o)) => Some(o),
            _ => None,
        }
    }

    pub fn name(&self, id: FuncId) -> &str {
        self.items.get(id.index()).map_or("?", |it| it.name())
    }

    pub fn lookup(&self, name: &str) -> Option<FuncId> {
        self.items
            .iter()
            .position(|it| it.name() == name)
            .map(|i| FuncId(i as u32))
    }

    pub fn origin(&self, id: FuncId) -> Origin {
        self.origins.get(id.index()).copied().unwrap_or(Origin::Source)
    }

    /// `base`, or `base_1`, `base_2`, ... whichever is unused.
    pub fn fresh_name(&self, base: &str) -> String {
        let reserved = !super::print::is_ident(base) || super::print::KEYWORDS.contains(&base);
        let base = if super::print::is_ident(base) { base } else { "f" };
        if !reserved && self.lookup(base).is_none() {
            return base.to_string();
        }
        (1..)
            .map(|k| format!("{base}_{k}"))
            .find(|n| self.lookup(n).is_none())
            .unwrap()
    }

    /// Append a definition, renaming it if the name is taken.
    pub fn add_def(&mut self, mut def: FuncDef) -> FuncId {
        def.name = self.fresh_name(&def.name);
        self.push(Item::Def(def), Origin::Source)
    }

    pub(crate) fn add_derived(&mut self, mut def: FuncDef, origin: Origin) -> FuncId {
        def.name = self.fresh_name(&def.name);
        self.push(Item::Def(def), origin)
    }

    pub fn add_opaque(&mut self, mut op: OpaqueDef) -> FuncId {
        op.name = self.fresh_name(&op.name);
        self.push(Item::Opaque(op), Origin::Source)
    }

    fn push(&mut self, item: Item, origin: Origin) -> FuncId {
        self.items.push(item);
        self.origins.push(origin);
        FuncId(self.items.len() as u32 - 1)
    }

    /// Append without renaming; used by the parser so that names survive verbatim.
    pub(crate) fn push_raw(&mut self, item: Item) -> FuncId {
        self.push(item, Origin::Source)
    }

    pub(crate) fn replace_def(&mut self, id: FuncId, def: FuncDef) {
        self.items[id.index()] = Item::Def(def);
    }

    /// Record a custom derivative without checking it; see `validate_registry`.
    pub fn set_custom_jvp(&mut self, base: FuncId, jvp: FuncId) {
        self.custom_jvp.insert(base, jvp);
    }

    pub fn custom_jvp(&self, base: FuncId) -> Option<FuncId> {
        self.custom_jvp.get(&base).copied()
    }

    pub fn custom_jvps(&self) -> impl Iterator<Item = (FuncId, FuncId)> + '_ {
        self.custom_jvp.iter().map(|(a, b)| (*a, *b))
    }

    pub fn bind_host(&mut self, routine: &str, f: HostFn) {
        self.hosts.insert(routine.to_string(), f);
    }

    pub fn host(&self, routine: &str) -> Option<&HostFn> {
        self.hosts.get(routine)
    }

    pub fn memo(&self) -> &Memo {
        &self.memo
    }

    /// Direct callees of a definition, in first-use order.
    pub fn callees(&self, id: FuncId) -> Vec<FuncId> {
        let mut out = Vec::new();
        if let Some(d) = self.def(id) {
            d.body.visit(&mut |l| {
                if let Expr::Call { func, .. } = &l.expr {
                    if !out.contains(func) {
                        out.push(*func);
                    }
                }
            });
        }
        out
    }

    /// `roots` and everything they reach through calls, in ascending id order.
    pub fn reachable(&self, roots: &[FuncId]) -> Vec<FuncId> {
        let mut seen = vec![false; self.items.len()];
        let mut stack: Vec<FuncId> = roots.to_vec();
        while let Some(f) = stack.pop() {
            if f.index() >= seen.len() || seen[f.index()] {
                continue;
            }
            seen[f.index()] = true;
            stack.extend(self.callees(f));
        }
        self.ids().filter(|f| seen[f.index()]).collect()
    }
}

fn unary(name: &'static str, f: fn(f64) -> f64) -> (&'static str, HostFn) {
    (name, Arc::new(move |xs: &[f64]| {
        match xs {
            [x] => Ok(f(*x)),
            _ => Err(HostFault {
                routine: name.to_string(),
                message: format!("expected 1 argument, got {}", xs.len()),
            }),
        }
    }))
}

fn binary(name: &'static str, f: fn(f64, f64) -> f64) -> (&'static str, HostFn) {
    (name, Arc::new(move |xs: &[f64]| {
        match xs {
            [x, y] => Ok(f(*x, *y)),
            _ => Err(HostFault {
                routine: name.to_string(),
                message: format!("expected 2 arguments, got {}", xs.len()),
            }),
        }
    }))
}

/// Host routines for the usual libm functions.
pub fn std_routines() -> Vec<(&'static str, HostFn)> {
    vec![
        unary("sin", f64::sin),
        unary("cos", f64::cos),
        unary("tan", f64::tan),
        unary("exp", f64::exp),
        unary("log", f64::ln),
        binary("pow", f64::powf),
        binary("max", f64::max),
        binary("min", f64::min),
    ]
}
