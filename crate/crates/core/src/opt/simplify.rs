use std::collections::{BTreeMap, BTreeSet};

use super::PassConfig;
use crate::ir::{BinaryOp, Block, Expr, FuncDef, FuncId, Let, Registry, Ty, UnaryOp, VarId};

/// Simplify with every sub-pass enabled.
pub fn simplify(def: &FuncDef, reg: &Registry) -> FuncDef {
    simplify_with(def, reg, &PassConfig::default())
}

/// Run the enabled sub-passes to a fixpoint (or `cfg.max_rounds`), then renumber.
pub fn simplify_with(def: &FuncDef, reg: &Registry, cfg: &PassConfig) -> FuncDef {
    let mut cur = def.clone();
    for _ in 0..cfg.max_rounds {
        let mut next = cur.clone();
        forward(&mut next, cfg);
        if cfg.unit_erasure {
            erase_units(&mut next.body);
        }
        if cfg.dead_let_elimination {
            eliminate_dead(&mut next, reg);
        }
        if next == cur {
            break;
        }
        cur = next;
    }
    let mut bound = BTreeSet::new();
    collect_bound(&cur, &mut bound);
    cur.names.retain(|v, _| bound.contains(v));
    cur.normalize()
}

/// Simplify the given definitions in place; all of them when `ids` is empty.
pub fn simplify_registry(reg: &mut Registry, ids: &[FuncId]) {
    let ids: Vec<FuncId> = if ids.is_empty() { reg.ids().collect() } else { ids.to_vec() };
    for id in ids {
        if let Some(def) = reg.def(id) {
            let out = simplify(def, reg);
            reg.replace_def(id, out);
        }
    }
}

fn collect_bound(def: &FuncDef, out: &mut BTreeSet<VarId>) {
    out.extend(def.params.iter().map(|(v, _)| *v));
    def.body.visit(&mut |l: &Let| {
        out.insert(l.var);
        match &l.expr {
            Expr::For { index, .. } => {
                out.insert(*index);
            }
            Expr::Accum { acc, .. } => {
                out.insert(*acc);
            }
            _ => {}
        }
    });
}

#[derive(Default)]
struct Facts {
    subst: BTreeMap<VarId, VarId>,
    pairs: BTreeMap<VarId, (VarId, VarId)>,
    arrays: BTreeMap<VarId, Vec<VarId>>,
    fins: BTreeMap<VarId, usize>,
    zeros: BTreeSet<VarId>,
    negs: BTreeMap<VarId, VarId>,
}

impl Facts {
    fn resolve(&self, mut v: VarId) -> VarId {
        while let Some(&w) = self.subst.get(&v) {
            v = w;
        }
        v
    }
}

fn forward(def: &mut FuncDef, cfg: &PassConfig) {
    let mut facts = Facts::default();
    forward_block(&mut def.body, &mut facts, cfg);
}

fn forward_block(b: &mut Block, f: &mut Facts, cfg: &PassConfig) {
    let mut out = Vec::with_capacity(b.lets.len());
    for mut l in std::mem::take(&mut b.lets) {
        l.expr = map_operands(&l.expr, &mut |v| f.resolve(v));
        if let Some(to) = rewrite(&l, f, cfg) {
            match to {
                Rewrite::Alias(w) => {
                    f.subst.insert(l.var, w);
                    continue;
                }
                Rewrite::Expr(e) => l.expr = e,
            }
        }
        match &mut l.expr {
            Expr::For { body, .. } | Expr::Accum { body, .. } => forward_block(body, f, cfg),
            Expr::Pair(a, c) => {
                f.pairs.insert(l.var, (*a, *c));
            }
            Expr::Array(xs) => {
                f.arrays.insert(l.var, xs.clone());
            }
            Expr::Fin(m) => {
                f.fins.insert(l.var, *m);
            }
            Expr::Const(c) if c.0 == 0.0 => {
                f.zeros.insert(l.var);
            }
            Expr::Unary(UnaryOp::Neg, a) => {
                f.negs.insert(l.var, *a);
            }
            _ => {}
        }
        out.push(l);
    }
    b.lets = out;
    b.result = f.resolve(b.result);
}

enum Rewrite {
    Alias(VarId),
    Expr(Expr),
}

fn rewrite(l: &Let, f: &Facts, cfg: &PassConfig) -> Option<Rewrite> {
    let zero = |v: &VarId| f.zeros.contains(v);
    match &l.expr {
        Expr::Fst(p) if cfg.pair_scalarization => f.pairs.get(p).map(|(a, _)| Rewrite::Alias(*a)),
        Expr::Snd(p) if cfg.pair_scalarization => f.pairs.get(p).map(|(_, b)| Rewrite::Alias(*b)),
        Expr::Index(a, i) if cfg.copy_propagation => {
            let xs = f.arrays.get(a)?;
            let m = f.fins.get(i)?;
            xs.get(*m).map(|x| Rewrite::Alias(*x))
        }
        Expr::Unary(UnaryOp::Neg, a) if cfg.zero_folding => f.negs.get(a).map(|x| Rewrite::Alias(*x)),
        Expr::Binary(op, a, b) if cfg.zero_folding => match op {
            BinaryOp::Add if zero(b) => Some(Rewrite::Alias(*a)),
            BinaryOp::Add if zero(a) => Some(Rewrite::Alias(*b)),
            BinaryOp::Sub if zero(b) => Some(Rewrite::Alias(*a)),
            BinaryOp::Sub if zero(a) => Some(Rewrite::Expr(Expr::Unary(UnaryOp::Neg, *b))),
            BinaryOp::Mul if zero(a) => Some(Rewrite::Alias(*a)),
            BinaryOp::Mul if zero(b) => Some(Rewrite::Alias(*b)),
            BinaryOp::Div if zero(a) => Some(Rewrite::Alias(*a)),
            _ => None,
        },
        _ => None,
    }
}

/// Rename operands only, leaving binders and nested blocks for their own walk.
fn map_operands(e: &Expr, f: &mut impl FnMut(VarId) -> VarId) -> Expr {
    match e {
        Expr::For { .. } => e.clone(),
        Expr::Accum { acc, from, body } => Expr::Accum {
            acc: *acc,
            from: f(*from),
            body: body.clone(),
        },
        _ => e.map_vars(f),
    }
}

/// A block ending in a `()` literal returns its last unit-typed let instead.
fn erase_units(b: &mut Block) {
    for l in &mut b.lets {
        if let Expr::For { body, .. } | Expr::Accum { body, .. } = &mut l.expr {
            erase_units(body);
        }
    }
    let Some(pos) = b.lets.iter().position(|l| l.var == b.result) else { return };
    if b.lets[pos].expr != Expr::Unit {
        return;
    }
    if let Some(u) = b.lets[..pos].iter().rev().find(|l| l.ty == Ty::Unit) {
        b.result = u.var;
    }
}

const OPAQUE: VarId = VarId(u32::MAX);

/// Accumulators (parameters and `accum` binders) an expression may write to.
struct Effects<'a> {
    reg: &'a Registry,
    types: BTreeMap<VarId, Ty>,
    roots: BTreeMap<VarId, BTreeSet<VarId>>,
}

impl Effects<'_> {
    fn roots_of(&self, v: VarId) -> BTreeSet<VarId> {
        self.roots.get(&v).cloned().unwrap_or_else(|| BTreeSet::from([v]))
    }

    fn learn(&mut self, b: &Block) {
        for l in &b.lets {
            self.types.insert(l.var, l.ty.clone());
            let r = match &l.expr {
                Expr::RefIndex(a, _) | Expr::RefFst(a) | Expr::RefSnd(a) => Some(self.roots_of(*a)),
                Expr::Select(_, a, c) if matches!(l.ty, Ty::Acc(_)) => {
                    let mut s = self.roots_of(*a);
                    s.extend(self.roots_of(*c));
                    Some(s)
                }
                _ => None,
            };
            if let Some(r) = r {
                self.roots.insert(l.var, r);
            }
            if let Expr::For { body, .. } | Expr::Accum { body, .. } = &l.expr {
                self.learn(body);
            }
        }
    }

    fn touched(&self, l: &Let) -> BTreeSet<VarId> {
        match &l.expr {
            Expr::Accumulate(a, _) => self.roots_of(*a),
            Expr::Call { func, args, .. } => {
                let mut s = BTreeSet::new();
                if self.reg.opaque(*func).is_some() {
                    s.insert(OPAQUE);
                }
                for a in args {
                    if self.types.get(a).is_some_and(Ty::contains_acc) {
                        s.extend(self.roots_of(*a));
                    }
                }
                s
            }
            Expr::For { body, .. } => self.touched_block(body),
            Expr::Accum { acc, body, .. } => {
                let mut s = self.touched_block(body);
                s.remove(acc);
                s
            }
            _ => BTreeSet::new(),
        }
    }

    fn touched_block(&self, b: &Block) -> BTreeSet<VarId> {
        let mut s = BTreeSet::new();
        for l in &b.lets {
            s.extend(self.touched(l));
        }
        let mut inner = BTreeSet::new();
        b.visit(&mut |l: &Let| {
            if let Expr::Accum { acc, .. } = &l.expr {
                inner.insert(*acc);
            }
        });
        s.retain(|v| !inner.contains(v));
        s
    }
}

fn eliminate_dead(def: &mut FuncDef, reg: &Registry) {
    let mut fx = Effects {
        reg,
        types: def.params.iter().cloned().collect(),
        roots: BTreeMap::new(),
    };
    fx.learn(&def.body);
    loop {
        let mut used = BTreeSet::new();
        uses(&def.body, &mut used);
        if !prune(&mut def.body, &used, &fx) {
            break;
        }
    }
}

fn uses(b: &Block, out: &mut BTreeSet<VarId>) {
    out.insert(b.result);
    for l in &b.lets {
        out.extend(l.expr.operands());
        if let Expr::For { body, .. } | Expr::Accum { body, .. } = &l.expr {
            uses(body, out);
        }
    }
}

fn prune(b: &mut Block, used: &BTreeSet<VarId>, fx: &Effects) -> bool {
    let before = b.lets.len();
    b.lets.retain(|l| used.contains(&l.var) || !fx.touched(l).is_empty());
    let mut changed = b.lets.len() != before;
    for l in &mut b.lets {
        if let Expr::For { body, .. } | Expr::Accum { body, .. } = &mut l.expr {
            changed |= prune(body, used, fx);
        }
    }
    changed
}
