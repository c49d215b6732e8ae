use std::collections::{BTreeMap, BTreeSet};

use super::{dual_base, AdError};
use crate::ir::{BinaryOp, Block, Expr, FuncDef, FuncId, Registry, Ty, UnaryOp, VarId};

/// Whether a real-valued leaf of a dual-JVP variable is a primal value or a tangent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Primal,
    Tangent,
}

/// A type whose `Real` leaves carry a label.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum STy<L> {
    Real(L),
    Other(Ty),
    Arr(Ty, Box<STy<L>>),
    Pair(Box<STy<L>>, Box<STy<L>>),
    Acc(Box<STy<L>>),
}

impl<L: Clone> STy<L> {
    fn of(ty: &Ty, mk: &mut impl FnMut() -> L) -> STy<L> {
        match ty {
            Ty::Real => STy::Real(mk()),
            Ty::Arr(i, e) => STy::Arr((**i).clone(), Box::new(STy::of(e, mk))),
            Ty::Pair(a, b) => STy::Pair(Box::new(STy::of(a, mk)), Box::new(STy::of(b, mk))),
            Ty::Acc(x) => STy::Acc(Box::new(STy::of(x, mk))),
            other => STy::Other(other.clone()),
        }
    }

    fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> STy<M> {
        match self {
            STy::Real(l) => STy::Real(f(l)),
            STy::Other(t) => STy::Other(t.clone()),
            STy::Arr(i, e) => STy::Arr(i.clone(), Box::new(e.map(f))),
            STy::Pair(a, b) => STy::Pair(Box::new(a.map(f)), Box::new(b.map(f))),
            STy::Acc(x) => STy::Acc(Box::new(x.map(f))),
        }
    }

    pub fn fst(&self) -> &STy<L> {
        match self {
            STy::Pair(a, _) => a,
            _ => panic!("not a pair"),
        }
    }

    pub fn snd(&self) -> &STy<L> {
        match self {
            STy::Pair(_, b) => b,
            _ => panic!("not a pair"),
        }
    }

    pub fn elem(&self) -> &STy<L> {
        match self {
            STy::Arr(_, e) => e,
            _ => panic!("not an array"),
        }
    }

    pub fn inner(&self) -> &STy<L> {
        match self {
            STy::Acc(x) => x,
            _ => panic!("not an accumulator"),
        }
    }
}

impl STy<Role> {
    /// The type of the part with the given role; pairs missing a side collapse to the other side.
    pub fn part(&self, role: Role) -> Option<Ty> {
        match self {
            STy::Real(r) => (*r == role).then_some(Ty::Real),
            STy::Other(t) => (role == Role::Primal).then(|| t.clone()),
            STy::Arr(i, e) => e.part(role).map(|e| Ty::arr(i.clone(), e)),
            STy::Pair(a, b) => match (a.part(role), b.part(role)) {
                (Some(a), Some(b)) => Some(Ty::pair(a, b)),
                (a, b) => a.or(b),
            },
            STy::Acc(x) => x.part(role).map(Ty::acc),
        }
    }

    pub fn has(&self, role: Role) -> bool {
        self.part(role).is_some()
    }

    pub fn is_acc(&self) -> bool {
        matches!(self, STy::Acc(_))
    }
}

/// A component of a block's tape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum TapeItem {
    /// The primal part of a variable bound in the block.
    Var(VarId),
    /// The tape produced by the call, loop or accumulator block bound to this variable.
    Sub(VarId),
}

pub(crate) struct BlockInfo {
    pub depth: usize,
    pub tape: Vec<TapeItem>,
    /// Variables bound outside the block that receive adjoint contributions inside it.
    pub captured: BTreeSet<VarId>,
}

pub(crate) struct Analysis {
    pub roles: Vec<Option<STy<Role>>>,
    pub remat: Vec<bool>,
    pub loop_index: Vec<bool>,
    pub active: Vec<bool>,
    pub blocks: Vec<BlockInfo>,
    pub body_of: BTreeMap<VarId, usize>,
    pub has_sub: Vec<bool>,
    def_depth: Vec<usize>,
}

impl Analysis {
    pub fn role(&self, v: VarId) -> &STy<Role> {
        self.roles[v.index()].as_ref().expect("bound variable")
    }

    /// Tangent part type, ignoring constants whose tangent is always zero.
    pub fn tangent(&self, v: VarId) -> Option<Ty> {
        if self.remat[v.index()] {
            return None;
        }
        self.role(v).part(Role::Tangent)
    }

    pub fn has_t(&self, v: VarId) -> bool {
        self.tangent(v).is_some()
    }
}

#[derive(Default)]
struct Solver {
    parent: Vec<usize>,
    role: Vec<Option<Role>>,
    muls: Vec<[usize; 3]>,
}

impl Solver {
    fn node(&mut self) -> usize {
        self.parent.push(self.parent.len());
        self.role.push(None);
        self.parent.len() - 1
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn get(&mut self, x: usize) -> Option<Role> {
        let r = self.find(x);
        self.role[r]
    }

    fn set(&mut self, x: usize, role: Role) -> Result<bool, ()> {
        let r = self.find(x);
        match self.role[r] {
            Some(old) if old == role => Ok(false),
            Some(_) => Err(()),
            None => {
                self.role[r] = Some(role);
                Ok(true)
            }
        }
    }

    fn union(&mut self, a: usize, b: usize) -> Result<(), ()> {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return Ok(());
        }
        let role = match (self.role[ra], self.role[rb]) {
            (Some(x), Some(y)) if x != y => return Err(()),
            (x, y) => x.or(y),
        };
        self.parent[ra] = rb;
        self.role[rb] = role;
        Ok(())
    }

    fn unify(&mut self, a: &STy<usize>, b: &STy<usize>) -> Result<(), ()> {
        match (a, b) {
            (STy::Real(x), STy::Real(y)) => self.union(*x, *y),
            (STy::Arr(_, x), STy::Arr(_, y)) | (STy::Acc(x), STy::Acc(y)) => self.unify(x, y),
            (STy::Pair(a1, b1), STy::Pair(a2, b2)) => {
                self.unify(a1, a2)?;
                self.unify(b1, b2)
            }
            _ => Ok(()),
        }
    }

    fn force(&mut self, a: &STy<usize>, role: Role) -> Result<(), ()> {
        let mut leaves = Vec::new();
        a.map(&mut |n| leaves.push(*n));
        for n in leaves {
            self.set(n, role)?;
        }
        Ok(())
    }

    /// Constrain a lifted value against the unlifted type it was lifted from.
    fn dual(&mut self, a: &STy<usize>, base: &Ty) -> Result<(), ()> {
        match (a, base) {
            (STy::Pair(p, t), Ty::Real) => {
                self.force(p, Role::Primal)?;
                self.force(t, Role::Tangent)
            }
            (STy::Pair(a1, b1), Ty::Pair(a2, b2)) => {
                self.dual(a1, a2)?;
                self.dual(b1, b2)
            }
            (STy::Arr(_, x), Ty::Arr(_, y)) | (STy::Acc(x), Ty::Acc(y)) => self.dual(x, y),
            _ => Ok(()),
        }
    }

    fn step(&mut self, [r, x, y]: [usize; 3]) -> Result<bool, ()> {
        use Role::*;
        let mut changed = false;
        match (self.get(r), self.get(x), self.get(y)) {
            (_, Some(Tangent), Some(Tangent)) => return Err(()),
            (_, Some(Tangent), _) => {
                changed |= self.set(y, Primal)?;
                changed |= self.set(r, Tangent)?;
            }
            (_, _, Some(Tangent)) => {
                changed |= self.set(x, Primal)?;
                changed |= self.set(r, Tangent)?;
            }
            (_, Some(Primal), Some(Primal)) => changed |= self.set(r, Primal)?,
            (Some(Primal), _, _) => {
                changed |= self.set(x, Primal)?;
                changed |= self.set(y, Primal)?;
            }
            (Some(Tangent), Some(Primal), None) => changed |= self.set(y, Tangent)?,
            (Some(Tangent), None, Some(Primal)) => changed |= self.set(x, Tangent)?,
            _ => {}
        }
        Ok(changed)
    }

    fn propagate(&mut self) -> Result<(), usize> {
        loop {
            let mut changed = false;
            for k in 0..self.muls.len() {
                changed |= self.step(self.muls[k]).map_err(|_| k)?;
            }
            if !changed {
                return Ok(());
            }
        }
    }

    fn solve(&mut self) -> Result<(), usize> {
        self.propagate()?;
        for n in 0..self.parent.len() {
            if self.get(n).is_none() {
                self.set(n, Role::Primal).expect("unassigned");
                self.propagate()?;
            }
        }
        Ok(())
    }
}

struct Walk<'a> {
    reg: &'a Registry,
    def: &'a FuncDef,
    s: Solver,
    sty: Vec<Option<STy<usize>>>,
    remat: Vec<bool>,
    loop_index: Vec<bool>,
    depth: Vec<usize>,
    body_of: BTreeMap<VarId, usize>,
    block_depth: Vec<usize>,
    mul_sites: Vec<VarId>,
    at: VarId,
}

type W<T> = Result<T, String>;

impl Walk<'_> {
    fn bind(&mut self, v: VarId, ty: &Ty, depth: usize) -> STy<usize> {
        let s = &mut self.s;
        let sty = STy::of(ty, &mut || s.node());
        self.sty[v.index()] = Some(sty.clone());
        self.depth[v.index()] = depth;
        sty
    }

    fn op(&mut self, v: VarId) -> STy<usize> {
        if self.remat[v.index()] {
            let s = &mut self.s;
            let ty = self.sty[v.index()].as_ref().expect("bound").map(&mut |_| ());
            return ty.map(&mut |_| s.node());
        }
        self.sty[v.index()].clone().expect("bound operand")
    }

    fn fail(&self, what: &str) -> String {
        format!("{what} at `{}`", self.at)
    }

    fn unify(&mut self, a: &STy<usize>, b: &STy<usize>) -> W<()> {
        self.s.unify(a, b).map_err(|_| self.fail("conflicting roles"))
    }

    fn primal(&mut self, a: &STy<usize>, what: &str) -> W<()> {
        self.s.force(a, Role::Primal).map_err(|_| self.fail(what))
    }

    fn block(&mut self, b: &Block, depth: usize) -> W<()> {
        for l in &b.lets {
            self.at = l.var;
            let x = self.bind(l.var, &l.ty, depth);
            match &l.expr {
                Expr::Const(_) | Expr::Fin(_) | Expr::Unit | Expr::True | Expr::False => {
                    self.remat[l.var.index()] = true;
                }
                Expr::Array(xs) => {
                    for v in xs {
                        let o = self.op(*v);
                        self.unify(x.elem(), &o)?;
                    }
                }
                Expr::Pair(a, b) => {
                    let (a, b) = (self.op(*a), self.op(*b));
                    self.unify(x.fst(), &a)?;
                    self.unify(x.snd(), &b)?;
                }
                Expr::Unary(UnaryOp::Not, _) => {}
                Expr::Unary(UnaryOp::Neg, a) => {
                    let a = self.op(*a);
                    self.unify(&x, &a)?;
                }
                Expr::Unary(op, a) => {
                    let a = self.op(*a);
                    self.primal(&a, &format!("tangent passed to `{}`", op.symbol()))?;
                    self.primal(&x, &format!("tangent produced by `{}`", op.symbol()))?;
                }
                Expr::Binary(op, _, _) if op.is_logic() => {}
                Expr::Binary(op, a, b) if op.is_comparison() => {
                    let (a, b) = (self.op(*a), self.op(*b));
                    self.primal(&a, "tangent compared")?;
                    self.primal(&b, "tangent compared")?;
                }
                Expr::Binary(op, a, b) => {
                    let (a, b) = (self.op(*a), self.op(*b));
                    match op {
                        BinaryOp::Add | BinaryOp::Sub => {
                            self.unify(&x, &a)?;
                            self.unify(&x, &b)?;
                        }
                        BinaryOp::Mul => {
                            let (STy::Real(r), STy::Real(p), STy::Real(q)) = (&x, &a, &b) else {
                                unreachable!()
                            };
                            self.s.muls.push([*r, *p, *q]);
                            self.mul_sites.push(l.var);
                        }
                        BinaryOp::Div => {
                            self.unify(&x, &a)?;
                            self.primal(&b, "tangent in a divisor")?;
                        }
                        _ => unreachable!(),
                    }
                }
                Expr::Select(p, a, b) => {
                    let _ = p;
                    let (a, b) = (self.op(*a), self.op(*b));
                    self.unify(&x, &a)?;
                    self.unify(&x, &b)?;
                }
                Expr::Accumulate(acc, v) => {
                    let (acc, v) = (self.op(*acc), self.op(*v));
                    self.unify(acc.inner(), &v)?;
                }
                Expr::Index(a, _) => {
                    let a = self.op(*a);
                    self.unify(&x, a.elem())?;
                }
                Expr::Fst(a) => {
                    let a = self.op(*a);
                    self.unify(&x, a.fst())?;
                }
                Expr::Snd(a) => {
                    let a = self.op(*a);
                    self.unify(&x, a.snd())?;
                }
                Expr::RefIndex(a, _) => {
                    let a = self.op(*a);
                    self.unify(x.inner(), a.inner().elem())?;
                }
                Expr::RefFst(a) => {
                    let a = self.op(*a);
                    self.unify(x.inner(), a.inner().fst())?;
                }
                Expr::RefSnd(a) => {
                    let a = self.op(*a);
                    self.unify(x.inner(), a.inner().snd())?;
                }
                Expr::Call { func, args, .. } => {
                    let ops: Vec<_> = args.iter().map(|v| self.op(*v)).collect();
                    match dual_base(self.reg, *func) {
                        Some(base) => {
                            let item = self.reg.item(base);
                            for (o, ty) in ops.iter().zip(item.param_types()) {
                                self.s.dual(o, &ty).map_err(|_| self.fail("argument roles"))?;
                            }
                            let ret = item.ret().clone();
                            self.s.dual(&x, &ret).map_err(|_| self.fail("result roles"))?;
                        }
                        None => {
                            let name = self.reg.name(*func).to_string();
                            for o in &ops {
                                self.primal(o, &format!("tangent passed to non-derivative `{name}`"))?;
                            }
                            self.primal(&x, &format!("result of non-derivative `{name}`"))?;
                        }
                    }
                }
                Expr::For { index, index_ty, body } => {
                    let id = self.new_block(l.var, depth + 1);
                    let _ = id;
                    self.bind(*index, index_ty, depth + 1);
                    self.loop_index[index.index()] = true;
                    self.block(body, depth + 1)?;
                    self.at = l.var;
                    let r = self.op(body.result);
                    self.unify(x.elem(), &r)?;
                }
                Expr::Accum { acc, body, .. } => {
                    self.new_block(l.var, depth + 1);
                    let Ty::Pair(from_ty, _) = &l.ty else { unreachable!() };
                    let a = self.bind(*acc, &Ty::acc((**from_ty).clone()), depth + 1);
                    self.unify(a.inner(), x.fst())?;
                    self.block(body, depth + 1)?;
                    self.at = l.var;
                    let r = self.op(body.result);
                    self.unify(x.snd(), &r)?;
                }
            }
        }
        Ok(())
    }

    fn new_block(&mut self, owner: VarId, depth: usize) -> usize {
        let id = self.block_depth.len();
        self.block_depth.push(depth);
        self.body_of.insert(owner, id);
        id
    }
}

/// Infer roles for the dual JVP `def` of `base` and plan its tapes.
/// `callee_tape` reports whether a dual callee's forward pass produces a non-unit tape.
pub(crate) fn analyze(
    reg: &Registry,
    def: &FuncDef,
    base: FuncId,
    callee_tape: &dyn Fn(FuncId) -> bool,
) -> Result<Analysis, AdError> {
    let n = def.var_bound() as usize;
    let mut w = Walk {
        reg,
        def,
        s: Solver::default(),
        sty: vec![None; n],
        remat: vec![false; n],
        loop_index: vec![false; n],
        depth: vec![0; n],
        body_of: BTreeMap::new(),
        block_depth: vec![0],
        mul_sites: Vec::new(),
        at: VarId(0),
    };
    let nonlinear = |detail: String| AdError::NonlinearTangentUse {
        func: def.name.clone(),
        detail,
    };
    let base_item = reg.item(base);
    let base_params = base_item.param_types();
    let base_ret = base_item.ret().clone();
    for ((v, ty), bty) in def.params.iter().zip(&base_params) {
        let x = w.bind(*v, ty, 0);
        w.s.dual(&x, bty).expect("fresh parameter");
    }
    w.block(&def.body, 0).map_err(nonlinear)?;
    let r = w.op(def.body.result);
    w.s.dual(&r, &base_ret)
        .map_err(|_| nonlinear(format!("result roles at `{}`", def.body.result)))?;
    if let Err(k) = w.s.solve() {
        return Err(nonlinear(format!("product of tangents at `{}`", w.mul_sites[k])));
    }
    let _ = w.def;
    let mut solver = std::mem::take(&mut w.s);
    let roles: Vec<Option<STy<Role>>> = w
        .sty
        .iter()
        .map(|s| s.as_ref().map(|s| s.map(&mut |node| solver.get(*node).expect("solved"))))
        .collect();
    let mut a = Analysis {
        roles,
        remat: w.remat,
        loop_index: w.loop_index,
        active: vec![false; n],
        blocks: w
            .block_depth
            .iter()
            .map(|&depth| BlockInfo {
                depth,
                tape: Vec::new(),
                captured: BTreeSet::new(),
            })
            .collect(),
        body_of: w.body_of,
        has_sub: vec![false; n],
        def_depth: w.depth,
    };
    let mut needed = vec![false; n];
    plan(reg, &mut a, &mut needed, &def.body, 0, callee_tape);
    let mut tape = Vec::new();
    for (v, _) in &def.params {
        if needed[v.index()] {
            tape.push(TapeItem::Var(*v));
        }
    }
    tape.extend(std::mem::take(&mut a.blocks[0].tape));
    a.blocks[0].tape = tape;
    Ok(a)
}

/// Mark active lets, primal values the backward pass needs, and tape layouts; bottom-up.
/// Returns the variables receiving contributions in this block's subtree.
fn plan(
    reg: &Registry,
    a: &mut Analysis,
    needed: &mut [bool],
    b: &Block,
    id: usize,
    callee_tape: &dyn Fn(FuncId) -> bool,
) -> BTreeSet<VarId> {
    let mut targets = BTreeSet::new();
    let need = |a: &Analysis, v: VarId, needed: &mut [bool]| {
        if !a.remat[v.index()] && !a.loop_index[v.index()] {
            needed[v.index()] = true;
        }
    };
    for l in &b.lets {
        let x = l.var;
        let xt = a.has_t(x) && !a.role(x).is_acc();
        let mut active = xt;
        let mut contrib: Vec<VarId> = Vec::new();
        match &l.expr {
            Expr::Unary(UnaryOp::Neg, v) if xt => contrib.push(*v),
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, p, q) if xt => contrib.extend([*p, *q]),
            Expr::Binary(BinaryOp::Mul, p, q) if xt => {
                let (tv, pv) = if a.has_t(*p) { (*p, *q) } else { (*q, *p) };
                contrib.push(tv);
                need(a, pv, needed);
            }
            Expr::Binary(BinaryOp::Div, p, q) if xt => {
                contrib.push(*p);
                need(a, *q, needed);
            }
            Expr::Select(p, u, v) => {
                if a.has_t(x) {
                    need(a, *p, needed);
                }
                if xt {
                    contrib.extend([*u, *v]);
                }
            }
            Expr::Array(xs) if xt => contrib.extend(xs),
            Expr::Pair(p, q) if xt => contrib.extend([*p, *q]),
            Expr::Fst(v) | Expr::Snd(v) if xt => contrib.push(*v),
            Expr::Index(v, i) if xt => {
                contrib.push(*v);
                need(a, *i, needed);
            }
            Expr::RefIndex(_, i) => {
                if a.has_t(x) {
                    need(a, *i, needed);
                }
            }
            Expr::Accumulate(acc, v) => {
                if a.role(*acc).inner().has(Role::Tangent) {
                    active = true;
                    contrib.push(*v);
                }
            }
            Expr::Call { func, args, .. } => {
                if dual_base(reg, *func).is_some() {
                    let ts: Vec<VarId> = args.iter().copied().filter(|v| a.has_t(*v)).collect();
                    active = xt || !ts.is_empty();
                    if active && callee_tape(*func) {
                        a.has_sub[x.index()] = true;
                    }
                    contrib.extend(ts.into_iter().filter(|v| !a.role(*v).is_acc()));
                }
            }
            Expr::For { body, .. } | Expr::Accum { body, .. } => {
                let child = a.body_of[&x];
                let inner = plan(reg, a, needed, body, child, callee_tape);
                let body_active = body.lets.iter().any(|l| a.active[l.var.index()]);
                active = xt || body_active;
                if active {
                    if !a.blocks[child].tape.is_empty() {
                        a.has_sub[x.index()] = true;
                    }
                    let depth = a.blocks[child].depth;
                    let captured: BTreeSet<VarId> = inner
                        .iter()
                        .copied()
                        .filter(|v| a.def_depth[v.index()] < depth)
                        .collect();
                    targets.extend(captured.iter().copied());
                    a.blocks[child].captured = captured;
                }
            }
            _ => {}
        }
        a.active[x.index()] = active;
        if active {
            targets.extend(contrib.into_iter().filter(|v| a.has_t(*v)));
        }
    }
    if a.has_t(b.result) {
        targets.insert(b.result);
    }
    let mut tape = Vec::new();
    for l in &b.lets {
        if needed[l.var.index()] {
            tape.push(TapeItem::Var(l.var));
        }
        if a.has_sub[l.var.index()] {
            tape.push(TapeItem::Sub(l.var));
        }
    }
    a.blocks[id].tape = tape;
    targets
}
