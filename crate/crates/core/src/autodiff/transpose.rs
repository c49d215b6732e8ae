use std::collections::BTreeMap;

use super::roles::{analyze, Analysis, Role, TapeItem};
use super::{check_generics, dual_base, AdError};
use crate::builder::{BuildError, FuncHandle, Handle, Operand, Tracer};
use crate::ir::{BinaryOp, Block, Expr, FuncDef, FuncId, Item, Let, Origin, Ty, UnaryOp, VarId};

type R<T> = Result<T, BuildError>;

/// The forward pass (primal inputs to `(primal output, tape)`) and backward pass
/// (input adjoint accumulators, output adjoint, tape to `()`) of a dual JVP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transposed {
    pub fwd: FuncId,
    pub bwd: FuncId,
}

/// Split the dual JVP `jvp` into forward and backward passes; memoized per function.
pub fn transpose(t: &mut Tracer, jvp: FuncId) -> Result<Transposed, AdError> {
    if let Some(&(fwd, bwd)) = t.registry().memo().transposed.get(&jvp) {
        return Ok(Transposed { fwd, bwd });
    }
    let reg = t.registry();
    let base = dual_base(reg, jvp).ok_or_else(|| AdError::NotDifferentiable(reg.name(jvp).to_string()))?;
    let def = match reg.get(jvp) {
        Some(Item::Def(d)) => d.clone(),
        Some(Item::Opaque(o)) => return Err(AdError::MissingDerivative(o.name.clone())),
        None => return Err(AdError::UnknownFunction(jvp.0)),
    };
    check_generics(reg, jvp)?;
    for g in reg.callees(jvp) {
        if dual_base(t.registry(), g).is_some() {
            transpose(t, g)?;
        }
    }
    let reg = t.registry();
    let mut callees = BTreeMap::new();
    for g in reg.callees(jvp) {
        if let Some(&(f, b)) = reg.memo().transposed.get(&g) {
            let fwd = t.func_handle(f).expect("registered");
            let bwd = t.func_handle(b).expect("registered");
            let Ty::Pair(_, tape) = &fwd.ret else { unreachable!() };
            callees.insert(g, Callee {
                has_tape: **tape != Ty::Unit,
                fwd,
                bwd,
                base: dual_base(reg, g).expect("dual callee"),
            });
        }
    }
    let a = analyze(reg, &def, base, &|g| callees[&g].has_tape)?;
    let base_item = reg.item(base).clone();
    let base_name = base_item.name().to_string();
    let mut lets = BTreeMap::new();
    def.body.visit(&mut |l: &Let| {
        lets.insert(l.var, l.clone());
    });
    let cx = Cx {
        a: &a,
        def: &def,
        lets,
        callees,
        base_params: base_item.param_types(),
    };
    let tape_ty = cx.tape_ty(0, t.registry()).unwrap_or(Ty::Unit);

    let fwd_params: Vec<Ty> = def
        .params
        .iter()
        .map(|(v, _)| a.role(*v).part(Role::Primal).expect("primal parameter"))
        .collect();
    let fwd_ret = Ty::pair(base_item.ret().clone(), tape_ty.clone());
    let n = def.var_bound() as usize;
    let fwd = t.define_derived(
        &format!("fwd_{base_name}"),
        def.generics.clone(),
        &fwd_params,
        fwd_ret,
        Origin::Forward(jvp),
        |t, ps| {
            let mut st = Fwd {
                pv: vec![None; n],
                subs: vec![None; n],
            };
            for ((v, _), h) in def.params.iter().zip(ps) {
                cx.name(t, *v, h);
                st.pv[v.index()] = Some(h.clone());
            }
            let (res, tape) = cx.fwd_block(t, &mut st, &def.body, 0)?;
            let res = res.expect("primal result");
            let tape = match tape {
                Some(h) => h,
                None => t.unit()?,
            };
            t.pair(&res, &tape)
        },
    )?;

    let mut bwd_params = Vec::new();
    let mut kinds = Vec::new();
    for ((v, _), bty) in def.params.iter().zip(&cx.base_params) {
        let tan = a.role(*v).part(Role::Tangent);
        match (bty, tan) {
            (Ty::Acc(_), Some(Ty::Acc(inner))) => {
                bwd_params.push(*inner);
                kinds.push(ParamKind::Adjoint(*v));
            }
            (_, Some(tan)) => {
                bwd_params.push(Ty::acc(tan));
                kinds.push(ParamKind::Sink(*v));
            }
            _ => {}
        }
    }
    let out_ty = a.role(def.body.result).part(Role::Tangent);
    if let Some(ty) = &out_ty {
        bwd_params.push(ty.clone());
    }
    bwd_params.push(tape_ty);
    let bwd = t.define_derived(
        &format!("bwd_{base_name}"),
        def.generics.clone(),
        &bwd_params,
        Ty::Unit,
        Origin::Backward(jvp),
        |t, ps| {
            let mut st = Bwd {
                pv: vec![None; n],
                subs: vec![None; n],
                sinks: vec![None; n],
                adj: vec![None; n],
            };
            for (k, h) in kinds.iter().zip(ps) {
                match k {
                    ParamKind::Sink(v) => st.sinks[v.index()] = Some(Sink::Acc(h.clone())),
                    ParamKind::Adjoint(v) => st.adj[v.index()] = Some(h.clone()),
                }
            }
            let out = out_ty.as_ref().map(|_| ps[kinds.len()].clone());
            let tape = ps.last().cloned();
            cx.bwd_block(t, &mut st, &def.body, 0, out, tape)?;
            t.unit()
        },
    )?;
    t.registry_mut().memo.transposed.insert(jvp, (fwd.id, bwd.id));
    Ok(Transposed {
        fwd: fwd.id,
        bwd: bwd.id,
    })
}

enum ParamKind {
    Sink(VarId),
    Adjoint(VarId),
}

struct Callee {
    has_tape: bool,
    fwd: FuncHandle,
    bwd: FuncHandle,
    base: FuncId,
}

struct Cx<'a> {
    a: &'a Analysis,
    def: &'a FuncDef,
    lets: BTreeMap<VarId, Let>,
    callees: BTreeMap<FuncId, Callee>,
    base_params: Vec<Ty>,
}

struct Fwd {
    pv: Vec<Option<Handle>>,
    subs: Vec<Option<Handle>>,
}

#[derive(Clone)]
enum Sink {
    Sym(Vec<Handle>),
    Acc(Handle),
}

struct Bwd {
    pv: Vec<Option<Handle>>,
    subs: Vec<Option<Handle>>,
    sinks: Vec<Option<Sink>>,
    adj: Vec<Option<Handle>>,
}

fn nest(items: Vec<Ty>) -> Option<Ty> {
    let mut it = items.into_iter().rev();
    let last = it.next()?;
    Some(it.fold(last, |acc, t| Ty::pair(t, acc)))
}

/// Pack handles as a right-nested tuple; one item is itself, none is absent.
fn pack(t: &mut Tracer, items: &[Handle]) -> R<Option<Handle>> {
    let mut it = items.iter().rev();
    let Some(last) = it.next() else { return Ok(None) };
    let mut acc = last.clone();
    for h in it {
        acc = t.pair(h, &acc)?;
    }
    Ok(Some(acc))
}

/// Inverse of `pack` for `n` items.
fn unpack(t: &mut Tracer, h: &Handle, n: usize) -> R<Vec<Handle>> {
    let mut out = Vec::new();
    let mut cur = h.clone();
    for _ in 1..n {
        out.push(t.fst(&cur)?);
        cur = t.snd(&cur)?;
    }
    if n > 0 {
        out.push(cur);
    }
    Ok(out)
}

fn join(t: &mut Tracer, a: Option<Handle>, b: Option<Handle>) -> R<Option<Handle>> {
    match (a, b) {
        (Some(a), Some(b)) => Ok(Some(t.pair(&a, &b)?)),
        (a, b) => Ok(a.or(b)),
    }
}

fn split(t: &mut Tracer, h: Option<&Handle>, has_a: bool, has_b: bool) -> R<(Option<Handle>, Option<Handle>)> {
    let Some(h) = h else { return Ok((None, None)) };
    Ok(match (has_a, has_b) {
        (true, true) => (Some(t.fst(h)?), Some(t.snd(h)?)),
        (true, false) => (Some(h.clone()), None),
        (false, true) => (None, Some(h.clone())),
        (false, false) => (None, None),
    })
}

/// The additive zero of a tangent type.
pub(crate) fn zero(t: &mut Tracer, ty: &Ty) -> R<Handle> {
    match ty {
        Ty::Real => t.real(0.0),
        Ty::Unit => t.unit(),
        Ty::Pair(a, b) => {
            let a = zero(t, a)?;
            let b = zero(t, b)?;
            t.pair(&a, &b)
        }
        Ty::Arr(i, e) => {
            let e = (**e).clone();
            t.array((**i).clone(), |t, _| zero(t, &e))
        }
        other => unreachable!("no zero for `{other}`"),
    }
}

impl Cx<'_> {
    fn name(&self, t: &mut Tracer, v: VarId, h: &Handle) {
        if let Some(n) = self.def.names.get(&v) {
            let _ = t.name(h, n);
        }
    }

    fn tape_ty(&self, id: usize, reg: &crate::ir::Registry) -> Option<Ty> {
        let items = self.a.blocks[id]
            .tape
            .iter()
            .map(|item| match item {
                TapeItem::Var(v) => self.a.role(*v).part(Role::Primal).expect("taped primal"),
                TapeItem::Sub(x) => self.sub_ty(*x, reg),
            })
            .collect();
        nest(items)
    }

    fn sub_ty(&self, x: VarId, reg: &crate::ir::Registry) -> Ty {
        match &self.lets[&x].expr {
            Expr::Call { func, targs, .. } => {
                let c = &self.callees[func];
                let Ty::Pair(_, tape) = &c.fwd.ret else { unreachable!() };
                let map: BTreeMap<String, Ty> = c.fwd.generics.iter().map(|(g, _)| g.clone()).zip(targs.iter().cloned()).collect();
                tape.subst(&map)
            }
            Expr::For { index_ty, .. } => {
                Ty::arr(index_ty.clone(), self.tape_ty(self.a.body_of[&x], reg).expect("loop tape"))
            }
            Expr::Accum { .. } => self.tape_ty(self.a.body_of[&x], reg).expect("block tape"),
            _ => unreachable!("only calls and blocks have sub-tapes"),
        }
    }

    // ---- forward pass ----

    fn fwd_block(&self, t: &mut Tracer, st: &mut Fwd, b: &Block, id: usize) -> R<(Option<Handle>, Option<Handle>)> {
        for l in &b.lets {
            self.fwd_let(t, st, l)?;
        }
        let mut items = Vec::new();
        for item in &self.a.blocks[id].tape {
            items.push(match item {
                TapeItem::Var(v) => st.pv[v.index()].clone().expect("taped primal is bound"),
                TapeItem::Sub(x) => st.subs[x.index()].clone().expect("sub-tape is bound"),
            });
        }
        Ok((st.pv[b.result.index()].clone(), pack(t, &items)?))
    }

    fn fwd_let(&self, t: &mut Tracer, st: &mut Fwd, l: &Let) -> R<()> {
        let x = l.var;
        let role = self.a.role(x);
        let has_p = role.has(Role::Primal);
        let pv = |v: &VarId| -> Handle { st.pv[v.index()].clone().expect("primal operand") };
        let out: Option<Handle> = match &l.expr {
            Expr::Unit => Some(t.unit()?),
            Expr::True => Some(t.boolean(true)?),
            Expr::False => Some(t.boolean(false)?),
            Expr::Const(c) => Some(t.real(c.0)?),
            Expr::Fin(m) => {
                let Ty::Fin(n) = l.ty else { unreachable!() };
                Some(t.fin(*m, n)?)
            }
            _ if !has_p && !matches!(l.expr, Expr::Call { .. } | Expr::For { .. } | Expr::Accum { .. }) => None,
            Expr::Array(xs) => {
                let elem = role.elem().part(Role::Primal).expect("primal element");
                let hs: Vec<Handle> = xs.iter().map(pv).collect();
                Some(t.vec_of(elem, &hs)?)
            }
            Expr::Pair(p, q) => {
                let a = self_side(role.fst().has(Role::Primal), || pv(p));
                let b = self_side(role.snd().has(Role::Primal), || pv(q));
                join(t, a, b)?
            }
            Expr::Unary(op, v) => Some(t.unary(*op, pv(v))?),
            Expr::Binary(op, p, q) => Some(t.binary(*op, pv(p), pv(q))?),
            Expr::Select(p, u, v) => Some(t.select(pv(p), pv(u), pv(v))?),
            Expr::Accumulate(acc, v) => {
                if self.a.role(*acc).inner().has(Role::Primal) {
                    Some(t.accumulate(&pv(acc), pv(v))?)
                } else {
                    Some(t.unit()?)
                }
            }
            Expr::Index(a, i) => Some(t.index(&pv(a), pv(i))?),
            Expr::Fst(v) | Expr::Snd(v) => {
                let s = self.a.role(*v);
                let first = matches!(l.expr, Expr::Fst(_));
                let (pa, pb) = (s.fst().has(Role::Primal), s.snd().has(Role::Primal));
                let (a, b) = split(t, Some(&pv(v)), pa, pb)?;
                if first {
                    a
                } else {
                    b
                }
            }
            Expr::RefIndex(a, i) => Some(t.ref_index(&pv(a), pv(i))?),
            Expr::RefFst(v) | Expr::RefSnd(v) => {
                let s = self.a.role(*v).inner();
                let first = matches!(l.expr, Expr::RefFst(_));
                let h = pv(v);
                match (s.fst().has(Role::Primal), s.snd().has(Role::Primal)) {
                    (true, true) if first => Some(t.ref_fst(&h)?),
                    (true, true) => Some(t.ref_snd(&h)?),
                    _ => Some(h),
                }
            }
            Expr::Call { func, targs, args } => {
                let ops: Vec<Operand> = args.iter().map(|v| pv(v).into()).collect();
                match self.callees.get(func) {
                    Some(c) => {
                        let r = t.call_with(&c.fwd, targs, &ops)?;
                        let p = t.fst(&r)?;
                        if self.a.has_sub[x.index()] {
                            st.subs[x.index()] = Some(t.snd(&r)?);
                        }
                        Some(p)
                    }
                    None => {
                        let g = t.func_handle(*func).expect("registered");
                        Some(t.call_with(&g, targs, &ops)?)
                    }
                }
            }
            Expr::For { index, index_ty, body } => {
                let child = self.a.body_of[&x];
                let want_tape = self.a.has_sub[x.index()];
                let elem_p = role.elem().has(Role::Primal);
                let r = t.array(index_ty.clone(), |t, i| {
                    st.pv[index.index()] = Some(i);
                    let (res, tape) = self.fwd_block(t, st, body, child)?;
                    let res = if elem_p { res } else { None };
                    let tape = if want_tape { tape } else { None };
                    match join(t, res, tape)? {
                        Some(h) => Ok(h),
                        None => t.unit(),
                    }
                })?;
                match (elem_p, want_tape) {
                    (true, true) => {
                        let p = t.array(index_ty.clone(), |t, i| {
                            let e = t.index(&r, &i)?;
                            t.fst(&e)
                        })?;
                        let s = t.array(index_ty.clone(), |t, i| {
                            let e = t.index(&r, &i)?;
                            t.snd(&e)
                        })?;
                        st.subs[x.index()] = Some(s);
                        Some(p)
                    }
                    (false, true) => {
                        st.subs[x.index()] = Some(r);
                        None
                    }
                    (true, false) => Some(r),
                    (false, false) => None,
                }
            }
            Expr::Accum { acc, from, body } => {
                let child = self.a.body_of[&x];
                let want_tape = self.a.has_sub[x.index()];
                let res_p = role.snd().has(Role::Primal);
                match self.a.role(*acc).inner().part(Role::Primal) {
                    Some(inner) => {
                        let from_p = st.pv[from.index()].clone();
                        let seed = match from_p {
                            Some(h) if *h.ty() == inner => h,
                            _ => zero(t, &inner)?,
                        };
                        let r = t.accum(&seed, |t, a| {
                            st.pv[acc.index()] = Some(a);
                            let (res, tape) = self.fwd_block(t, st, body, child)?;
                            let res = if res_p { res } else { None };
                            let tape = if want_tape { tape } else { None };
                            match join(t, res, tape)? {
                                Some(h) => Ok(h),
                                None => t.unit(),
                            }
                        })?;
                        let decayed = t.fst(&r)?;
                        let rest = t.snd(&r)?;
                        let (res, tape) = split(t, Some(&rest), res_p, want_tape)?;
                        st.subs[x.index()] = tape;
                        join(t, Some(decayed), res)?
                    }
                    None => {
                        let (res, tape) = self.fwd_block(t, st, body, child)?;
                        if want_tape {
                            st.subs[x.index()] = tape;
                        }
                        if res_p {
                            res
                        } else {
                            None
                        }
                    }
                }
            }
        };
        if let Some(h) = &out {
            self.name(t, x, h);
        }
        st.pv[x.index()] = out;
        Ok(())
    }

    // ---- backward pass ----

    fn bwd_block(
        &self,
        t: &mut Tracer,
        st: &mut Bwd,
        b: &Block,
        id: usize,
        res_adj: Option<Handle>,
        tape: Option<Handle>,
    ) -> R<()> {
        let items = &self.a.blocks[id].tape;
        if let Some(tape) = tape.filter(|_| !items.is_empty()) {
            let hs = unpack(t, &tape, items.len())?;
            for (item, h) in items.iter().zip(hs) {
                match item {
                    TapeItem::Var(v) => st.pv[v.index()] = Some(h),
                    TapeItem::Sub(x) => st.subs[x.index()] = Some(h),
                }
            }
        }
        self.run(t, st, b, 0, res_adj)
    }

    /// Transpose `b.lets[k..]`, opening an accumulator for each structured tangent
    /// let so that later uses can accumulate into it.
    fn run(&self, t: &mut Tracer, st: &mut Bwd, b: &Block, k: usize, res_adj: Option<Handle>) -> R<()> {
        let next = (k..b.lets.len()).find(|&j| {
            let x = b.lets[j].var;
            self.a.active[x.index()]
                && !self.a.role(x).is_acc()
                && matches!(self.a.tangent(x), Some(ty) if ty != Ty::Real)
        });
        let Some(j) = next else {
            if let Some(d) = res_adj {
                self.contribute(t, st, b.result, d)?;
            }
            for l in b.lets[k..].iter().rev() {
                let adj = self.take(t, st, l.var)?;
                self.bwd_let(t, st, l, adj)?;
            }
            return Ok(());
        };
        let x = b.lets[j].var;
        // scalar adjoints summed symbolically must not leak out of the accumulator scope
        let mut vars = vec![x];
        vars.extend(
            free_uses(&b.lets[j + 1..], b.result)
                .into_iter()
                .filter(|v| *v != x && self.scalar_sink(st, *v)),
        );
        let comps = self.scoped(t, st, &vars, |t, st| self.run(t, st, b, j + 1, res_adj))?;
        for (v, h) in vars[1..].iter().zip(&comps[1..]) {
            self.contribute(t, st, *v, h.clone())?;
        }
        self.bwd_let(t, st, &b.lets[j], Some(comps[0].clone()))?;
        for l in b.lets[k..j].iter().rev() {
            let adj = self.take(t, st, l.var)?;
            self.bwd_let(t, st, l, adj)?;
        }
        Ok(())
    }

    /// Run `body` with fresh accumulators as the sinks of `vars`, returning
    /// their final values once the old sinks are restored.
    fn scoped(
        &self,
        t: &mut Tracer,
        st: &mut Bwd,
        vars: &[VarId],
        body: impl FnOnce(&mut Tracer, &mut Bwd) -> R<()>,
    ) -> R<Vec<Handle>> {
        if vars.is_empty() {
            body(t, st)?;
            return Ok(Vec::new());
        }
        let zs = vars
            .iter()
            .map(|v| zero(t, &self.a.tangent(*v).expect("tangent")))
            .collect::<R<Vec<_>>>()?;
        let seed = pack(t, &zs)?.expect("nonempty");
        let mut saved = Vec::new();
        let r = t.accum(&seed, |t, acc| {
            let refs = ref_unpack(t, &acc, vars.len())?;
            for (v, h) in vars.iter().zip(refs) {
                saved.push(st.sinks[v.index()].replace(Sink::Acc(h)));
            }
            body(t, st)?;
            t.unit()
        })?;
        for (v, old) in vars.iter().zip(saved) {
            st.sinks[v.index()] = old;
        }
        let decayed = t.fst(&r)?;
        unpack(t, &decayed, vars.len())
    }

    /// Whether adjoint contributions to `v` would be summed symbolically.
    fn scalar_sink(&self, st: &Bwd, v: VarId) -> bool {
        self.a.has_t(v) && !self.a.role(v).is_acc() && !matches!(st.sinks[v.index()], Some(Sink::Acc(_)))
    }

    /// Finish the adjoint of a scalar tangent variable at its definition.
    fn take(&self, t: &mut Tracer, st: &mut Bwd, v: VarId) -> R<Option<Handle>> {
        match st.sinks[v.index()].take() {
            Some(Sink::Sym(hs)) => {
                let mut it = hs.into_iter();
                let Some(first) = it.next() else { return Ok(None) };
                let mut acc = first;
                for h in it {
                    acc = t.add(&acc, &h)?;
                }
                Ok(Some(acc))
            }
            Some(Sink::Acc(_)) | None => Ok(None),
        }
    }

    fn contribute(&self, t: &mut Tracer, st: &mut Bwd, v: VarId, d: Handle) -> R<()> {
        if !self.a.has_t(v) {
            return Ok(());
        }
        match &mut st.sinks[v.index()] {
            Some(Sink::Acc(h)) => {
                let h = h.clone();
                t.accumulate(&h, &d)?;
            }
            Some(Sink::Sym(hs)) => hs.push(d),
            slot @ None => *slot = Some(Sink::Sym(vec![d])),
        }
        Ok(())
    }

    /// Contribute to one component of `v`'s tangent.
    fn contribute_part(&self, t: &mut Tracer, st: &mut Bwd, v: VarId, part: Part, d: Handle) -> R<()> {
        if !self.a.has_t(v) {
            return Ok(());
        }
        let s = self.a.role(v);
        let step = match part {
            Part::Index(_) => true,
            Part::Fst | Part::Snd => s.fst().has(Role::Tangent) && s.snd().has(Role::Tangent),
        };
        if !step {
            return self.contribute(t, st, v, d);
        }
        let Some(Sink::Acc(acc)) = st.sinks[v.index()].clone() else {
            unreachable!("structured tangent has an accumulator");
        };
        let r = match part {
            Part::Fst => t.ref_fst(&acc)?,
            Part::Snd => t.ref_snd(&acc)?,
            Part::Index(i) => t.ref_index(&acc, &i)?,
        };
        t.accumulate(&r, &d)?;
        Ok(())
    }

    fn pval(&self, t: &mut Tracer, st: &Bwd, v: VarId) -> R<Handle> {
        if let Some(h) = &st.pv[v.index()] {
            return Ok(h.clone());
        }
        let l = &self.lets[&v];
        match &l.expr {
            Expr::Const(c) => t.real(c.0),
            Expr::Fin(m) => {
                let Ty::Fin(n) = l.ty else { unreachable!() };
                t.fin(*m, n)
            }
            Expr::Unit => t.unit(),
            Expr::True => t.boolean(true),
            Expr::False => t.boolean(false),
            _ => unreachable!("primal `{v}` is neither taped nor recomputable"),
        }
    }

    /// Adjoint value of a tangent accumulator.
    fn adjval(&self, t: &mut Tracer, st: &Bwd, v: VarId) -> R<Option<Handle>> {
        if let Some(h) = &st.adj[v.index()] {
            return Ok(Some(h.clone()));
        }
        let Some(l) = self.lets.get(&v) else { return Ok(None) };
        match &l.expr {
            Expr::RefIndex(a, i) => {
                let Some(d) = self.adjval(t, st, *a)? else { return Ok(None) };
                let i = self.pval(t, st, *i)?;
                Ok(Some(t.index(&d, &i)?))
            }
            Expr::RefFst(a) | Expr::RefSnd(a) => {
                let Some(d) = self.adjval(t, st, *a)? else { return Ok(None) };
                let s = self.a.role(*a).inner();
                let (x, y) = split(t, Some(&d), s.fst().has(Role::Tangent), s.snd().has(Role::Tangent))?;
                Ok(if matches!(l.expr, Expr::RefFst(_)) { x } else { y })
            }
            Expr::Select(p, u, w) => {
                let du = self.adjval(t, st, *u)?;
                let dw = self.adjval(t, st, *w)?;
                if du.is_none() && dw.is_none() {
                    return Ok(None);
                }
                let ty = self.a.role(v).inner().part(Role::Tangent).expect("tangent");
                let du = match du {
                    Some(h) => h,
                    None => zero(t, &ty)?,
                };
                let dw = match dw {
                    Some(h) => h,
                    None => zero(t, &ty)?,
                };
                let p = self.pval(t, st, *p)?;
                Ok(Some(t.select(&p, &du, &dw)?))
            }
            _ => Ok(None),
        }
    }

    fn bwd_let(&self, t: &mut Tracer, st: &mut Bwd, l: &Let, adj: Option<Handle>) -> R<()> {
        let x = l.var;
        if !self.a.active[x.index()] {
            return Ok(());
        }
        let a = self.a;
        match &l.expr {
            Expr::Unary(UnaryOp::Neg, v) => {
                if let Some(d) = adj {
                    let n = t.neg(&d)?;
                    self.contribute(t, st, *v, n)?;
                }
            }
            Expr::Binary(op, p, q) => {
                let Some(d) = adj else { return Ok(()) };
                match op {
                    BinaryOp::Add => {
                        self.contribute(t, st, *p, d.clone())?;
                        self.contribute(t, st, *q, d)?;
                    }
                    BinaryOp::Sub => {
                        self.contribute(t, st, *p, d.clone())?;
                        if a.has_t(*q) {
                            let n = t.neg(&d)?;
                            self.contribute(t, st, *q, n)?;
                        }
                    }
                    BinaryOp::Mul => {
                        let (tv, pv) = if a.has_t(*p) { (*p, *q) } else { (*q, *p) };
                        if a.has_t(tv) {
                            let y = self.pval(t, st, pv)?;
                            let m = t.mul(&d, &y)?;
                            self.contribute(t, st, tv, m)?;
                        }
                    }
                    BinaryOp::Div => {
                        if a.has_t(*p) {
                            let y = self.pval(t, st, *q)?;
                            let m = t.div(&d, &y)?;
                            self.contribute(t, st, *p, m)?;
                        }
                    }
                    _ => {}
                }
            }
            Expr::Select(p, u, v) => {
                let Some(d) = adj else { return Ok(()) };
                if !(a.has_t(*u) || a.has_t(*v)) {
                    return Ok(());
                }
                let pred = self.pval(t, st, *p)?;
                let ty = a.tangent(x).expect("tangent");
                match (&st.sinks[u.index()], &st.sinks[v.index()]) {
                    (Some(Sink::Acc(su)), Some(Sink::Acc(sv))) if ty != Ty::Real => {
                        let (su, sv) = (su.clone(), sv.clone());
                        let s = t.select(&pred, &su, &sv)?;
                        t.accumulate(&s, &d)?;
                    }
                    _ => {
                        let z = zero(t, &ty)?;
                        if a.has_t(*u) {
                            let du = t.select(&pred, &d, &z)?;
                            self.contribute(t, st, *u, du)?;
                        }
                        if a.has_t(*v) {
                            let dv = t.select(&pred, &z, &d)?;
                            self.contribute(t, st, *v, dv)?;
                        }
                    }
                }
            }
            Expr::Array(xs) => {
                let Some(d) = adj else { return Ok(()) };
                let n = xs.len();
                for (j, v) in xs.iter().enumerate() {
                    if a.has_t(*v) {
                        let i = t.fin(j, n)?;
                        let e = t.index(&d, &i)?;
                        self.contribute(t, st, *v, e)?;
                    }
                }
            }
            Expr::Pair(p, q) => {
                let s = a.role(x);
                let (dp, dq) = split(t, adj.as_ref(), s.fst().has(Role::Tangent), s.snd().has(Role::Tangent))?;
                if let Some(dp) = dp {
                    self.contribute(t, st, *p, dp)?;
                }
                if let Some(dq) = dq {
                    self.contribute(t, st, *q, dq)?;
                }
            }
            Expr::Fst(v) => {
                if let Some(d) = adj {
                    self.contribute_part(t, st, *v, Part::Fst, d)?;
                }
            }
            Expr::Snd(v) => {
                if let Some(d) = adj {
                    self.contribute_part(t, st, *v, Part::Snd, d)?;
                }
            }
            Expr::Index(v, i) => {
                if let Some(d) = adj {
                    let i = self.pval(t, st, *i)?;
                    self.contribute_part(t, st, *v, Part::Index(i), d)?;
                }
            }
            Expr::Accumulate(acc, v) => {
                if let Some(d) = self.adjval(t, st, *acc)? {
                    self.contribute(t, st, *v, d)?;
                }
            }
            Expr::Call { func, targs, args } => self.bwd_call(t, st, x, *func, targs, args, adj)?,
            Expr::For { index, index_ty, body } => {
                let child = a.body_of[&x];
                let captured: Vec<VarId> = a.blocks[child]
                    .captured
                    .iter()
                    .copied()
                    .filter(|v| self.scalar_sink(st, *v))
                    .collect();
                let sub = st.subs[x.index()].clone();
                let comps = self.scoped(t, st, &captured, |t, st| {
                    t.array(index_ty.clone(), |t, i| {
                        st.pv[index.index()] = Some(i.clone());
                        let tape = match &sub {
                            Some(s) => Some(t.index(s, &i)?),
                            None => None,
                        };
                        let d = match &adj {
                            Some(d) => Some(t.index(d, &i)?),
                            None => None,
                        };
                        self.bwd_block(t, st, body, child, d, tape)?;
                        t.unit()
                    })?;
                    Ok(())
                })?;
                for (v, h) in captured.iter().zip(comps) {
                    self.contribute(t, st, *v, h)?;
                }
            }
            Expr::Accum { acc, body, .. } => {
                let child = a.body_of[&x];
                let s = a.role(x);
                let (da, dres) = split(t, adj.as_ref(), s.fst().has(Role::Tangent), s.snd().has(Role::Tangent))?;
                st.adj[acc.index()] = da;
                let tape = st.subs[x.index()].clone();
                self.bwd_block(t, st, body, child, dres, tape)?;
                st.adj[acc.index()] = None;
            }
            _ => {}
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn bwd_call(
        &self,
        t: &mut Tracer,
        st: &mut Bwd,
        x: VarId,
        func: FuncId,
        targs: &[Ty],
        args: &[VarId],
        adj: Option<Handle>,
    ) -> R<()> {
        let Some(c) = self.callees.get(&func) else { return Ok(()) };
        let map: BTreeMap<String, Ty> =
            c.bwd.generics.iter().map(|(g, _)| g.clone()).zip(targs.iter().cloned()).collect();
        let reg_base = t.registry().item(c.base).clone();
        let mut adj_args: Vec<Option<Handle>> = Vec::new();
        let mut any_adj = false;
        for (v, bty) in args.iter().zip(reg_base.param_types()) {
            if let Ty::Acc(_) = bty {
                let d = self.adjval(t, st, *v)?;
                any_adj |= d.is_some();
                adj_args.push(d);
            } else {
                adj_args.push(None);
            }
        }
        if adj.is_none() && !any_adj {
            return Ok(());
        }
        let ret_t = tangent_of(reg_base.ret());
        let out = match (&ret_t, adj) {
            (None, _) => None,
            (Some(_), Some(d)) => Some(d),
            (Some(ty), None) => Some(zero(t, &ty.subst(&map))?),
        };
        let tape = match &st.subs[x.index()] {
            Some(h) => h.clone(),
            None => t.unit()?,
        };
        // arguments whose adjoints are summed symbolically need a temporary accumulator
        let mut temps = Vec::new();
        for (k, (v, bty)) in args.iter().zip(reg_base.param_types()).enumerate() {
            if matches!(bty, Ty::Acc(_)) || tangent_of(&bty).is_none() {
                continue;
            }
            if !matches!(st.sinks[v.index()], Some(Sink::Acc(_))) {
                temps.push((k, tangent_of(&bty).unwrap().subst(&map)));
            }
        }
        let call = |t: &mut Tracer, st: &Bwd, temp_refs: &[Handle]| -> R<Handle> {
            let mut ops: Vec<Operand> = Vec::new();
            let mut next = 0;
            for (k, (v, bty)) in args.iter().zip(reg_base.param_types()).enumerate() {
                if let Ty::Acc(inner) = &bty {
                    if tangent_of(inner).is_some() {
                        let d = match &adj_args[k] {
                            Some(d) => d.clone(),
                            None => zero(t, &tangent_of(inner).unwrap().subst(&map))?,
                        };
                        ops.push(d.into());
                    }
                } else if tangent_of(&bty).is_some() {
                    if temps.get(next).is_some_and(|(j, _)| *j == k) {
                        ops.push(temp_refs[next].clone().into());
                        next += 1;
                    } else {
                        let Some(Sink::Acc(h)) = &st.sinks[v.index()] else { unreachable!() };
                        ops.push(h.clone().into());
                    }
                }
            }
            if let Some(d) = &out {
                ops.push(d.clone().into());
            }
            ops.push(tape.clone().into());
            t.call_with(&c.bwd, targs, &ops)
        };
        if temps.is_empty() {
            call(t, st, &[])?;
            return Ok(());
        }
        let zs = temps.iter().map(|(_, ty)| zero(t, ty)).collect::<R<Vec<_>>>()?;
        let seed = pack(t, &zs)?.expect("temporaries");
        let r = t.accum(&seed, |t, acc| {
            let refs = ref_unpack(t, &acc, temps.len())?;
            call(t, st, &refs)
        })?;
        let decayed = t.fst(&r)?;
        let parts = unpack(t, &decayed, temps.len())?;
        for ((k, _), h) in temps.iter().zip(parts) {
            self.contribute(t, st, args[*k], h)?;
        }
        Ok(())
    }
}

enum Part {
    Fst,
    Snd,
    Index(Handle),
}

/// Variables read by `lets` (and `result`) but bound outside them.
fn free_uses(lets: &[Let], result: VarId) -> std::collections::BTreeSet<VarId> {
    let mut used = std::collections::BTreeSet::from([result]);
    let mut bound = std::collections::BTreeSet::new();
    let b = Block {
        lets: lets.to_vec(),
        result,
    };
    b.visit(&mut |l: &Let| {
        bound.insert(l.var);
        used.extend(l.expr.operands());
        match &l.expr {
            Expr::For { index, body, .. } => {
                bound.insert(*index);
                used.insert(body.result);
            }
            Expr::Accum { acc, body, .. } => {
                bound.insert(*acc);
                used.insert(body.result);
            }
            _ => {}
        }
    });
    used.difference(&bound).copied().collect()
}

fn self_side(has: bool, f: impl FnOnce() -> Handle) -> Option<Handle> {
    has.then(f)
}

fn ref_unpack(t: &mut Tracer, h: &Handle, n: usize) -> R<Vec<Handle>> {
    let mut out = Vec::new();
    let mut cur = h.clone();
    for _ in 1..n {
        out.push(t.ref_fst(&cur)?);
        cur = t.ref_snd(&cur)?;
    }
    if n > 0 {
        out.push(cur);
    }
    Ok(out)
}

/// The tangent part of an unlifted type: its `Real` leaves.
pub(crate) fn tangent_of(ty: &Ty) -> Option<Ty> {
    match ty {
        Ty::Real => Some(Ty::Real),
        Ty::Pair(a, b) => match (tangent_of(a), tangent_of(b)) {
            (Some(a), Some(b)) => Some(Ty::pair(a, b)),
            (a, b) => a.or(b),
        },
        Ty::Arr(i, e) => tangent_of(e).map(|e| Ty::arr((**i).clone(), e)),
        Ty::Acc(x) => tangent_of(x).map(Ty::acc),
        _ => None,
    }
}
