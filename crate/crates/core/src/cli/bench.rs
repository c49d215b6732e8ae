use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{CliError, Report};
use crate::autodiff::vjp;
use crate::builder::{BuildError, FuncHandle, Handle, RecordType, Tracer};
use crate::exec::{compile, Value};
use crate::ir::{Block, Expr, FuncDef, FuncId, Let, Registry, Ty, VarId};
use crate::opt::simplify_registry;

type R<T> = Result<T, BuildError>;

fn sqr(t: &mut Tracer, x: &Handle) -> R<Handle> {
    t.mul(x, x)
}

/// `sum_i (y_i - b0 - sum_j x_ij b_j)^2` over a record `{x, y, b0, b}`.
pub fn least_squares(t: &mut Tracer, m: usize, n: usize) -> R<(FuncHandle, RecordType)> {
    let rec = RecordType::new(&[
        ("x", Ty::vec(n, Ty::vec(m, Ty::Real))),
        ("y", Ty::vec(n, Ty::Real)),
        ("b0", Ty::Real),
        ("b", Ty::vec(m, Ty::Real)),
    ]);
    let rc = rec.clone();
    let f = t.define_fn(&format!("least_squares_{m}x{n}"), &[rec.ty()], Ty::Real, |t, ps| {
        let x = t.field(&ps[0], &rc, "x")?;
        let y = t.field(&ps[0], &rc, "y")?;
        let b0 = t.field(&ps[0], &rc, "b0")?;
        let b = t.field(&ps[0], &rc, "b")?;
        t.sum(n, |t, i| {
            let row = t.index(&x, &i)?;
            let dot = t.sum(m, |t, j| {
                let xij = t.index(&row, &j)?;
                let bj = t.index(&b, &j)?;
                t.mul(&xij, &bj)
            })?;
            let y_hat = t.add(&b0, &dot)?;
            let yi = t.index(&y, &i)?;
            let e = t.sub(&yi, &y_hat)?;
            sqr(t, &e)
        })
    })?;
    Ok((f, rec))
}

/// One stage of the scaling chain: a shared constant and 33 rounds of `y - c*y*y`.
fn stage(t: &mut Tracer, x: &Handle) -> R<Handle> {
    let c = t.real(0.01)?;
    let mut y = x.clone();
    for _ in 0..33 {
        let yy = t.mul(&y, &y)?;
        let d = t.mul(&c, &yy)?;
        y = t.sub(&y, &d)?;
    }
    Ok(y)
}

/// Reference macro-expander: splice the body of every non-generic callee into
/// the caller, recursively, copying every let.
pub fn inline_calls(reg: &Registry, def: &FuncDef) -> FuncDef {
    let mut next = def.var_bound();
    let mut alias = BTreeMap::new();
    let body = expand(reg, &def.body, &mut next, &mut alias);
    let mut out = def.clone();
    out.body = body.map_vars(&mut |mut v| {
        while let Some(w) = alias.get(&v) {
            v = *w;
        }
        v
    });
    out.normalize()
}

fn expand(reg: &Registry, b: &Block, next: &mut u32, alias: &mut BTreeMap<VarId, VarId>) -> Block {
    let mut lets = Vec::new();
    for l in &b.lets {
        let expr = match &l.expr {
            Expr::Call { func, targs, args } if targs.is_empty() && reg.def(*func).is_some() => {
                let callee = reg.def(*func).unwrap();
                let base = *next;
                *next += callee.var_bound();
                let body = callee.body.map_vars(&mut |v| VarId(v.0 + base));
                for ((p, _), a) in callee.params.iter().zip(args) {
                    alias.insert(VarId(p.0 + base), *a);
                }
                let inner = expand(reg, &body, next, alias);
                lets.extend(inner.lets);
                alias.insert(l.var, inner.result);
                continue;
            }
            Expr::For { index, index_ty, body } => Expr::For {
                index: *index,
                index_ty: index_ty.clone(),
                body: expand(reg, body, next, alias),
            },
            Expr::Accum { acc, from, body } => Expr::Accum {
                acc: *acc,
                from: *from,
                body: expand(reg, body, next, alias),
            },
            e => e.clone(),
        };
        lets.push(Let {
            var: l.var,
            ty: l.ty.clone(),
            expr,
        });
    }
    Block { lets, result: b.result }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingReport {
    pub callee_lets: usize,
    pub calls: usize,
    /// Lets in the traced callee and caller.
    pub traced_lets: usize,
    /// Lets in the monomorphized program the executor runs, summed over instances.
    pub lowered_lets: usize,
    /// Lets in the simplified JVP, forward and backward definitions of the gradient.
    pub gradient_lets: usize,
    /// Lets in the caller after the reference expander inlines every call.
    pub inlined_lets: usize,
    pub instance_count: usize,
    pub reachable_pairs: usize,
    pub transform_seconds: f64,
}

fn def_lets(reg: &Registry, ids: impl IntoIterator<Item = FuncId>) -> usize {
    ids.into_iter().filter_map(|id| reg.def(id)).map(|d| d.let_count()).sum()
}

/// A caller applying a 100-let function `calls` times, against the same chain
/// with every call expanded in place.
pub fn bench_scaling(calls: usize) -> Result<ScalingReport, CliError> {
    let mut t = Tracer::new();
    let block = t.define_fn("stage", &[Ty::Real], Ty::Real, |t, ps| stage(t, &ps[0]))?;
    let chain = t.define_fn("chain", &[Ty::Real], Ty::Real, |t, ps| {
        let mut y = ps[0].clone();
        for _ in 0..calls {
            y = t.call(&block, &[(&y).into()])?;
        }
        Ok(y)
    })?;
    let callee_lets = def_lets(t.registry(), [block.id]);
    let traced_lets = def_lets(t.registry(), [block.id, chain.id]);
    let inlined_lets = t.registry().def(chain.id).map_or(0, |d| inline_calls(t.registry(), d).let_count());

    let before = t.registry().len();
    let start = Instant::now();
    let grad = gradient_def(&mut t, &chain, "chain_grad")?;
    let transform_seconds = start.elapsed().as_secs_f64();
    let mut reg = t.into_registry();
    let added: Vec<FuncId> = reg.ids().skip(before).filter(|id| *id != grad).collect();
    simplify_registry(&mut reg, &added);

    let c = compile(&reg, chain.id)?;
    Ok(ScalingReport {
        callee_lets,
        calls,
        traced_lets,
        lowered_lets: c.op_count().static_total(),
        gradient_lets: def_lets(&reg, added),
        inlined_lets,
        instance_count: c.instance_count(),
        reachable_pairs: reg.reachable(&[chain.id]).len(),
        transform_seconds,
    })
}

pub(crate) fn gradient_def(t: &mut Tracer, f: &FuncHandle, name: &str) -> Result<FuncId, CliError> {
    let fc = f.clone();
    let p = f.params[0].clone();
    let g = t.define_fn(name, &[p.clone()], p, |t, ps| {
        let v = vjp(t, &fc, &ps[0]).map_err(BuildError::from)?;
        v.grad(t, 1.0).map_err(BuildError::from)
    })?;
    Ok(g.id)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpcountRow {
    pub n: usize,
    pub m: usize,
    pub primal_ops: u64,
    pub gradient_ops: u64,
    pub ratio: f64,
}

/// Dynamic primitive counts for the least-squares loss and its full gradient
/// at each `n`, on seeded random data.
pub fn bench_opcount(sizes: &[usize], m: usize, seed: u64) -> Result<Vec<OpcountRow>, CliError> {
    let mut rows = Vec::new();
    for &n in sizes {
        let mut t = Tracer::new();
        let (f, _) = least_squares(&mut t, m, n)?;
        let g = gradient_def(&mut t, &f, "least_squares_grad")?;
        let mut reg = t.into_registry();
        simplify_registry(&mut reg, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ n as u64);
        let mut reals = |k: usize| Value::reals(&(0..k).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
        let x = Value::array((0..n).map(|_| reals(m)).collect());
        let y = reals(n);
        let b0 = Value::Real(0.25);
        let b = reals(m);
        let arg = Value::pair(x, Value::pair(y, Value::pair(b0, b)));
        let (_, pc) = compile(&reg, f.id)?.run(vec![arg.clone()])?;
        let (_, gc) = compile(&reg, g)?.run(vec![arg])?;
        let (p, q) = (pc.dynamic_total(), gc.dynamic_total());
        rows.push(OpcountRow {
            n,
            m,
            primal_ops: p,
            gradient_ops: q,
            ratio: q as f64 / p.max(1) as f64,
        });
    }
    Ok(rows)
}

pub(crate) fn scaling_report() -> Result<Report, CliError> {
    let s = bench_scaling(50)?;
    let mut rep = Report::new();
    rep.push("suite", "scaling");
    rep.push("callee_lets", s.callee_lets);
    rep.push("calls", s.calls);
    rep.push("traced_lets", s.traced_lets);
    rep.push("lowered_lets", s.lowered_lets);
    rep.push("gradient_lets", s.gradient_lets);
    rep.push("inlined_lets", s.inlined_lets);
    rep.push("instance_count", s.instance_count);
    rep.push("reachable_pairs", s.reachable_pairs);
    rep.push("transform_seconds", s.transform_seconds);
    Ok(rep)
}

pub(crate) fn opcount_report(seed: u64) -> Result<Report, CliError> {
    let rows = bench_opcount(&[50, 200], 3, seed)?;
    let mut rep = Report::new();
    rep.push("suite", "opcount");
    for r in &rows {
        rep.push(&format!("n{}_primal_ops", r.n), r.primal_ops);
        rep.push(&format!("n{}_gradient_ops", r.n), r.gradient_ops);
        rep.push(&format!("n{}_ratio", r.n), r.ratio);
    }
    if let [a, b] = rows.as_slice() {
        rep.push("ratio_drift", json!((b.ratio - a.ratio).abs() / a.ratio));
    }
    Ok(rep)
}
