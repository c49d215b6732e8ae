use super::{check_generics, AdError};
use crate::builder::{BuildError, Handle, Tracer};
use crate::ir::{BinaryOp, Block, Expr, FuncDef, FuncId, Item, Let, Origin, Ty, UnaryOp, VarId};

type Env = Vec<Option<Handle>>;

/// The dual JVP of `f`: every `Real` becomes a `(primal, tangent)` pair.
/// A registered custom derivative is returned as is; results are memoized.
pub fn lift_jvp(t: &mut Tracer, f: FuncId) -> Result<FuncId, AdError> {
    if let Some(c) = t.registry().custom_jvp(f) {
        return Ok(c);
    }
    if let Some(&id) = t.registry().memo().lifted.get(&f) {
        return Ok(id);
    }
    let def = match t.registry().get(f) {
        Some(Item::Def(d)) => d.clone(),
        Some(Item::Opaque(o)) => return Err(AdError::MissingDerivative(o.name.clone())),
        None => return Err(AdError::UnknownFunction(f.0)),
    };
    check_generics(t.registry(), f)?;
    for g in t.registry().callees(f) {
        lift_jvp(t, g)?;
    }
    let params: Vec<Ty> = def.params.iter().map(|(_, ty)| ty.lift()).collect();
    let name = format!("jvp_{}", def.name);
    let h = t.define_derived(&name, def.generics.clone(), &params, def.ret.lift(), Origin::Lifted(f), |t, ps| {
        let mut env: Env = vec![None; def.var_bound() as usize];
        for ((v, _), h) in def.params.iter().zip(ps) {
            env[v.index()] = Some(h.clone());
            name_like(t, &def, *v, h);
        }
        block(t, &def, &mut env, &def.body)
    })?;
    t.registry_mut().memo.lifted.insert(f, h.id);
    Ok(h.id)
}

fn name_like(t: &mut Tracer, def: &FuncDef, v: VarId, h: &Handle) {
    if let Some(n) = def.names.get(&v) {
        let _ = t.name(h, n);
    }
}

fn get(env: &Env, v: VarId) -> Handle {
    env[v.index()].clone().expect("lifted operand is bound")
}

fn block(t: &mut Tracer, def: &FuncDef, env: &mut Env, b: &Block) -> Result<Handle, BuildError> {
    for l in &b.lets {
        let h = lift_let(t, def, env, l)?;
        name_like(t, def, l.var, &h);
        env[l.var.index()] = Some(h);
    }
    Ok(get(env, b.result))
}

fn split(t: &mut Tracer, x: &Handle) -> Result<(Handle, Handle), BuildError> {
    Ok((t.fst(x)?, t.snd(x)?))
}

fn lift_let(t: &mut Tracer, def: &FuncDef, env: &mut Env, l: &Let) -> Result<Handle, BuildError> {
    let e = &l.expr;
    match e {
        Expr::Unit => t.unit(),
        Expr::True => t.boolean(true),
        Expr::False => t.boolean(false),
        Expr::Fin(m) => match l.ty {
            Ty::Fin(n) => t.fin(*m, n),
            _ => unreachable!("index literal has a sized type"),
        },
        Expr::Const(c) => {
            let c = t.real(c.0)?;
            let z = t.real(0.0)?;
            t.pair(&c, &z)
        }
        Expr::Array(xs) => {
            let hs: Vec<Handle> = xs.iter().map(|v| get(env, *v)).collect();
            let Ty::Arr(_, elem) = &l.ty else { unreachable!() };
            t.vec_of(elem.lift(), &hs)
        }
        Expr::Pair(a, b) => t.pair(get(env, *a), get(env, *b)),
        Expr::Unary(UnaryOp::Not, x) => t.not(get(env, *x)),
        Expr::Unary(op, x) => {
            let (a, da) = split(t, &get(env, *x))?;
            let (r, dr) = match op {
                UnaryOp::Neg => (t.neg(&a)?, t.neg(&da)?),
                UnaryOp::Abs => {
                    let s = t.sgn(&a)?;
                    (t.abs(&a)?, t.mul(&da, &s)?)
                }
                UnaryOp::Sqrt => {
                    let r = t.sqrt(&a)?;
                    let rr = t.add(&r, &r)?;
                    let dr = t.div(&da, &rr)?;
                    (r, dr)
                }
                _ => (t.unary(*op, &a)?, t.real(0.0)?),
            };
            t.pair(&r, &dr)
        }
        Expr::Binary(op, x, y) if op.is_logic() => t.binary(*op, get(env, *x), get(env, *y)),
        Expr::Binary(op, x, y) => {
            let (a, da) = split(t, &get(env, *x))?;
            let (b, db) = split(t, &get(env, *y))?;
            if op.is_comparison() {
                return t.binary(*op, &a, &b);
            }
            let (r, dr) = match op {
                BinaryOp::Add => (t.add(&a, &b)?, t.add(&da, &db)?),
                BinaryOp::Sub => (t.sub(&a, &b)?, t.sub(&da, &db)?),
                BinaryOp::Mul => {
                    let p = t.mul(&da, &b)?;
                    let q = t.mul(&db, &a)?;
                    (t.mul(&a, &b)?, t.add(&p, &q)?)
                }
                BinaryOp::Div => {
                    let p = t.mul(&da, &b)?;
                    let q = t.mul(&db, &a)?;
                    let n = t.sub(&p, &q)?;
                    let d = t.mul(&b, &b)?;
                    (t.div(&a, &b)?, t.div(&n, &d)?)
                }
                _ => unreachable!("arithmetic operator"),
            };
            t.pair(&r, &dr)
        }
        Expr::Select(p, x, y) => t.select(get(env, *p), get(env, *x), get(env, *y)),
        Expr::Accumulate(a, v) => t.accumulate(&get(env, *a), get(env, *v)),
        Expr::Index(a, i) => t.index(&get(env, *a), get(env, *i)),
        Expr::Fst(x) => t.fst(&get(env, *x)),
        Expr::Snd(x) => t.snd(&get(env, *x)),
        Expr::RefIndex(a, i) => t.ref_index(&get(env, *a), get(env, *i)),
        Expr::RefFst(x) => t.ref_fst(&get(env, *x)),
        Expr::RefSnd(x) => t.ref_snd(&get(env, *x)),
        Expr::Call { func, targs, args } => {
            let lifted = t.registry().custom_jvp(*func).or_else(|| t.registry().memo().lifted.get(func).copied());
            let lifted = lifted.expect("callees are lifted first");
            let fh = t.func_handle(lifted).expect("registered");
            let args: Vec<_> = args.iter().map(|v| get(env, *v).into()).collect();
            t.call_with(&fh, targs, &args)
        }
        Expr::For { index, index_ty, body } => t.array(index_ty.clone(), |t, i| {
            env[index.index()] = Some(i);
            block(t, def, env, body)
        }),
        Expr::Accum { acc, from, body } => {
            let from = get(env, *from);
            t.accum(&from, |t, a| {
                env[acc.index()] = Some(a);
                block(t, def, env, body)
            })
        }
    }
}
