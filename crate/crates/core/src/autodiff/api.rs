use super::transpose::{tangent_of, zero};
use super::{lift_jvp, transpose, AdError};
use crate::builder::{FuncHandle, Handle, Operand, Tracer};
use crate::ir::{FuncId, Ty};

/// A traced call to the forward pass of `f`, ready to be pulled back.
#[derive(Clone, Debug)]
pub struct Vjp {
    /// Primal result.
    pub ret: Handle,
    pub fwd: FuncId,
    pub bwd: FuncId,
    tape: Handle,
    x: Handle,
    bwd_handle: FuncHandle,
    targs: Vec<Ty>,
}

/// Trace `f(x)` through its forward pass. `f` must take one parameter.
pub fn vjp(t: &mut Tracer, f: &FuncHandle, x: impl Into<Operand>) -> Result<Vjp, AdError> {
    if f.params.len() != 1 {
        return Err(AdError::MultiParamVjp(f.params.len()));
    }
    let jvp = lift_jvp(t, f.id)?;
    let tr = transpose(t, jvp)?;
    let fwd = t.func_handle(tr.fwd).ok_or(AdError::UnknownFunction(tr.fwd.0))?;
    let bwd_handle = t.func_handle(tr.bwd).ok_or(AdError::UnknownFunction(tr.bwd.0))?;
    let x = match x.into() {
        Operand::Handle(h) => h,
        Operand::Real(c) => t.real(c)?,
        Operand::Fin(_) => return Err(AdError::NotDifferentiable(t.registry().name(f.id).to_string())),
    };
    let targs = infer_targs(f, x.ty());
    let r = t.call_with(&fwd, &targs, &[(&x).into()])?;
    let ret = t.fst(&r)?;
    let tape = t.snd(&r)?;
    Ok(Vjp {
        ret,
        fwd: tr.fwd,
        bwd: tr.bwd,
        tape,
        x,
        bwd_handle,
        targs,
    })
}

fn infer_targs(f: &FuncHandle, arg: &Ty) -> Vec<Ty> {
    let mut map = std::collections::BTreeMap::new();
    let _ = crate::builder::unify(&f.params[0], arg, &f.generics, &mut map);
    f.generics.iter().map(|(g, _)| map.get(g).cloned().unwrap_or(Ty::Unit)).collect()
}

impl Vjp {
    /// Pull the output adjoint `dy` back to the gradient with respect to `x`.
    /// Each call emits one backward call over the same tape.
    pub fn grad(&self, t: &mut Tracer, dy: impl Into<Operand>) -> Result<Handle, AdError> {
        let pty = self.x.ty().clone();
        let tan = tangent_of(&pty).ok_or_else(|| AdError::NotDifferentiable(format!("parameter of type `{pty}`")))?;
        let dy = match dy.into() {
            Operand::Handle(h) => Some(h),
            Operand::Real(c) => Some(t.real(c)?),
            Operand::Fin(_) => None,
        };
        let out = tangent_of(self.ret.ty()).is_some();
        let from = if tan == pty { self.x.clone() } else { zero(t, &tan)? };
        let r = t.accum(&from, |t, acc| {
            let mut ops: Vec<Operand> = vec![acc.into()];
            if out {
                ops.push(dy.clone().expect("output adjoint").into());
            }
            ops.push((&self.tape).into());
            t.call_with(&self.bwd_handle, &self.targs, &ops)
        })?;
        Ok(t.fst(&r)?)
    }
}

/// Hessian of a scalar function of `Arr(Fin n, Real)`, as an `n x n` array.
pub fn hessian(t: &mut Tracer, f: &FuncHandle, n: usize, x: impl Into<Operand>) -> Result<Handle, AdError> {
    let arr = Ty::vec(n, Ty::Real);
    if f.params.len() != 1 {
        return Err(AdError::MultiParamVjp(f.params.len()));
    }
    let fc = f.clone();
    let g = t.define_fn(&format!("grad_{}", t.registry().name(f.id)), &[arr.clone()], arr.clone(), |t, ps| {
        let v = vjp(t, &fc, &ps[0]).map_err(crate::builder::BuildError::from)?;
        v.grad(t, 1.0).map_err(crate::builder::BuildError::from)
    })?;
    let x = match x.into() {
        Operand::Handle(h) => h,
        _ => return Err(AdError::NotDifferentiable("hessian point".into())),
    };
    let v = vjp(t, &g, &x)?;
    let rows: Vec<Handle> = (0..n)
        .map(|k| {
            let e = basis(t, n, k)?;
            v.grad(t, &e)
        })
        .collect::<Result<_, AdError>>()?;
    Ok(t.vec_of(arr, &rows)?)
}

fn basis(t: &mut Tracer, n: usize, k: usize) -> Result<Handle, AdError> {
    let hs: Vec<Operand> = (0..n).map(|j| Operand::Real(if j == k { 1.0 } else { 0.0 })).collect();
    Ok(t.vec(&hs)?)
}
