use super::{BuildError, FuncHandle, Tracer};
use crate::ir::Ty;

type R<T> = Result<T, BuildError>;

/// Opaque libm functions with custom dual JVPs, bound to the standard host routines.
#[derive(Clone, Debug)]
pub struct StdMath {
    pub sin: FuncHandle,
    pub cos: FuncHandle,
    pub exp: FuncHandle,
    pub log: FuncHandle,
    pub pow: FuncHandle,
}

fn dual_fn(
    t: &mut Tracer,
    name: &str,
    arity: usize,
    body: impl FnOnce(&mut Tracer, &[(super::Handle, super::Handle)]) -> R<(super::Handle, super::Handle)>,
) -> R<FuncHandle> {
    let params = vec![Ty::dual(); arity];
    t.define_fn(name, &params, Ty::dual(), |t, ps| {
        let mut parts = Vec::new();
        for p in ps {
            parts.push((t.fst(p)?, t.snd(p)?));
        }
        let (re, du) = body(t, &parts)?;
        t.pair(&re, &du)
    })
}

impl StdMath {
    /// Declare the functions in the tracer's registry (which must have the std hosts bound).
    pub fn define(t: &mut Tracer) -> R<StdMath> {
        let sin = t.define_opaque("sin", &[Ty::Real], Ty::Real, "sin")?;
        let cos = t.define_opaque("cos", &[Ty::Real], Ty::Real, "cos")?;
        let exp = t.define_opaque("exp", &[Ty::Real], Ty::Real, "exp")?;
        let log = t.define_opaque("log", &[Ty::Real], Ty::Real, "log")?;
        let pow = t.define_opaque("pow", &[Ty::Real, Ty::Real], Ty::Real, "pow")?;

        let d = dual_fn(t, "jvp_sin", 1, |t, p| {
            let (x, dx) = &p[0];
            let y = t.call(&sin, &[x.into()])?;
            let c = t.call(&cos, &[x.into()])?;
            Ok((y, t.mul(dx, &c)?))
        })?;
        t.set_jvp(&sin, &d)?;
        let d = dual_fn(t, "jvp_cos", 1, |t, p| {
            let (x, dx) = &p[0];
            let y = t.call(&cos, &[x.into()])?;
            let s = t.call(&sin, &[x.into()])?;
            let ns = t.neg(&s)?;
            Ok((y, t.mul(dx, &ns)?))
        })?;
        t.set_jvp(&cos, &d)?;
        let d = dual_fn(t, "jvp_exp", 1, |t, p| {
            let (x, dx) = &p[0];
            let y = t.call(&exp, &[x.into()])?;
            Ok((y.clone(), t.mul(dx, &y)?))
        })?;
        t.set_jvp(&exp, &d)?;
        let d = dual_fn(t, "jvp_log", 1, |t, p| {
            let (x, dx) = &p[0];
            let y = t.call(&log, &[x.into()])?;
            Ok((y, t.div(dx, x)?))
        })?;
        t.set_jvp(&log, &d)?;
        let d = dual_fn(t, "jvp_pow", 2, |t, p| {
            let ((x, dx), (y, dy)) = (&p[0], &p[1]);
            let z = t.call(&pow, &[x.into(), y.into()])?;
            let q = t.div(y, x)?;
            let a = t.mul(dx, &q)?;
            let l = t.call(&log, &[x.into()])?;
            let b = t.mul(dy, &l)?;
            let dw = t.add(&a, &b)?;
            Ok((z.clone(), t.mul(&dw, &z)?))
        })?;
        t.set_jvp(&pow, &d)?;
        Ok(StdMath { sin, cos, exp, log, pow })
    }
}

/// `sqrt` whose derivative clamps the denominator at `1e-5`, so the gradient
/// at zero is large but finite.
pub fn clamped_sqrt(t: &mut Tracer) -> R<FuncHandle> {
    let sqrt = t.define_fn("sqrt", &[Ty::Real], Ty::Real, |t, p| t.sqrt(&p[0]))?;
    let d = dual_fn(t, "jvp_sqrt", 1, |t, p| {
        let (x, dx) = &p[0];
        let y = t.call(&sqrt, &[x.into()])?;
        let eps = t.real(1e-5)?;
        let big = t.gt(&eps, &y)?;
        let m = t.select(&big, &eps, &y)?;
        let half = t.real(0.5)?;
        let k = t.div(&half, &m)?;
        Ok((y, t.mul(dx, &k)?))
    })?;
    t.set_jvp(&sqrt, &d)?;
    Ok(sqrt)
}
