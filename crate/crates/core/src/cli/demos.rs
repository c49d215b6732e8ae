use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::bench::least_squares;
use super::{CliError, DemoConfig, Report, Status};
use crate::autodiff::{hessian, vjp};
use crate::builder::{BuildError, FuncHandle, Operand, RecordType, StdMath, Tracer};
use crate::exec::{Callable, Value};
use crate::ir::{Registry, Ty};

/// First dataset of Anscombe's quartet.
pub const ANSCOMBE_X: [f64; 11] = [10.0, 8.0, 13.0, 9.0, 11.0, 14.0, 6.0, 4.0, 12.0, 7.0, 5.0];
pub const ANSCOMBE_Y: [f64; 11] = [8.04, 6.95, 7.58, 8.81, 8.33, 9.96, 7.24, 4.26, 10.84, 4.82, 5.68];

fn consts(t: &mut Tracer, xs: &[f64]) -> Result<crate::builder::Handle, BuildError> {
    let ops: Vec<Operand> = xs.iter().map(|x| Operand::Real(*x)).collect();
    t.vec(&ops)
}

/// Loss `g(beta)` and gradient `h(beta)` over fixed data, as in the
/// least-squares example: `x` rows and `y` are baked in as constants.
pub(crate) struct LinregFns {
    pub loss: FuncHandle,
    pub grad: FuncHandle,
}

pub(crate) fn build_linreg(t: &mut Tracer, x: &[Vec<f64>], y: &[f64]) -> Result<LinregFns, CliError> {
    let (n, m) = (y.len(), x.first().map_or(0, Vec::len));
    if n == 0 || x.len() != n || x.iter().any(|r| r.len() != m) {
        return Err(CliError::Config("data must be a non-empty n x m matrix with n targets".into()));
    }
    let (f, data) = least_squares(t, m, n)?;
    let beta = RecordType::new(&[("b0", Ty::Real), ("b", Ty::vec(m, Ty::Real))]);
    let (bt, dc) = (beta.clone(), data.clone());
    let loss = t.define_fn("g", &[beta.ty()], Ty::Real, |t, ps| {
        let b0 = t.field(&ps[0], &bt, "b0")?;
        let b = t.field(&ps[0], &bt, "b")?;
        let mut rows = Vec::new();
        for r in x {
            rows.push(consts(t, r)?);
        }
        let xs = t.vec_of(Ty::vec(m, Ty::Real), &rows)?;
        let ys = consts(t, y)?;
        let rec = t.record(&dc, &[(&xs).into(), (&ys).into(), (&b0).into(), (&b).into()])?;
        t.call(&f, &[(&rec).into()])
    })?;
    let lc = loss.clone();
    let grad = t.define_fn("h", &[beta.ty()], beta.ty(), |t, ps| {
        let v = vjp(t, &lc, &ps[0]).map_err(BuildError::from)?;
        v.grad(t, 1.0).map_err(BuildError::from)
    })?;
    Ok(LinregFns { loss, grad })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinregResult {
    pub b0: f64,
    pub b: Vec<f64>,
    pub iterations: u64,
    pub loss: f64,
    pub converged: bool,
}

fn beta_value(b0: f64, b: &[f64]) -> Value {
    Value::pair(Value::Real(b0), Value::reals(b))
}

fn split_beta(v: &Value) -> Result<(f64, Vec<f64>), CliError> {
    let bad = || CliError::Invalid("gradient has an unexpected shape".into());
    let (a, b) = v.as_pair().ok_or_else(bad)?;
    let mut leaves = Vec::new();
    b.real_leaves(&mut leaves);
    Ok((a.as_real().ok_or_else(bad)?, leaves))
}

/// Gradient descent on the least-squares loss from `start` (zeros by default)
/// until the update is a fixed point, moves less than `cfg.tol`, or hits the cap.
pub fn fit_linreg(x: &[Vec<f64>], y: &[f64], cfg: &DemoConfig, start: Option<(f64, Vec<f64>)>) -> Result<LinregResult, CliError> {
    cfg.validate()?;
    let mut t = Tracer::new();
    let fns = build_linreg(&mut t, x, y)?;
    let grad = t.compile(&fns.grad)?;
    let loss = t.compile(&fns.loss)?;
    let m = x[0].len();
    let (mut b0, mut b) = start.unwrap_or((0.0, vec![0.0; m]));
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let g = grad.invoke_values(vec![beta_value(b0, &b)])?;
        let (g0, gb) = split_beta(&g)?;
        let nb0 = b0 - cfg.eta * g0;
        let nb: Vec<f64> = b.iter().zip(&gb).map(|(bi, gi)| bi - cfg.eta * gi).collect();
        iterations += 1;
        let step = b.iter().zip(&nb).map(|(p, q)| (p - q).abs()).fold((b0 - nb0).abs(), f64::max);
        if !step.is_finite() {
            break;
        }
        let fixed = nb0 == b0 && nb == b;
        b0 = nb0;
        b = nb;
        if fixed || step <= cfg.tol {
            converged = true;
            break;
        }
    }
    let loss = loss.invoke_values(vec![beta_value(b0, &b)])?.as_real().unwrap_or(f64::NAN);
    Ok(LinregResult {
        b0,
        b,
        iterations,
        loss,
        converged,
    })
}

/// Least-squares fit of the first Anscombe dataset by gradient descent.
pub fn linreg(cfg: &DemoConfig) -> Result<Report, CliError> {
    let x: Vec<Vec<f64>> = ANSCOMBE_X.iter().map(|v| vec![*v]).collect();
    let r = fit_linreg(&x, &ANSCOMBE_Y, cfg, None)?;
    let mut rep = Report::new();
    rep.push("demo", "linreg");
    rep.push("b0", r.b0);
    rep.push("b", json!(r.b));
    rep.push("iterations", r.iterations);
    rep.push("loss", r.loss);
    rep.push("converged", r.converged);
    if !r.converged {
        rep.status = Status::NotConverged;
    }
    Ok(rep)
}

/// `f(v) = pow(v0, v1)` with its gradient `g`, Hessian `h` and the record-valued `all`.
pub(crate) struct QuadraticFns {
    pub f: FuncHandle,
    pub all: FuncHandle,
    pub out: RecordType,
}

pub(crate) fn build_quadratic(t: &mut Tracer) -> Result<QuadraticFns, CliError> {
    let math = StdMath::define(t)?;
    let r2 = Ty::vec(2, Ty::Real);
    let r22 = Ty::vec(2, r2.clone());
    let f = t.define_fn("f", &[r2.clone()], Ty::Real, |t, ps| {
        let x = t.index(&ps[0], 0usize)?;
        let y = t.index(&ps[0], 1usize)?;
        t.call(&math.pow, &[(&x).into(), (&y).into()])
    })?;
    let fc = f.clone();
    let g = t.define_fn("g", &[r2.clone()], r2.clone(), |t, ps| {
        let v = vjp(t, &fc, &ps[0]).map_err(BuildError::from)?;
        v.grad(t, 1.0).map_err(BuildError::from)
    })?;
    let gc = g.clone();
    let h = t.define_fn("h", &[r2.clone()], r22.clone(), |t, ps| {
        let v = vjp(t, &gc, &ps[0]).map_err(BuildError::from)?;
        let e0 = t.vec(&[1.0.into(), 0.0.into()])?;
        let e1 = t.vec(&[0.0.into(), 1.0.into()])?;
        let a = v.grad(t, &e0).map_err(BuildError::from)?;
        let b = v.grad(t, &e1).map_err(BuildError::from)?;
        t.vec_of(r2.clone(), &[a, b])
    })?;
    let out = RecordType::new(&[("z", Ty::Real), ("g", Ty::vec(2, Ty::Real)), ("h", r22)]);
    let (fc, gc, hc, oc) = (f.clone(), g.clone(), h.clone(), out.clone());
    let all = t.define_fn("all", &[Ty::Real, Ty::Real], out.ty(), |t, ps| {
        let v = t.vec(&[(&ps[0]).into(), (&ps[1]).into()])?;
        let z = t.call(&fc, &[(&v).into()])?;
        let g = t.call(&gc, &[(&v).into()])?;
        let h = t.call(&hc, &[(&v).into()])?;
        t.record(&oc, &[(&z).into(), (&g).into(), (&h).into()])
    })?;
    Ok(QuadraticFns { f, all, out })
}

/// Value, gradient and Hessian of `x^y` at `(x, y)` via the record-valued `all`.
pub fn quadratic_at(x: f64, y: f64) -> Result<(f64, [f64; 2], [[f64; 2]; 2]), CliError> {
    let mut t = Tracer::new();
    let q = build_quadratic(&mut t)?;
    let shape = q.out.shape().ok_or_else(|| CliError::Invalid("unmarshallable record".into()))?;
    let c: Callable = t.compile(&q.all)?;
    let params = c.param_shapes().to_vec();
    let c = c.with_shapes(params, shape)?;
    let out = c.invoke(&[json!(x), json!(y)])?;
    let num = |v: &serde_json::Value| v.as_f64().unwrap_or(f64::NAN);
    let z = num(&out["z"]);
    let g = [num(&out["g"][0]), num(&out["g"][1])];
    let h = [[num(&out["h"][0][0]), num(&out["h"][0][1])], [num(&out["h"][1][0]), num(&out["h"][1][1])]];
    Ok((z, g, h))
}

/// Hessian through the generic helper instead of the hand-written `h`; used as a cross-check.
pub fn quadratic_hessian_generic(x: f64, y: f64) -> Result<[[f64; 2]; 2], CliError> {
    let mut t = Tracer::new();
    let q = build_quadratic(&mut t)?;
    let fc = q.f.clone();
    let hh = t.define_fn("hess", &[Ty::vec(2, Ty::Real)], Ty::vec(2, Ty::vec(2, Ty::Real)), |t, ps| {
        hessian(t, &fc, 2, &ps[0]).map_err(BuildError::from)
    })?;
    let out = t.compile(&hh)?.invoke(&[json!([x, y])])?;
    let num = |v: &serde_json::Value| v.as_f64().unwrap_or(f64::NAN);
    Ok([[num(&out[0][0]), num(&out[0][1])], [num(&out[1][0]), num(&out[1][1])]])
}

pub fn quadratic() -> Result<Report, CliError> {
    let (z, g, h) = quadratic_at(2.0, 3.0)?;
    let mut rep = Report::new();
    rep.push("demo", "quadratic");
    rep.push("x", json!([2.0, 3.0]));
    rep.push("z", z);
    rep.push("g", json!(g));
    rep.push("h", json!(h));
    rep.push("asymmetry", (h[0][1] - h[1][0]).abs());
    Ok(rep)
}

/// One-dimensional damped spring integrated with explicit Euler from rest position 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SpringParams {
    pub mass: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub dt: f64,
    pub steps: usize,
    pub target: f64,
}

impl Default for SpringParams {
    fn default() -> Self {
        SpringParams {
            mass: 1.0,
            stiffness: 4.0,
            damping: 0.1,
            dt: 0.05,
            steps: 100,
            target: 0.5,
        }
    }
}

/// `loss(v0) = (x_T - target)^2`, with the time loop unrolled on the host,
/// plus its gradient.
pub(crate) fn build_spring(t: &mut Tracer, p: &SpringParams) -> Result<(FuncHandle, FuncHandle), CliError> {
    let pc = p.clone();
    let loss = t.define_fn("spring", &[Ty::Real], Ty::Real, |t, ps| {
        let mut x = t.real(0.0)?;
        let mut v = ps[0].clone();
        for _ in 0..pc.steps {
            let kx = t.mul(&x, pc.stiffness)?;
            let cv = t.mul(&v, pc.damping)?;
            let force = t.add(&kx, &cv)?;
            let acc = t.div(&force, pc.mass)?;
            let dv = t.mul(&acc, pc.dt)?;
            let dx = t.mul(&v, pc.dt)?;
            x = t.add(&x, &dx)?;
            v = t.sub(&v, &dv)?;
        }
        let e = t.sub(&x, pc.target)?;
        t.mul(&e, &e)
    })?;
    let lc = loss.clone();
    let grad = t.define_fn("spring_grad", &[Ty::Real], Ty::Real, |t, ps| {
        let v = vjp(t, &lc, &ps[0]).map_err(BuildError::from)?;
        v.grad(t, 1.0).map_err(BuildError::from)
    })?;
    Ok((loss, grad))
}

/// Let count of the traced (untransformed) loss for `steps` time steps.
pub fn spring_trace(steps: usize) -> Result<usize, CliError> {
    let mut t = Tracer::new();
    let p = SpringParams { steps, ..SpringParams::default() };
    let (loss, _) = build_spring(&mut t, &p)?;
    Ok(t.registry().def(loss.id).map_or(0, |d| d.let_count()))
}

/// Compiled spring loss and gradient.
pub fn spring_callables(p: &SpringParams) -> Result<(Callable, Callable), CliError> {
    let mut t = Tracer::new();
    let (loss, grad) = build_spring(&mut t, p)?;
    Ok((t.compile(&loss)?, t.compile(&grad)?))
}

fn scalar(c: &Callable, x: f64) -> Result<f64, CliError> {
    c.invoke_values(vec![Value::Real(x)])?
        .as_real()
        .ok_or_else(|| CliError::Invalid("expected a real result".into()))
}

/// Gradient descent on the initial velocity until the final position is within
/// `cfg.tol` of the target.
pub fn spring(cfg: &DemoConfig, p: &SpringParams) -> Result<Report, CliError> {
    cfg.validate()?;
    let (loss, grad) = spring_callables(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut v0: f64 = rng.gen_range(-1.0..1.0);
    let start = v0;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let l = scalar(&loss, v0)?;
        if l.sqrt() <= cfg.tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iters || !l.is_finite() {
            break;
        }
        v0 -= cfg.eta * scalar(&grad, v0)?;
        iterations += 1;
    }
    let l = scalar(&loss, v0)?;
    let mut rep = Report::new();
    rep.push("demo", "spring");
    rep.push("steps", p.steps);
    rep.push("target", p.target);
    rep.push("v0_start", start);
    rep.push("v0", v0);
    rep.push("final_error", l.sqrt());
    rep.push("loss", l);
    rep.push("iterations", iterations);
    rep.push("converged", converged);
    if !converged {
        rep.status = Status::NotConverged;
    }
    Ok(rep)
}

/// Every registry the demos trace, for round-trip and typechecking checks.
pub fn demo_registries() -> Result<Vec<(&'static str, Registry)>, CliError> {
    let mut out = Vec::new();
    let mut t = Tracer::new();
    let x: Vec<Vec<f64>> = ANSCOMBE_X.iter().map(|v| vec![*v]).collect();
    build_linreg(&mut t, &x, &ANSCOMBE_Y)?;
    out.push(("linreg", t.into_registry()));
    let mut t = Tracer::new();
    build_quadratic(&mut t)?;
    out.push(("quadratic", t.into_registry()));
    let mut t = Tracer::new();
    build_spring(&mut t, &SpringParams::default())?;
    out.push(("spring", t.into_registry()));
    Ok(out)
}
