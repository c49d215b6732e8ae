use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::bench::gradient_def;
use super::{CliError, Report, Status};
use crate::autodiff::{lift_jvp, transpose};
use crate::builder::Tracer;
use crate::exec::{compile, Value};
use crate::ir::{parse_into, print_def, validate_registry, FuncId, Registry, Ty};
use crate::opt::simplify_registry;

/// Parse IR text with the standard host routines bound, then validate every item.
pub fn load(src: &str) -> Result<Registry, CliError> {
    let reg = parse_into(src, Registry::with_std_hosts())?;
    validate_registry(&reg).map_err(|errs| {
        let lines: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
        CliError::Invalid(lines.join("\n"))
    })?;
    Ok(reg)
}

pub fn check(src: &str) -> Result<Report, CliError> {
    let reg = load(src)?;
    let mut rep = Report::new();
    rep.push("status", "ok");
    rep.push("defs", reg.ids().filter(|id| reg.def(*id).is_some()).count());
    rep.push("opaques", reg.ids().filter(|id| reg.opaque(*id).is_some()).count());
    rep.push("custom_jvps", reg.custom_jvps().count());
    Ok(rep)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DumpOptions {
    /// Function to transform; the last definition in the file when absent.
    pub func: Option<String>,
    /// Simplify the generated definitions before printing.
    pub opt: bool,
    /// Print the dual JVP instead of the forward/backward pair.
    pub jvp: bool,
}

fn pick(reg: &Registry, func: Option<&str>) -> Result<FuncId, CliError> {
    match func {
        Some(name) => reg
            .lookup(name)
            .filter(|id| reg.def(*id).is_some())
            .ok_or_else(|| CliError::Invalid(format!("no definition named `{name}`"))),
        None => reg
            .ids()
            .filter(|id| reg.def(*id).is_some())
            .last()
            .ok_or_else(|| CliError::Invalid("file has no definitions".into())),
    }
}

/// Print the definitions generated by differentiating one function.
pub fn dump(src: &str, opts: &DumpOptions) -> Result<Report, CliError> {
    let reg = load(src)?;
    let f = pick(&reg, opts.func.as_deref())?;
    let mut t = Tracer::with_registry(reg);
    let lifted_from = t.registry().len();
    let jf = lift_jvp(&mut t, f)?;
    let start = if opts.jvp {
        lifted_from
    } else {
        let from = t.registry().len();
        transpose(&mut t, jf)?;
        from
    };
    let mut reg = t.into_registry();
    let new: Vec<FuncId> = reg.ids().skip(start).filter(|id| reg.def(*id).is_some()).collect();
    if opts.opt {
        simplify_registry(&mut reg, &new);
    }
    let mut text = String::new();
    for id in &new {
        if let Some(d) = reg.def(*id) {
            if !text.is_empty() {
                text.push('\n');
            }
            text.push_str(&print_def(&reg, d));
        }
    }
    let mut rep = Report::new();
    rep.push("ir", text);
    Ok(rep)
}

/// Per-function outcome of a finite-difference check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckRow {
    pub func: String,
    pub max_rel_err: f64,
    /// Sample and coordinate of the worst error.
    pub worst_sample: usize,
    pub worst_coord: usize,
    pub gradient: f64,
    pub finite_difference: f64,
    /// Whether a custom derivative is reachable, making a mismatch expected.
    pub custom_jvp: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    /// Relative step; the absolute step is `step * max(1, |x_i|)`.
    pub step: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn report(&self) -> Report {
        let mut rep = Report::new();
        rep.push("samples", self.samples);
        rep.push("seed", self.seed);
        rep.push("tol", self.tol);
        rep.push("step", self.step);
        for r in &self.rows {
            let mismatch = !r.passed || r.max_rel_err > self.tol;
            let verdict = match (mismatch, r.passed) {
                (false, _) => "ok",
                (true, true) => "documented mismatch (custom derivative)",
                (true, false) => "FAILED",
            };
            rep.push(
                &r.func,
                json!({
                    "max_rel_err": r.max_rel_err,
                    "worst_sample": r.worst_sample,
                    "worst_coord": r.worst_coord,
                    "gradient": r.gradient,
                    "finite_difference": r.finite_difference,
                    "verdict": verdict,
                }),
            );
        }
        rep.push("passed", self.passed());
        if !self.passed() {
            rep.status = Status::NotConverged;
        }
        rep
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub func: Option<String>,
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    /// Points to check instead of random samples, as flat leaf vectors.
    pub at: Vec<Vec<f64>>,
    /// Accept mismatches in functions that reach a custom derivative.
    pub custom_jvp: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            func: None,
            samples: 100,
            seed: 0,
            tol: 1e-5,
            at: Vec::new(),
            custom_jvp: false,
        }
    }
}

/// Number of real leaves of a type built only from `Real`, pairs and fixed-size arrays.
fn real_leaves(ty: &Ty) -> Option<usize> {
    match ty {
        Ty::Real => Some(1),
        Ty::Pair(a, b) => Some(real_leaves(a)? + real_leaves(b)?),
        Ty::Arr(i, e) => match **i {
            Ty::Fin(n) => Some(n * real_leaves(e)?),
            _ => None,
        },
        _ => None,
    }
}

fn template(ty: &Ty) -> Value {
    match ty {
        Ty::Pair(a, b) => Value::pair(template(a), template(b)),
        Ty::Arr(i, e) => match **i {
            Ty::Fin(n) => Value::array(vec![template(e); n]),
            _ => Value::Unit,
        },
        _ => Value::Real(0.0),
    }
}

fn checkable(reg: &Registry, id: FuncId) -> bool {
    let Some(d) = reg.def(id) else { return false };
    d.generics.is_empty() && d.params.len() == 1 && d.ret == Ty::Real && real_leaves(&d.params[0].1).is_some()
}

/// Relative error `|a - b| / max(|a|, |b|, 1)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let e = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
    if e.is_nan() {
        f64::INFINITY
    } else {
        e
    }
}

/// Compare reverse-mode gradients of unary scalar functions against central
/// differences at seeded points with leaves drawn from `[0.5, 2]`.
pub fn gradcheck(src: &str, opts: &GradCheckOptions) -> Result<GradCheckReport, CliError> {
    let reg = load(src)?;
    let targets: Vec<FuncId> = match &opts.func {
        Some(_) => {
            let id = pick(&reg, opts.func.as_deref())?;
            if !checkable(&reg, id) {
                return Err(CliError::Invalid(format!(
                    "`{}` must take one argument of real leaves and return Real",
                    reg.name(id)
                )));
            }
            vec![id]
        }
        None => reg.ids().filter(|id| checkable(&reg, *id)).collect(),
    };
    if targets.is_empty() {
        return Err(CliError::Invalid("no function takes real leaves and returns Real".into()));
    }
    let customs: Vec<FuncId> = reg.custom_jvps().map(|(b, _)| b).filter(|b| reg.def(*b).is_some()).collect();
    let mut t = Tracer::with_registry(reg);
    let mut grads = Vec::new();
    for &id in &targets {
        let h = t.func_handle(id).ok_or_else(|| CliError::Invalid("unknown function".into()))?;
        let name = format!("grad_{}", t.registry().name(id));
        grads.push(gradient_def(&mut t, &h, &name)?);
    }
    let reg = t.into_registry();
    let step = 1e-6;
    let mut rows = Vec::new();
    for (&id, &gid) in targets.iter().zip(&grads) {
        let pty = reg.def(id).map(|d| d.params[0].1.clone()).unwrap_or(Ty::Real);
        let k = real_leaves(&pty).unwrap_or(0);
        let shape = template(&pty);
        let cf = compile(&reg, id)?;
        let cg = compile(&reg, gid)?;
        let eval = |xs: &[f64]| -> Result<f64, CliError> {
            let v = shape.with_real_leaves(&mut xs.iter().copied());
            Ok(cf.invoke_values(vec![v])?.as_real().unwrap_or(f64::NAN))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let points: Vec<Vec<f64>> = if opts.at.is_empty() {
            (0..opts.samples).map(|_| (0..k).map(|_| rng.gen_range(0.5..2.0)).collect()).collect()
        } else {
            opts.at.clone()
        };
        let mut row = GradCheckRow {
            func: reg.name(id).to_string(),
            max_rel_err: 0.0,
            worst_sample: 0,
            worst_coord: 0,
            gradient: 0.0,
            finite_difference: 0.0,
            custom_jvp: reg.reachable(&[id]).iter().any(|r| customs.contains(r)),
            passed: true,
        };
        for (s, x) in points.iter().enumerate() {
            if x.len() != k {
                return Err(CliError::Invalid(format!("point {s} has {} coordinates, expected {k}", x.len())));
            }
            let v = shape.with_real_leaves(&mut x.iter().copied());
            let mut g = Vec::new();
            cg.invoke_values(vec![v])?.real_leaves(&mut g);
            for i in 0..k {
                let h = step * x[i].abs().max(1.0);
                let (mut p, mut m) = (x.clone(), x.clone());
                p[i] += h;
                m[i] -= h;
                let (fp, fm, f0) = (eval(&p)?, eval(&m)?, eval(x)?);
                // one-sided when the central stencil leaves the domain
                let fd = if fm.is_finite() && fp.is_finite() {
                    (fp - fm) / (2.0 * h)
                } else if fp.is_finite() {
                    (fp - f0) / h
                } else {
                    (f0 - fm) / h
                };
                let e = rel_err(g[i], fd);
                if e > row.max_rel_err || (s == 0 && i == 0) {
                    row.max_rel_err = e;
                    row.worst_sample = s;
                    row.worst_coord = i;
                    row.gradient = g[i];
                    row.finite_difference = fd;
                }
            }
        }
        row.passed = row.max_rel_err <= opts.tol || (opts.custom_jvp && row.custom_jvp);
        rows.push(row);
    }
    Ok(GradCheckReport {
        rows,
        samples: if opts.at.is_empty() { opts.samples } else { opts.at.len() },
        seed: opts.seed,
        tol: opts.tol,
        step,
    })
}
