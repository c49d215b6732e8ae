#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scalar_ad::autodiff::{lift_jvp, vjp};
use scalar_ad::builder::{BuildError, FuncHandle, Handle, StdMath, Tracer};
use scalar_ad::exec::{compile, Callable};
use scalar_ad::ir::{FuncId, Registry, Ty};
use serde_json::{json, Value};

type R<T> = Result<T, BuildError>;

/// A randomly generated smooth function `[n]Real -> Real` with its dual JVP
/// and a pullback `(x, dy) -> dy * grad f(x)`.
pub struct Generated {
    pub reg: Registry,
    pub n: usize,
    pub f: FuncId,
    pub jvp: FuncId,
    pub pullback: FuncId,
}

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    math: &'a StdMath,
    helpers: Vec<FuncHandle>,
}

impl Gen<'_> {
    fn pick(&mut self, pool: &[Handle]) -> Handle {
        pool[self.rng.gen_range(0..pool.len())].clone()
    }

    /// `1 + a*a`, safely positive.
    fn positive(&mut self, t: &mut Tracer, a: &Handle) -> R<Handle> {
        let sq = t.mul(a, a)?;
        t.add(&sq, 1.0)
    }

    fn step(&mut self, t: &mut Tracer, x: &Handle, n: usize, pool: &mut Vec<Handle>) -> R<()> {
        let a = self.pick(pool);
        let b = self.pick(pool);
        let h = match self.rng.gen_range(0..15) {
            0 => t.add(&a, &b)?,
            1 => t.sub(&a, &b)?,
            2 | 3 => t.mul(&a, &b)?,
            4 => {
                let d = self.positive(t, &b)?;
                t.div(&a, &d)?
            }
            5 => t.neg(&a)?,
            6 => t.call(&self.math.sin, &[(&a).into()])?,
            7 => t.call(&self.math.cos, &[(&a).into()])?,
            8 => {
                let d = self.positive(t, &a)?;
                t.call(&self.math.log, &[(&d).into()])?
            }
            9 => {
                let p = t.gt(&a, &b)?;
                let c = t.mul(&a, 0.5)?;
                t.select(&p, &c, &b)?
            }
            10 => {
                let p = t.pair(&a, &b)?;
                let q = t.fst(&p)?;
                let r = t.snd(&p)?;
                t.mul(&q, &r)?
            }
            11 => {
                // weighted sum over the input
                let w = a.clone();
                let xs = x.clone();
                t.sum(n, |t, i| {
                    let e = t.index(&xs, &i)?;
                    t.mul(&e, &w)
                })?
            }
            12 => {
                // scatter into an accumulator, then read one slot back
                let z = t.vec_of(Ty::Real, &vec![a.clone(); n])?;
                let xs = x.clone();
                let w = b.clone();
                let r = t.accum(&z, |t, acc| {
                    t.array(n, |t, i| {
                        let s = t.ref_index(&acc, &i)?;
                        let e = t.index(&xs, &i)?;
                        let v = t.mul(&e, &w)?;
                        t.accumulate(&s, &v)
                    })
                })?;
                let arr = t.fst(&r)?;
                let k = self.rng.gen_range(0..n);
                t.index(&arr, k)?
            }
            13 if !self.helpers.is_empty() => {
                let k = self.rng.gen_range(0..self.helpers.len());
                let g = self.helpers[k].clone();
                t.call(&g, &[(&a).into(), (&b).into()])?
            }
            _ => {
                let d = self.positive(t, &a)?;
                t.sqrt(&d)?
            }
        };
        pool.push(h);
        Ok(())
    }

    fn helper(&mut self, t: &mut Tracer, k: usize) -> R<FuncHandle> {
        let ops = self.rng.gen_range(2..6);
        let helpers = self.helpers.clone();
        t.define_fn(&format!("h{k}"), &[Ty::Real, Ty::Real], Ty::Real, |t, ps| {
            let mut pool = ps.to_vec();
            let x = t.vec_of(Ty::Real, ps)?;
            let mut g = Gen {
                rng: &mut *self.rng,
                math: self.math,
                helpers,
            };
            for _ in 0..ops {
                g.step(t, &x, 2, &mut pool)?;
            }
            combine(t, &pool)
        })
    }
}

/// Sum of the last few pool entries.
fn combine(t: &mut Tracer, pool: &[Handle]) -> R<Handle> {
    let tail = &pool[pool.len().saturating_sub(3)..];
    let mut acc = tail[0].clone();
    for h in &tail[1..] {
        acc = t.add(&acc, h)?;
    }
    Ok(acc)
}

pub fn generate(seed: u64) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..5);
    let ops = rng.gen_range(4..14);
    let mut t = Tracer::new();
    let math = StdMath::define(&mut t).unwrap();
    let mut g = Gen {
        rng: &mut rng,
        math: &math,
        helpers: Vec::new(),
    };
    let nh = g.rng.gen_range(0..3);
    for k in 0..nh {
        let h = g.helper(&mut t, k).unwrap();
        g.helpers.push(h);
    }
    let arr = Ty::vec(n, Ty::Real);
    let f = t
        .define_fn("f", &[arr.clone()], Ty::Real, |t, ps| {
            let x = ps[0].clone();
            let mut pool = Vec::new();
            for i in 0..n {
                pool.push(t.index(&x, i)?);
            }
            for _ in 0..ops {
                g.step(t, &x, n, &mut pool)?;
            }
            combine(t, &pool)
        })
        .unwrap();
    let jvp = lift_jvp(&mut t, f.id).unwrap();
    let pullback = t
        .define_fn("pullback", &[arr.clone(), Ty::Real], arr, |t, ps| {
            let v = vjp(t, &f, &ps[0]).map_err(BuildError::from)?;
            v.grad(t, &ps[1]).map_err(BuildError::from)
        })
        .unwrap();
    Generated {
        reg: t.into_registry(),
        n,
        f: f.id,
        jvp,
        pullback: pullback.id,
    }
}

pub struct Compiled {
    pub f: Callable,
    pub jvp: Callable,
    pub pullback: Callable,
}

impl Generated {
    pub fn compile(&self) -> Compiled {
        Compiled {
            f: compile(&self.reg, self.f).unwrap(),
            jvp: compile(&self.reg, self.jvp).unwrap(),
            pullback: compile(&self.reg, self.pullback).unwrap(),
        }
    }
}

pub fn reals(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

impl Compiled {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.f.invoke(&[json!(x)]).unwrap().as_f64().unwrap()
    }

    /// Directional derivative along `dx`.
    pub fn jvp(&self, x: &[f64], dx: &[f64]) -> f64 {
        let duals: Vec<Value> = x.iter().zip(dx).map(|(a, b)| json!([a, b])).collect();
        let out = self.jvp.invoke(&[Value::Array(duals)]).unwrap();
        out[1].as_f64().unwrap()
    }

    pub fn pullback(&self, x: &[f64], dy: f64) -> Vec<f64> {
        reals(&self.pullback.invoke(&[json!(x), json!(dy)]).unwrap())
    }
}

/// `|a - b| / max(|a|, |b|, 1)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central-difference gradient with step `1e-6 * max(1, |x_i|)`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * x[i].abs().max(1.0);
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}
