use std::rc::Rc;

use thiserror::Error;

use super::compile::{Callable, LBlock, LExpr, Slot};
use super::value::{AccRef, MarshalError, Step, Value};
use crate::ir::{BinaryOp, HostFault, UnaryOp};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error(transparent)]
    Marshal(#[from] MarshalError),
    #[error(transparent)]
    Host(#[from] HostFault),
    #[error("expected {expected} arguments, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("runtime fault in `{func}`: {message}")]
    Fault { func: String, message: String },
}

/// Static and dynamic operation counts, per lowered instance.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct OpCounts {
    /// Instance name, lets in its lowered body, primitive evaluations in the last invoke.
    pub per_function: Vec<(String, usize, u64)>,
}

impl OpCounts {
    pub fn static_total(&self) -> usize {
        self.per_function.iter().map(|(_, s, _)| s).sum()
    }

    pub fn dynamic_total(&self) -> u64 {
        self.per_function.iter().map(|(_, _, d)| d).sum()
    }
}

/// Sign with `sgn(0) = 0`; NaN stays NaN.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        x
    }
}

struct Machine<'a> {
    c: &'a Callable,
    store: Vec<Value>,
    counts: Vec<u64>,
}

type R<T> = Result<T, ExecError>;

impl Machine<'_> {
    fn fault<T>(&self, inst: usize, message: impl Into<String>) -> R<T> {
        Err(ExecError::Fault {
            func: self.c.instances[inst].name.clone(),
            message: message.into(),
        })
    }

    fn call(&mut self, inst: usize, args: Vec<Value>) -> R<Value> {
        let f = &self.c.instances[inst];
        let mut frame = vec![Value::Unit; f.slots];
        for (slot, v) in f.params.iter().zip(args) {
            frame[*slot as usize] = v;
        }
        self.block(inst, &f.body, &mut frame)?;
        Ok(std::mem::replace(&mut frame[f.body.result as usize], Value::Unit))
    }

    fn block(&mut self, inst: usize, b: &LBlock, frame: &mut [Value]) -> R<()> {
        for (slot, e) in &b.lets {
            let v = self.expr(inst, e, frame)?;
            frame[*slot as usize] = v;
        }
        Ok(())
    }

    fn real(&self, inst: usize, frame: &[Value], s: Slot) -> R<f64> {
        match &frame[s as usize] {
            Value::Real(x) => Ok(*x),
            other => self.fault(inst, format!("expected a real, found {other}")),
        }
    }

    fn boolean(&self, inst: usize, frame: &[Value], s: Slot) -> R<bool> {
        match &frame[s as usize] {
            Value::Bool(b) => Ok(*b),
            other => self.fault(inst, format!("expected a boolean, found {other}")),
        }
    }

    fn acc(&self, inst: usize, frame: &[Value], s: Slot) -> R<AccRef> {
        match &frame[s as usize] {
            Value::Acc(r) => Ok(r.clone()),
            other => self.fault(inst, format!("expected an accumulator, found {other}")),
        }
    }

    fn fin(&self, inst: usize, frame: &[Value], s: Slot) -> R<usize> {
        match &frame[s as usize] {
            Value::Fin(i) => Ok(*i),
            other => self.fault(inst, format!("expected an index, found {other}")),
        }
    }

    fn expr(&mut self, inst: usize, e: &LExpr, frame: &mut [Value]) -> R<Value> {
        let get = |s: &Slot| frame[*s as usize].clone();
        Ok(match e {
            LExpr::Unit => Value::Unit,
            LExpr::Bool(b) => Value::Bool(*b),
            LExpr::Real(c) => Value::Real(*c),
            LExpr::Fin(m) => Value::Fin(*m),
            LExpr::Array(xs) => Value::array(xs.iter().map(get).collect()),
            LExpr::Pair(a, b) => Value::pair(get(a), get(b)),
            LExpr::Unary(op, x) => {
                self.counts[inst] += 1;
                if *op == UnaryOp::Not {
                    return Ok(Value::Bool(!self.boolean(inst, frame, *x)?));
                }
                let x = self.real(inst, frame, *x)?;
                Value::Real(match op {
                    UnaryOp::Neg => -x,
                    UnaryOp::Abs => x.abs(),
                    UnaryOp::Sgn => sgn(x),
                    UnaryOp::Ceil => x.ceil(),
                    UnaryOp::Floor => x.floor(),
                    UnaryOp::Trunc => x.trunc(),
                    UnaryOp::Sqrt => x.sqrt(),
                    UnaryOp::Not => unreachable!(),
                })
            }
            LExpr::Binary(op, x, y) => {
                self.counts[inst] += 1;
                if op.is_logic() {
                    let (a, b) = (self.boolean(inst, frame, *x)?, self.boolean(inst, frame, *y)?);
                    return Ok(Value::Bool(match op {
                        BinaryOp::And => a && b,
                        BinaryOp::Or => a || b,
                        BinaryOp::Iff => a == b,
                        _ => a != b,
                    }));
                }
                let (a, b) = (self.real(inst, frame, *x)?, self.real(inst, frame, *y)?);
                match op {
                    BinaryOp::Neq => Value::Bool(a != b),
                    BinaryOp::Lt => Value::Bool(a < b),
                    BinaryOp::Leq => Value::Bool(a <= b),
                    BinaryOp::Eq => Value::Bool(a == b),
                    BinaryOp::Gt => Value::Bool(a > b),
                    BinaryOp::Geq => Value::Bool(a >= b),
                    BinaryOp::Add => Value::Real(a + b),
                    BinaryOp::Sub => Value::Real(a - b),
                    BinaryOp::Mul => Value::Real(a * b),
                    BinaryOp::Div => Value::Real(a / b),
                    _ => unreachable!(),
                }
            }
            LExpr::Select(p, x, y) => {
                self.counts[inst] += 1;
                if self.boolean(inst, frame, *p)? {
                    get(x)
                } else {
                    get(y)
                }
            }
            LExpr::Accumulate(x, y) => {
                self.counts[inst] += 1;
                let r = self.acc(inst, frame, *x)?;
                let v = &frame[*y as usize];
                self.store[r.root].at_mut(&r.steps).add_assign(v);
                Value::Unit
            }
            LExpr::Index(a, i) => {
                let i = self.fin(inst, frame, *i)?;
                match &frame[*a as usize] {
                    Value::Array(xs) if i < xs.len() => xs[i].clone(),
                    other => return self.fault(inst, format!("cannot index {other} at {i}")),
                }
            }
            LExpr::Fst(x) | LExpr::Snd(x) => match &frame[*x as usize] {
                Value::Pair(p) => {
                    if matches!(e, LExpr::Fst(_)) {
                        p.0.clone()
                    } else {
                        p.1.clone()
                    }
                }
                other => return self.fault(inst, format!("cannot project {other}")),
            },
            LExpr::RefIndex(a, i) => {
                let i = self.fin(inst, frame, *i)?;
                Value::Acc(self.acc(inst, frame, *a)?.then(Step::Index(i)))
            }
            LExpr::RefFst(x) => Value::Acc(self.acc(inst, frame, *x)?.then(Step::Fst)),
            LExpr::RefSnd(x) => Value::Acc(self.acc(inst, frame, *x)?.then(Step::Snd)),
            LExpr::Call { inst: callee, args } => {
                let args = args.iter().map(get).collect();
                self.call(*callee, args)?
            }
            LExpr::Host { routine, args } => {
                self.counts[inst] += 1;
                let mut xs = Vec::with_capacity(args.len());
                for a in args {
                    xs.push(self.real(inst, frame, *a)?);
                }
                Value::Real((self.c.hosts[*routine].1)(&xs)?)
            }
            LExpr::For { n, index, body } => {
                let mut out = Vec::with_capacity(*n);
                for i in 0..*n {
                    frame[*index as usize] = Value::Fin(i);
                    self.block(inst, body, frame)?;
                    out.push(frame[body.result as usize].clone());
                }
                Value::Array(Rc::new(out))
            }
            LExpr::Accum { acc, from, body } => {
                let init = frame[*from as usize].zero_like();
                self.store.push(init);
                let root = self.store.len() - 1;
                frame[*acc as usize] = Value::Acc(AccRef {
                    root,
                    steps: Rc::new(Vec::new()),
                });
                let res = self.block(inst, body, frame);
                frame[*acc as usize] = Value::Unit;
                let decayed = self.store.pop().expect("accumulator root");
                res?;
                Value::pair(decayed, frame[body.result as usize].clone())
            }
        })
    }
}

impl Callable {
    /// Run on runtime values, returning the result and the counts of this run.
    pub fn run(&self, args: Vec<Value>) -> Result<(Value, OpCounts), ExecError> {
        let entry = &self.instances[0];
        if args.len() != entry.params.len() {
            return Err(ExecError::Arity {
                expected: entry.params.len(),
                found: args.len(),
            });
        }
        let mut m = Machine {
            c: self,
            store: Vec::new(),
            counts: vec![0; self.instances.len()],
        };
        let out = m.call(0, args)?;
        let counts = self.counts_from(&m.counts);
        *self.last_counts.lock().unwrap() = m.counts;
        Ok((out, counts))
    }

    pub fn invoke_values(&self, args: Vec<Value>) -> Result<Value, ExecError> {
        self.run(args).map(|(v, _)| v)
    }

    /// Run on host values, marshalled through the parameter and result shapes.
    pub fn invoke(&self, args: &[serde_json::Value]) -> Result<serde_json::Value, ExecError> {
        if args.len() != self.params.len() {
            return Err(ExecError::Arity {
                expected: self.params.len(),
                found: args.len(),
            });
        }
        let vals = self
            .params
            .iter()
            .zip(args)
            .map(|(s, a)| s.to_value(a))
            .collect::<Result<Vec<_>, _>>()?;
        let out = self.invoke_values(vals)?;
        Ok(self.ret.to_host(&out)?)
    }

    /// Counts from the most recent invocation.
    pub fn op_count(&self) -> OpCounts {
        let counts = self.last_counts.lock().unwrap().clone();
        self.counts_from(&counts)
    }

    fn counts_from(&self, dynamic: &[u64]) -> OpCounts {
        OpCounts {
            per_function: self
                .instances
                .iter()
                .zip(dynamic)
                .map(|(i, d)| (i.name.clone(), i.static_lets, *d))
                .collect(),
        }
    }
}
