use std::fmt;
use std::rc::Rc;

use serde_json::{json, Map, Number};
use thiserror::Error;

use crate::ir::Ty;

/// One projection step from an accumulator root to a sub-cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Index(usize),
    Fst,
    Snd,
}

/// An accumulator cell: a root in the invocation's store plus a path inside it.
#[derive(Clone, Debug, PartialEq)]
pub struct AccRef {
    pub root: usize,
    pub steps: Rc<Vec<Step>>,
}

impl AccRef {
    pub fn then(&self, step: Step) -> AccRef {
        let mut steps = (*self.steps).clone();
        steps.push(step);
        AccRef {
            root: self.root,
            steps: Rc::new(steps),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Unit,
    Bool(bool),
    Real(f64),
    Fin(usize),
    Array(Rc<Vec<Value>>),
    Pair(Rc<(Value, Value)>),
    Acc(AccRef),
}

impl Value {
    pub fn pair(a: Value, b: Value) -> Value {
        Value::Pair(Rc::new((a, b)))
    }

    pub fn array(xs: Vec<Value>) -> Value {
        Value::Array(Rc::new(xs))
    }

    pub fn reals(xs: &[f64]) -> Value {
        Value::array(xs.iter().map(|x| Value::Real(*x)).collect())
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Value::Real(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[Value]> {
        match self {
            Value::Array(xs) => Some(xs),
            _ => None,
        }
    }

    pub fn as_pair(&self) -> Option<(&Value, &Value)> {
        match self {
            Value::Pair(p) => Some((&p.0, &p.1)),
            _ => None,
        }
    }

    /// Real leaves in depth-first order.
    pub fn real_leaves(&self, out: &mut Vec<f64>) {
        match self {
            Value::Real(x) => out.push(*x),
            Value::Array(xs) => xs.iter().for_each(|x| x.real_leaves(out)),
            Value::Pair(p) => {
                p.0.real_leaves(out);
                p.1.real_leaves(out);
            }
            _ => {}
        }
    }

    /// Same structure with Real leaves replaced from `leaves`, in depth-first order.
    pub fn with_real_leaves(&self, leaves: &mut impl Iterator<Item = f64>) -> Value {
        match self {
            Value::Real(_) => Value::Real(leaves.next().expect("enough leaves")),
            Value::Array(xs) => Value::array(xs.iter().map(|x| x.with_real_leaves(leaves)).collect()),
            Value::Pair(p) => Value::pair(p.0.with_real_leaves(leaves), p.1.with_real_leaves(leaves)),
            other => other.clone(),
        }
    }

    /// Same shape, every Real leaf zero; discrete leaves are kept.
    pub fn zero_like(&self) -> Value {
        match self {
            Value::Real(_) => Value::Real(0.0),
            Value::Array(xs) => Value::array(xs.iter().map(Value::zero_like).collect()),
            Value::Pair(p) => Value::pair(p.0.zero_like(), p.1.zero_like()),
            other => other.clone(),
        }
    }

    /// Pointwise `self += v` on Real leaves; other leaves are untouched.
    pub fn add_assign(&mut self, v: &Value) {
        match (self, v) {
            (Value::Real(x), Value::Real(y)) => *x += y,
            (Value::Array(xs), Value::Array(ys)) => {
                let xs = Rc::make_mut(xs);
                for (x, y) in xs.iter_mut().zip(ys.iter()) {
                    x.add_assign(y);
                }
            }
            (Value::Pair(p), Value::Pair(q)) => {
                let p = Rc::make_mut(p);
                p.0.add_assign(&q.0);
                p.1.add_assign(&q.1);
            }
            _ => {}
        }
    }

    /// The sub-value reached by `steps`, mutably, copying shared structure on the way.
    pub fn at_mut(&mut self, steps: &[Step]) -> &mut Value {
        let mut cur = self;
        for s in steps {
            cur = match (cur, s) {
                (Value::Array(xs), Step::Index(i)) => &mut Rc::make_mut(xs)[*i],
                (Value::Pair(p), Step::Fst) => &mut Rc::make_mut(p).0,
                (Value::Pair(p), Step::Snd) => &mut Rc::make_mut(p).1,
                (v, s) => panic!("accumulator path step {s:?} does not fit {v:?}"),
            };
        }
        cur
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Unit => f.write_str("()"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Real(x) => write!(f, "{x}"),
            Value::Fin(i) => write!(f, "{i}"),
            Value::Array(xs) => {
                f.write_str("[")?;
                for (k, x) in xs.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{x}")?;
                }
                f.write_str("]")
            }
            Value::Pair(p) => write!(f, "({}, {})", p.0, p.1),
            Value::Acc(_) => f.write_str("<acc>"),
        }
    }
}

/// How a runtime value looks on the host side.
///
/// Reals are JSON numbers, Fin values are non-negative integers, arrays are JSON
/// arrays, pairs are two-element arrays and records are objects whose fields lower
/// to right-nested pairs in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Unit,
    Bool,
    Real,
    Fin(usize),
    Vec(usize, Box<Shape>),
    Pair(Box<Shape>, Box<Shape>),
    Record(Vec<(String, Shape)>),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("cannot marshal {what}: {why}")]
pub struct MarshalError {
    pub what: String,
    pub why: String,
}

fn fail<T>(what: impl fmt::Display, why: impl Into<String>) -> Result<T, MarshalError> {
    Err(MarshalError {
        what: what.to_string(),
        why: why.into(),
    })
}

impl Shape {
    /// The default host shape of a concrete type; `None` for accumulators and type variables.
    pub fn of(ty: &Ty) -> Option<Shape> {
        Some(match ty {
            Ty::Unit => Shape::Unit,
            Ty::Bool => Shape::Bool,
            Ty::Real => Shape::Real,
            Ty::Fin(n) => Shape::Fin(*n),
            Ty::Arr(i, e) => match **i {
                Ty::Fin(n) => Shape::Vec(n, Box::new(Shape::of(e)?)),
                _ => return None,
            },
            Ty::Pair(a, b) => Shape::Pair(Box::new(Shape::of(a)?), Box::new(Shape::of(b)?)),
            Ty::Var(_) | Ty::Acc(_) => return None,
        })
    }

    pub fn vec(n: usize, elem: Shape) -> Shape {
        Shape::Vec(n, Box::new(elem))
    }

    pub fn record(fields: &[(&str, Shape)]) -> Shape {
        Shape::Record(fields.iter().map(|(n, s)| (n.to_string(), s.clone())).collect())
    }

    /// The IR type this shape marshals to.
    pub fn ty(&self) -> Ty {
        match self {
            Shape::Unit => Ty::Unit,
            Shape::Bool => Ty::Bool,
            Shape::Real => Ty::Real,
            Shape::Fin(n) => Ty::Fin(*n),
            Shape::Vec(n, e) => Ty::vec(*n, e.ty()),
            Shape::Pair(a, b) => Ty::pair(a.ty(), b.ty()),
            Shape::Record(fields) => record_ty(fields),
        }
    }

    pub fn to_value(&self, host: &serde_json::Value) -> Result<Value, MarshalError> {
        match self {
            Shape::Unit => match host {
                serde_json::Value::Null => Ok(Value::Unit),
                serde_json::Value::Array(xs) if xs.is_empty() => Ok(Value::Unit),
                _ => fail(host, "expected null"),
            },
            Shape::Bool => host.as_bool().map(Value::Bool).map_or_else(|| fail(host, "expected a boolean"), Ok),
            Shape::Real => host.as_f64().map(Value::Real).map_or_else(|| fail(host, "expected a number"), Ok),
            Shape::Fin(n) => match host.as_u64() {
                Some(i) if (i as usize) < *n => Ok(Value::Fin(i as usize)),
                Some(i) => fail(i, format!("index out of range for {n}")),
                None => fail(host, "expected a non-negative integer"),
            },
            Shape::Vec(n, e) => match host.as_array() {
                Some(xs) if xs.len() == *n => Ok(Value::array(
                    xs.iter().map(|x| e.to_value(x)).collect::<Result<_, _>>()?,
                )),
                Some(xs) => fail(host, format!("expected {n} elements, found {}", xs.len())),
                None => fail(host, "expected an array"),
            },
            Shape::Pair(a, b) => match host.as_array().map(|xs| xs.as_slice()) {
                Some([x, y]) => Ok(Value::pair(a.to_value(x)?, b.to_value(y)?)),
                _ => fail(host, "expected a two-element array"),
            },
            Shape::Record(fields) => {
                let Some(obj) = host.as_object() else {
                    return fail(host, "expected an object");
                };
                if obj.len() != fields.len() {
                    return fail(host, format!("expected {} fields", fields.len()));
                }
                let mut vals = Vec::new();
                for (name, s) in fields {
                    match obj.get(name) {
                        Some(x) => vals.push(s.to_value(x)?),
                        None => return fail(host, format!("missing field `{name}`")),
                    }
                }
                Ok(nest(vals))
            }
        }
    }

    pub fn to_host(&self, v: &Value) -> Result<serde_json::Value, MarshalError> {
        match (self, v) {
            (Shape::Unit, Value::Unit) => Ok(serde_json::Value::Null),
            (Shape::Bool, Value::Bool(b)) => Ok(json!(b)),
            (Shape::Real, Value::Real(x)) => Ok(Number::from_f64(*x)
                .map(serde_json::Value::Number)
                .unwrap_or_else(|| json!(x.to_string()))),
            (Shape::Fin(_), Value::Fin(i)) => Ok(json!(i)),
            (Shape::Vec(n, e), Value::Array(xs)) if xs.len() == *n => Ok(serde_json::Value::Array(
                xs.iter().map(|x| e.to_host(x)).collect::<Result<_, _>>()?,
            )),
            (Shape::Pair(a, b), Value::Pair(p)) => Ok(json!([a.to_host(&p.0)?, b.to_host(&p.1)?])),
            (Shape::Record(fields), v) => {
                let mut obj = Map::new();
                let mut rest = v.clone();
                for (k, (name, s)) in fields.iter().enumerate() {
                    let item = if k + 1 == fields.len() {
                        rest.clone()
                    } else {
                        let Some((a, b)) = rest.as_pair() else {
                            return fail(v, "record value is not a nested pair");
                        };
                        let a = a.clone();
                        rest = b.clone();
                        a
                    };
                    obj.insert(name.clone(), s.to_host(&item)?);
                }
                Ok(serde_json::Value::Object(obj))
            }
            (s, v) => fail(v, format!("does not fit {s:?}")),
        }
    }
}

/// Right-nested pairs; a single item is itself and none is unit.
pub fn record_ty(fields: &[(String, Shape)]) -> Ty {
    match fields {
        [] => Ty::Unit,
        [(_, s)] => s.ty(),
        [(_, s), rest @ ..] => Ty::pair(s.ty(), record_ty(rest)),
    }
}

fn nest(mut vals: Vec<Value>) -> Value {
    match vals.len() {
        0 => Value::Unit,
        1 => vals.pop().unwrap(),
        _ => {
            let first = vals.remove(0);
            Value::pair(first, nest(vals))
        }
    }
}
