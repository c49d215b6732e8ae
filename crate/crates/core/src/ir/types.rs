use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Type constraints, ordered `Index <: Value <: Type`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    Index,
    Value,
    Type,
}

impl Kind {
    /// Subsumption: `self <: other`.
    pub fn is_sub(self, other: Kind) -> bool {
        self.rank() <= other.rank()
    }

    fn rank(self) -> u8 {
        match self {
            Kind::Index => 0,
            Kind::Value => 1,
            Kind::Type => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Index => "Index",
            Kind::Value => "Value",
            Kind::Type => "Type",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ty {
    /// A generic type parameter, bound in the enclosing definition.
    Var(String),
    Unit,
    Bool,
    Real,
    /// The index set `{0, ..., n - 1}`.
    Fin(usize),
    /// Accumulate-only reference.
    Acc(Box<Ty>),
    Arr(Box<Ty>, Box<Ty>),
    Pair(Box<Ty>, Box<Ty>),
}

impl Ty {
    pub fn acc(inner: Ty) -> Ty {
        Ty::Acc(Box::new(inner))
    }

    pub fn arr(index: Ty, elem: Ty) -> Ty {
        Ty::Arr(Box::new(index), Box::new(elem))
    }

    /// `Vec(n, T)` sugar.
    pub fn vec(n: usize, elem: Ty) -> Ty {
        Ty::arr(Ty::Fin(n), elem)
    }

    pub fn pair(a: Ty, b: Ty) -> Ty {
        Ty::Pair(Box::new(a), Box::new(b))
    }

    /// The dual number type `(Real, Real)`.
    pub fn dual() -> Ty {
        Ty::pair(Ty::Real, Ty::Real)
    }

    pub fn contains_acc(&self) -> bool {
        match self {
            Ty::Acc(_) => true,
            Ty::Arr(i, e) => i.contains_acc() || e.contains_acc(),
            Ty::Pair(a, b) => a.contains_acc() || b.contains_acc(),
            _ => false,
        }
    }

    pub fn contains_real(&self) -> bool {
        match self {
            Ty::Real => true,
            Ty::Acc(t) => t.contains_real(),
            Ty::Arr(_, e) => e.contains_real(),
            Ty::Pair(a, b) => a.contains_real() || b.contains_real(),
            _ => false,
        }
    }

    /// Substitute type variables.
    pub fn subst(&self, map: &BTreeMap<String, Ty>) -> Ty {
        match self {
            Ty::Var(name) => map.get(name).cloned().unwrap_or_else(|| self.clone()),
            Ty::Acc(t) => Ty::acc(t.subst(map)),
            Ty::Arr(i, e) => Ty::arr(i.subst(map), e.subst(map)),
            Ty::Pair(a, b) => Ty::pair(a.subst(map), b.subst(map)),
            _ => self.clone(),
        }
    }

    /// Replace every `Real` with `(Real, Real)`.
    pub fn lift(&self) -> Ty {
        match self {
            Ty::Real => Ty::dual(),
            Ty::Acc(t) => Ty::acc(t.lift()),
            Ty::Arr(i, e) => Ty::arr(i.lift(), e.lift()),
            Ty::Pair(a, b) => Ty::pair(a.lift(), b.lift()),
            _ => self.clone(),
        }
    }

    pub fn free_vars(&self, out: &mut Vec<String>) {
        match self {
            Ty::Var(name) => {
                if !out.contains(name) {
                    out.push(name.clone())
                }
            }
            Ty::Acc(t) => t.free_vars(out),
            Ty::Arr(i, e) => {
                i.free_vars(out);
                e.free_vars(out);
            }
            Ty::Pair(a, b) => {
                a.free_vars(out);
                b.free_vars(out);
            }
            _ => {}
        }
    }
}

/// An index size as the type `Fin(n)`.
impl From<usize> for Ty {
    fn from(n: usize) -> Ty {
        Ty::Fin(n)
    }
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ty::Var(name) => f.write_str(name),
            Ty::Unit => f.write_str("()"),
            Ty::Bool => f.write_str("Bool"),
            Ty::Real => f.write_str("Real"),
            Ty::Fin(n) => write!(f, "{n}"),
            Ty::Acc(t) => write!(f, "&{t}"),
            Ty::Arr(i, e) => write!(f, "[{i}]{e}"),
            Ty::Pair(a, b) => write!(f, "({a}, {b})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum KindError {
    #[error("unbound type variable `{0}`")]
    UnboundTypeVar(String),
    #[error("component `{component}` of `{ty}` must be a Value")]
    NonValueComponent { ty: String, component: String },
    #[error("index `{index}` of `{ty}` must be an Index")]
    NonIndexComponent { ty: String, index: String },
}

/// Generic environment: type variable name to its declared kind.
pub type KindEnv = BTreeMap<String, Kind>;

/// The least kind of `ty` under `env`.
pub fn kind_of(ty: &Ty, env: &KindEnv) -> Result<Kind, KindError> {
    let value = |t: &Ty| -> Result<(), KindError> {
        if kind_of(t, env)?.is_sub(Kind::Value) {
            Ok(())
        } else {
            Err(KindError::NonValueComponent {
                ty: ty.to_string(),
                component: t.to_string(),
            })
        }
    };
    match ty {
        Ty::Var(name) => env
            .get(name)
            .copied()
            .ok_or_else(|| KindError::UnboundTypeVar(name.clone())),
        Ty::Unit | Ty::Bool | Ty::Real => Ok(Kind::Value),
        Ty::Fin(_) => Ok(Kind::Index),
        Ty::Acc(inner) => {
            value(inner)?;
            Ok(Kind::Type)
        }
        Ty::Arr(index, elem) => {
            if kind_of(index, env)? != Kind::Index {
                return Err(KindError::NonIndexComponent {
                    ty: ty.to_string(),
                    index: index.to_string(),
                });
            }
            value(elem)?;
            Ok(Kind::Value)
        }
        Ty::Pair(a, b) => {
            value(a)?;
            value(b)?;
            Ok(Kind::Value)
        }
    }
}
