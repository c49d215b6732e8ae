//! Forward-mode lifting, transposition into forward/backward passes, and
//! the vjp/hessian recipes built on them.

mod api;
mod lift;
mod roles;
mod transpose;

use thiserror::Error;

use crate::builder::{BuildError, Tracer};
use crate::ir::{FuncId, Kind, Origin, Registry};

pub use api::{hessian, vjp, Vjp};
pub use lift::lift_jvp;
pub use roles::Role;
pub use transpose::{transpose, Transposed};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum AdError {
    #[error("opaque `{0}` has no custom derivative")]
    MissingDerivative(String),
    #[error("`{func}` uses a tangent nonlinearly: {detail}")]
    NonlinearTangentUse { func: String, detail: String },
    #[error("vjp needs a function of exactly one parameter, found {0}")]
    MultiParamVjp(usize),
    #[error("`{func}` has non-index generic `{generic}`")]
    UnsupportedGeneric { func: String, generic: String },
    #[error("`{0}` has no real-valued parameter or result to differentiate")]
    NotDifferentiable(String),
    #[error("no function #{0}")]
    UnknownFunction(u32),
    #[error(transparent)]
    Build(BuildError),
}

impl From<BuildError> for AdError {
    fn from(e: BuildError) -> AdError {
        match e {
            BuildError::Autodiff(inner) => *inner,
            e => AdError::Build(e),
        }
    }
}

impl From<AdError> for BuildError {
    fn from(e: AdError) -> BuildError {
        match e {
            AdError::Build(b) => b,
            e => BuildError::Autodiff(Box::new(e)),
        }
    }
}

/// The function whose derivative `jvp` computes, if it is a dual JVP.
pub(crate) fn dual_base(reg: &Registry, jvp: FuncId) -> Option<FuncId> {
    if let Origin::Lifted(base) = reg.origin(jvp) {
        return Some(base);
    }
    reg.custom_jvps().find(|(_, j)| *j == jvp).map(|(b, _)| b)
}

pub(crate) fn check_generics(reg: &Registry, f: FuncId) -> Result<(), AdError> {
    let item = reg.get(f).ok_or(AdError::UnknownFunction(f.0))?;
    match item.generics().iter().find(|(_, k)| *k != Kind::Index) {
        Some((g, _)) => Err(AdError::UnsupportedGeneric {
            func: item.name().to_string(),
            generic: g.clone(),
        }),
        None => Ok(()),
    }
}

/// Run a transform over a registry that is not owned by a tracer.
pub fn with_registry<T>(reg: &mut Registry, f: impl FnOnce(&mut Tracer) -> T) -> T {
    let mut t = Tracer::with_registry(std::mem::take(reg));
    let out = f(&mut t);
    *reg = t.into_registry();
    out
}
