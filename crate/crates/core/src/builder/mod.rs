//! Tracing host closures into IR definitions.

mod math;
mod record;
mod tracer;

use thiserror::Error;

pub use math::{clamped_sqrt, StdMath};
pub use record::RecordType;
pub use tracer::{FuncHandle, Handle, Operand, Tracer};
pub(crate) use tracer::unify;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum BuildError {
    #[error("no definition is being traced")]
    NoActiveContext,
    #[error("type error ({rule}): {message}")]
    Type { rule: &'static str, message: String },
    #[error("value belongs to a different definition")]
    Escape,
    #[error("value is used outside the block that bound it")]
    OutOfScope,
    #[error("accumulator escapes its block")]
    AccumulatorEscape,
    #[error("expected {expected} arguments, found {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("cannot infer generic `{0}` from the arguments")]
    InferenceFailure(String),
    #[error("opaque functions take and return Real only")]
    NonScalarOpaque,
    #[error("bad custom derivative: {0}")]
    BadCustomJvpSignature(String),
    #[error("record has no field `{0}`")]
    UnknownField(String),
    #[error(transparent)]
    Autodiff(Box<crate::autodiff::AdError>),
}

#[cfg(test)]
mod tests;
