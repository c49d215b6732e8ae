//! Monomorphization and evaluation of IR definitions.

mod compile;
mod interp;
pub mod value;

pub use compile::{compile, compile_with, Callable, CompileError};
pub use interp::{sgn, ExecError, OpCounts};
pub use value::{MarshalError, Shape, Value};
