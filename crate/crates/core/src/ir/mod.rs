//! Typed first-order intermediate representation in administrative normal form.

pub mod alpha;
pub mod expr;
pub mod parse;
pub mod print;
pub mod registry;
pub mod typeck;
pub mod types;

pub use alpha::alpha_equivalent;
pub use expr::{BinaryOp, Block, Expr, FuncDef, FuncId, Let, OpaqueDef, Real, UnaryOp, VarId};
pub use parse::{parse_into, parse_ir, ParseError};
pub use print::{print_def, print_ir};
pub use registry::{std_routines, HostFault, HostFn, Item, Origin, Registry};
pub use typeck::{typecheck_function, validate_registry, RegistryError, TypeError, TypeErrorKind};
pub use types::{kind_of, Kind, KindEnv, KindError, Ty};

#[cfg(test)]
mod tests;
