//! Reverse-mode automatic differentiation for scalar programs.

pub mod ir;
pub mod exec;
pub mod builder;
pub mod autodiff;
pub mod opt;
pub mod cli;
