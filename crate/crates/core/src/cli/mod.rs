//! Demo programs, gradient checking, IR dumps and benchmarks behind the
//! command-line tool. Each command returns a [`Report`]; the binary renders it
//! and maps its status to an exit code.

mod args;
mod bench;
mod demos;
mod files;

use serde_json::{Map, Value as Json};
use thiserror::Error;

use crate::autodiff::AdError;
use crate::builder::BuildError;
use crate::exec::{CompileError, ExecError};
use crate::ir::ParseError;

pub use args::{execute, main_with, Cli, Command, Demo, Suite};
pub use bench::{bench_opcount, bench_scaling, inline_calls, least_squares, OpcountRow, ScalingReport};
pub use demos::{
    demo_registries, fit_linreg, linreg, quadratic, quadratic_at, quadratic_hessian_generic, spring, spring_callables, spring_trace,
    LinregResult, SpringParams, ANSCOMBE_X, ANSCOMBE_Y,
};
pub use files::{check, dump, gradcheck, load, rel_err, DumpOptions, GradCheckOptions, GradCheckReport, GradCheckRow};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Iteration cap reached, or a check failed its tolerance.
    NotConverged,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::NotConverged => 2,
        }
    }
}

/// Ordered `key = value` fields.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub status: Status,
    pub fields: Vec<(String, Json)>,
}

impl Report {
    pub fn new() -> Report {
        Report {
            status: Status::Ok,
            fields: Vec::new(),
        }
    }

    pub fn push(&mut self, key: &str, value: impl Into<Json>) {
        self.fields.push((key.to_string(), value.into()));
    }

    pub fn get(&self, key: &str) -> Option<&Json> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn render(&self, structured: bool) -> String {
        if structured {
            let mut m = Map::new();
            for (k, v) in &self.fields {
                m.insert(k.clone(), v.clone());
            }
            return serde_json::to_string_pretty(&Json::Object(m)).unwrap_or_default() + "\n";
        }
        let mut out = String::new();
        for (k, v) in &self.fields {
            match v {
                Json::String(s) if s.contains('\n') => out.push_str(s),
                Json::String(s) => out.push_str(&format!("{k} = {s}\n")),
                v => out.push_str(&format!("{k} = {v}\n")),
            }
        }
        out
    }
}

impl Default for Report {
    fn default() -> Self {
        Report::new()
    }
}

/// Settings shared by the iterative demos.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoConfig {
    pub eta: f64,
    pub max_iters: u64,
    /// Stop once no coordinate moves by more than this.
    pub tol: f64,
    pub seed: u64,
}

impl DemoConfig {
    pub fn linreg() -> DemoConfig {
        DemoConfig {
            eta: 1e-4,
            max_iters: 10_000_000,
            tol: 1e-12,
            seed: 0,
        }
    }

    pub fn spring() -> DemoConfig {
        DemoConfig {
            eta: 0.5,
            max_iters: 10_000,
            tol: 1e-6,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(CliError::Config(format!("step size must be positive, got {}", self.eta)));
        }
        if self.max_iters < 1 {
            return Err(CliError::Config("max iterations must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(CliError::Config(format!("tolerance must be non-negative, got {}", self.tol)));
        }
        Ok(())
    }
}
