//! Post-transposition cleanup: cancel tuple plumbing, fold additive and
//! multiplicative zeros, erase unit results and drop dead lets.

mod simplify;

pub use simplify::{simplify, simplify_registry, simplify_with};

/// Which sub-passes run, and how many rounds at most.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PassConfig {
    /// `fst (a, b)` to `a`, constant indexing into array literals, and so on.
    pub pair_scalarization: bool,
    pub copy_propagation: bool,
    pub zero_folding: bool,
    pub unit_erasure: bool,
    pub dead_let_elimination: bool,
    pub max_rounds: usize,
}

impl Default for PassConfig {
    fn default() -> PassConfig {
        PassConfig {
            pair_scalarization: true,
            copy_propagation: true,
            zero_folding: true,
            unit_erasure: true,
            dead_let_elimination: true,
            max_rounds: 32,
        }
    }
}

#[cfg(test)]
mod tests;
