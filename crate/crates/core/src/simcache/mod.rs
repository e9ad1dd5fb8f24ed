//! Reference execution: an interpreter producing array contents and the
//! ordered access trace, an exclusive LRU cache simulator, and brute-force
//! working sets over trace segments.

mod cache;
mod interp;
mod trace;

pub use cache::{simulate, simulate_records, simulate_trace, CacheSim, LevelStats, SimOptions, SimStats};
pub use interp::{execute, run, Arrays, NullObserver, Observer};
pub use trace::{trace, trace_working_set, Record, Trace};

use crate::polyset::SetError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("unbound name `{0}`")]
    Unbound(String),
    #[error("array `{array}` has invalid extents {extents:?}")]
    BadExtent { array: String, extents: Vec<i64> },
    #[error("array `{array}` indexed with the wrong number of subscripts")]
    Rank { array: String },
    #[error("statement {stmt}: access {array}{index:?} is out of bounds")]
    OutOfBounds { stmt: String, array: String, index: Vec<i64> },
    #[error(transparent)]
    Set(#[from] SetError),
    #[error("malformed trace: {0}")]
    Format(String),
}

#[cfg(test)]
mod tests;
