//! Semantics-aware logical optimization of UDF-heavy dataflows.
//!
//! Operators are described in an operator-property taxonomy loaded from
//! `.presto` packages. Rewrite rules over that taxonomy decide which pairs of
//! operator instances may be reordered; the enumerator then builds every
//! plan consistent with the remaining precedence constraints and ranks them
//! with a cost model. A small interpreter executes plans so equivalence can be
//! checked on generated data.

pub mod baselines;
pub mod cost;
pub mod datamodel;
pub mod dataflow;
pub mod enumerator;
pub mod error;
pub mod fixtures;
pub mod interpreter;
pub mod par;
pub mod precedence;
pub mod presto;
pub mod rewrite;

pub use error::{Error, Result};
