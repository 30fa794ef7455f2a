use thiserror::Error;

use crate::dataflow::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("type conflict at `{path}`: {msg}")]
    TypeConflict { path: String, msg: String },
    #[error("invalid attribute path `{0}`")]
    InvalidPath(String),
    #[error("wildcard not allowed in write path `{0}`")]
    WildcardWrite(String),
    #[error("record root must be an object")]
    NotAnObject,
    #[error("parse error at {line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("isA cycle through `{0}`")]
    IsACycle(String),
    #[error("prerequisite cycle through `{0}`")]
    PrerequisiteCycle(String),
    #[error("dangling reference to `{0}`")]
    Dangling(String),
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("concept `{name}` redefined as {new} (was {old})")]
    Redefinition { name: String, old: String, new: String },
    #[error("rule rejected: {0}")]
    BadRule(String),
    #[error("complex operator `{0}` has no hasPart mapping")]
    NoParts(String),
    #[error("dataflow contains a cycle through `{0}`")]
    Cycle(String),
    #[error("dataflow is empty")]
    EmptyFlow,
    #[error("unconnected input port {port} of `{node}`")]
    Unconnected { node: String, port: usize },
    #[error("invalid dataflow: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("missing statistics: {0}")]
    MissingStats(String),
    #[error("empty sample: raise the sampling fraction")]
    EmptySample,
    #[error("execution of `{node}` failed: {msg}")]
    Exec { node: String, msg: String },
    #[error("metadata violation in `{node}`: {msg}")]
    Metadata { node: String, msg: String },
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
