#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value as Json};

use sofa_core::dataflow::{Dataflow, Edge, Node};
use sofa_core::datamodel::{Dataset, Record};

pub const NEWS: &[&str] = &["id", "year", "text", "source"];

/// src -> ops... -> sink over the news schema.
pub fn chain(ops: &[(&str, &str, Json)]) -> Dataflow {
    chain_with(NEWS, ops)
}

pub fn chain_with(schema: &[&str], ops: &[(&str, &str, Json)]) -> Dataflow {
    let mut nodes = vec![Node::source("src", schema)];
    let mut edges = Vec::new();
    let mut prev = "src".to_string();
    for (id, op, cfg) in ops {
        nodes.push(Node::op(id, op, cfg.clone()));
        edges.push(Edge::new(&prev, id, 0));
        prev = id.to_string();
    }
    nodes.push(Node::sink("sink"));
    edges.push(Edge::new(&prev, "sink", 0));
    Dataflow::new(nodes, edges)
}

pub fn year_gt(y: i64) -> Json {
    json!({"pred": {"path": "year", "op": ">", "value": y}})
}

pub fn count_gt(path: &str, n: i64) -> Json {
    json!({"pred": {"count": path, "op": ">", "value": n}})
}

pub fn rec(s: &str) -> Record {
    Record::from_json_str(s).unwrap()
}

pub fn records(lines: &[&str]) -> Dataset {
    Dataset::new(lines.iter().map(|l| rec(l)).collect())
}

pub fn news(ds: Dataset) -> BTreeMap<String, Dataset> {
    BTreeMap::from([("src".to_string(), ds)])
}

pub fn pairs(xs: &[(&str, &str)]) -> BTreeSet<(String, String)> {
    xs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

/// Reachability by depth-first search, independent of the closure code.
pub fn dfs_closure(d: &Dataflow) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for n in &d.nodes {
        let mut stack = vec![n.id.clone()];
        let mut seen = BTreeSet::new();
        while let Some(u) = stack.pop() {
            for e in d.outputs(&u) {
                if seen.insert(e.to.clone()) {
                    out.insert((n.id.clone(), e.to.clone()));
                    stack.push(e.to.clone());
                }
            }
        }
    }
    out
}
