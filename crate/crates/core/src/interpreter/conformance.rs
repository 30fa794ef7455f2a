//! Strict-mode runs of every registered implementation on generated data.

use std::collections::BTreeMap;

use serde_json::{json, Value as Json};

use super::{generate_corpus, implemented_concepts, run, CorpusConfig, CorpusKind, RunOptions};
use crate::dataflow::{Dataflow, Edge, Node};
use crate::error::Error;
use crate::presto::Taxonomy;

/// One operator under test: its configuration, the corpus behind each input
/// port and operators applied to every input first.
#[derive(Debug, Clone)]
pub struct ConformanceCase {
    pub concept: &'static str,
    pub config: Json,
    pub inputs: Vec<CorpusKind>,
    pub prepare: Vec<(&'static str, Json)>,
}

fn case(concept: &'static str, config: Json, inputs: &[CorpusKind], prepare: &[(&'static str, Json)]) -> ConformanceCase {
    ConformanceCase {
        concept,
        config,
        inputs: inputs.to_vec(),
        prepare: prepare.to_vec(),
    }
}

/// A case for every implemented concept.
pub fn conformance_cases() -> Vec<ConformanceCase> {
    use CorpusKind::{Customers as C, News as N, Orders as O};
    let none = || json!({});
    let ent = [("anntt-ent-pers", json!({}))];
    let keys = json!({"left": "cust", "right": "cid"});
    vec![
        case("fltr", json!({"pred": {"path": "year", "op": ">", "value": 2010}}), &[N], &[]),
        case("prjt", json!({"fields": ["id", "text"]}), &[N], &[]),
        case("trnsf", json!({"set": {"origin": {"upper": "source"}}}), &[N], &[]),
        case("extend", json!({"set": {"n": {"len": "text"}}}), &[N], &[]),
        case("rename", json!({"from": "source", "to": "origin"}), &[N], &[]),
        case("nst", json!({"fields": ["year", "source"], "into": "meta"}), &[N], &[]),
        case("unnst", json!({"path": "entities.PER", "as": "person"}), &[N], &ent),
        case("join", keys.clone(), &[O, C], &[]),
        case("semi-join", keys.clone(), &[O, C], &[]),
        case("anti-join", keys.clone(), &[O, C], &[]),
        case("grp", json!({"by": "status", "aggs": {"n": {"count": null}, "total": {"sum": "amount"}}}), &[O], &[]),
        case("cogroup", keys.clone(), &[O, C], &[]),
        case("union-all", none(), &[O, O], &[]),
        case("distinct", none(), &[N], &[("prjt", json!({"fields": ["year"]}))]),
        case("cross", none(), &[C, C], &[("fltr", json!({"pred": {"path": "tier", "op": "==", "value": 1}}))]),
        case(
            "scrb",
            json!({"rules": [{"path": "year", "min": 2008}, {"path": "source", "allowed": ["wire", "web"], "action": "null"}]}),
            &[N],
            &[],
        ),
        case("ddup", json!({"path": "text", "threshold": 0.8}), &[N], &[]),
        case("fuse", none(), &[N], &[("ddup", json!({"path": "text", "threshold": 0.8}))]),
        case("sptrc", json!({"path": "entities.PER", "as": "person"}), &[N], &ent),
        case("trfrc", json!({"set": {"origin": {"lower": "source"}}}), &[N], &[]),
        case("lnkrc", json!({"left": "cust", "right": "cid", "ref": "cid", "as": "links"}), &[O, C], &[]),
        case("anntt-sent", none(), &[N], &[]),
        case("anntt-tok", none(), &[N], &[]),
        case("anntt-pos", none(), &[N], &[]),
        case("anntt-ent-pers", none(), &[N], &[]),
        case("anntt-ent-comp", none(), &[N], &[]),
        case("anntt-ent-loc", none(), &[N], &[]),
        case(
            "anntt-rel",
            none(),
            &[N],
            &[("anntt-ent-pers", json!({})), ("anntt-ent-comp", json!({})), ("anntt-pos", json!({}))],
        ),
        case("anntt-stem", none(), &[N], &[]),
        case("anntt-stop", none(), &[N], &[]),
        case("anntt-lang", none(), &[N], &[]),
        case("split-UDF", none(), &[N], &[("anntt-sent", json!({})), ("anntt-ent-pers", json!({}))]),
        case("edit-UDF", json!({"field": "stems", "action": "replace"}), &[N], &[("anntt-stem", json!({}))]),
        case("splt-tok", none(), &[N], &[]),
        case("mrg", json!({"on": "id"}), &[N, N], &ent),
        case("rmark", json!({"fields": ["text"]}), &[N], &[]),
    ]
}

/// Runs each case over `records` generated records per input in strict
/// mode. Returns `(concept, violation)` for every failing case, including
/// concepts without a case.
pub fn run_conformance(t: &Taxonomy, records: usize, seed: u64) -> Vec<(String, String)> {
    let cases = conformance_cases();
    let mut failures: Vec<(String, String)> = implemented_concepts()
        .into_iter()
        .filter(|c| !cases.iter().any(|k| k.concept == *c))
        .map(|c| (c.to_string(), "no conformance case".to_string()))
        .collect();
    let results = crate::par::map(&cases, |c| (c.concept, run_case(t, c, records, seed)));
    for (concept, r) in results {
        if let Err(msg) = r {
            failures.push((concept.to_string(), msg));
        }
    }
    failures
}

fn run_case(t: &Taxonomy, c: &ConformanceCase, records: usize, seed: u64) -> Result<(), String> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut data = BTreeMap::new();
    for (p, kind) in c.inputs.iter().enumerate() {
        let sid = format!("in{p}");
        let cfg = CorpusConfig {
            kind: *kind,
            records,
            markup: true,
            ..CorpusConfig::default()
        };
        data.insert(sid.clone(), generate_corpus(&cfg, seed + p as u64));
        nodes.push(Node::source(&sid, &[]));
        let mut prev = sid.clone();
        for (i, (op, cfg)) in c.prepare.iter().enumerate() {
            let id = format!("prep{p}_{i}");
            nodes.push(Node::op(&id, op, cfg.clone()));
            edges.push(Edge::new(&prev, &id, 0));
            prev = id;
        }
        edges.push(Edge::new(&prev, "op", p));
    }
    nodes.push(Node::op("op", c.concept, c.config.clone()));
    nodes.push(Node::sink("out"));
    edges.push(Edge::new("op", "out", 0));
    let d = Dataflow::new(nodes, edges);
    match run(&d, t, &data, RunOptions { strict: true }) {
        Ok(_) => Ok(()),
        Err(Error::Metadata { node, msg }) => Err(format!("{node}: {msg}")),
        Err(e) => Err(e.to_string()),
    }
}
