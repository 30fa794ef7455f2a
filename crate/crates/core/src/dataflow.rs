//! Dataflow graphs: sources, sinks and operator instances wired by ports.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

use crate::datamodel::{schema_contains, AttributePath, SchemaDescriptor, WriteMode};
use crate::error::{Error, Result};
use crate::presto::{ConceptKind, Taxonomy};

pub type NodeId = String;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteDecl {
    pub path: AttributePath,
    pub mode: WriteMode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Source,
    Sink,
    Op {
        op: String,
        reads: Option<Vec<AttributePath>>,
        writes: Option<Vec<WriteDecl>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub config: Map<String, Json>,
}

impl Node {
    pub fn source(id: &str, schema: &[&str]) -> Node {
        let mut config = Map::new();
        config.insert("schema".into(), Json::from(schema.to_vec()));
        Node {
            id: id.into(),
            kind: NodeKind::Source,
            config,
        }
    }

    pub fn sink(id: &str) -> Node {
        Node {
            id: id.into(),
            kind: NodeKind::Sink,
            config: Map::new(),
        }
    }

    pub fn op(id: &str, op: &str, config: Json) -> Node {
        Node {
            id: id.into(),
            kind: NodeKind::Op {
                op: op.into(),
                reads: None,
                writes: None,
            },
            config: match config {
                Json::Object(m) => m,
                _ => Map::new(),
            },
        }
    }

    pub fn op_name(&self) -> Option<&str> {
        match &self.kind {
            NodeKind::Op { op, .. } => Some(op),
            _ => None,
        }
    }

    pub fn is_source(&self) -> bool {
        matches!(self.kind, NodeKind::Source)
    }

    pub fn is_sink(&self) -> bool {
        matches!(self.kind, NodeKind::Sink)
    }

    /// Declared schema of a source node.
    pub fn source_schema(&self) -> SchemaDescriptor {
        let paths = self
            .config
            .get("schema")
            .and_then(Json::as_array)
            .map(|a| {
                a.iter()
                    .filter_map(Json::as_str)
                    .filter_map(|p| AttributePath::parse(p).ok())
                    .collect::<Vec<_>>()
            })
            .unwrap_or_default();
        SchemaDescriptor::new(paths)
    }

    /// Name of the dataset bound to a source (defaults to the node id).
    pub fn dataset_name(&self) -> &str {
        self.config
            .get("dataset")
            .and_then(Json::as_str)
            .unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    #[serde(rename = "fromPort", default)]
    pub from_port: usize,
    pub to: NodeId,
    #[serde(rename = "toPort", default)]
    pub to_port: usize,
}

impl Edge {
    pub fn new(from: &str, to: &str, to_port: usize) -> Edge {
        Edge {
            from: from.into(),
            from_port: 0,
            to: to.into(),
            to_port,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataflow {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

/// Effective attribute access of an operator instance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Access {
    pub reads: BTreeSet<AttributePath>,
    pub writes: BTreeMap<AttributePath, WriteMode>,
}

impl Access {
    pub fn accessed(&self) -> BTreeSet<AttributePath> {
        self.reads.iter().chain(self.writes.keys()).cloned().collect()
    }

    pub fn merge(&mut self, other: &Access) {
        self.reads.extend(other.reads.iter().cloned());
        for (p, m) in &other.writes {
            let e = self.writes.entry(p.clone()).or_insert(*m);
            if *m == WriteMode::Set {
                *e = WriteMode::Set;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    DuplicateNode,
    DanglingEdge,
    SourceInput,
    SinkOutput,
    UnknownOperator,
    AbstractOperator,
    PortArity,
    Cycle,
    Disconnected,
    NoSourceOrSink,
    Schema,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub subject: String,
    pub msg: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}: {}", self.kind, self.subject, self.msg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Side {
    In,
    Out,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PortSchema {
    pub node: NodeId,
    pub side: Side,
    pub port: usize,
    pub schema: SchemaDescriptor,
}

impl Dataflow {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Dataflow {
        Dataflow { nodes, edges }
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_ids(&self) -> BTreeSet<NodeId> {
        self.nodes.iter().map(|n| n.id.clone()).collect()
    }

    /// Incoming edges of `id` ordered by port.
    pub fn inputs(&self, id: &str) -> Vec<&Edge> {
        let mut v: Vec<&Edge> = self.edges.iter().filter(|e| e.to == id).collect();
        v.sort_by_key(|e| (e.to_port, e.from.clone()));
        v
    }

    pub fn outputs(&self, id: &str) -> Vec<&Edge> {
        let mut v: Vec<&Edge> = self.edges.iter().filter(|e| e.from == id).collect();
        v.sort();
        v
    }

    pub fn sources(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.is_source())
    }

    pub fn sinks(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.is_sink())
    }

    pub fn operators(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.op_name().is_some())
    }

    /// True if some node feeds more than one consumer.
    pub fn is_dag_shaped(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.edges.iter().any(|e| !seen.insert(e.from.clone()))
    }

    /// Canonical form: sorted edge list. Node ids are labels, so two flows over
    /// the same instances are isomorphic iff their edge sets coincide.
    pub fn canonical(&self) -> Vec<Edge> {
        let mut e = self.edges.clone();
        e.sort();
        e
    }

    pub fn canonical_key(&self) -> String {
        self.canonical()
            .iter()
            .map(|e| format!("{}:{}>{}:{}", e.from, e.from_port, e.to, e.to_port))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Reflexive reachability sets, keyed by node.
    pub fn reachability(&self) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
        let mut out = BTreeMap::new();
        for n in &self.nodes {
            let mut seen = BTreeSet::from([n.id.clone()]);
            let mut stack = vec![n.id.clone()];
            while let Some(x) = stack.pop() {
                for e in self.edges.iter().filter(|e| e.from == x) {
                    if seen.insert(e.to.clone()) {
                        stack.push(e.to.clone());
                    }
                }
            }
            out.insert(n.id.clone(), seen);
        }
        out
    }

    pub fn from_json_str(s: &str) -> Result<Dataflow> {
        let v: Json = serde_json::from_str(s)?;
        Dataflow::from_json(&v)
    }

    pub fn from_json(v: &Json) -> Result<Dataflow> {
        let bad = |m: &str| Error::Parse {
            line: 0,
            col: 0,
            msg: m.to_string(),
        };
        let nodes_json = v
            .get("nodes")
            .and_then(Json::as_array)
            .ok_or_else(|| bad("missing `nodes` array"))?;
        let mut nodes = Vec::new();
        for n in nodes_json {
            let id = n
                .get("id")
                .and_then(Json::as_str)
                .ok_or_else(|| bad("node without `id`"))?
                .to_string();
            let config = n
                .get("config")
                .and_then(Json::as_object)
                .cloned()
                .unwrap_or_default();
            let kind = match n.get("kind").and_then(Json::as_str).unwrap_or("op") {
                "source" => NodeKind::Source,
                "sink" => NodeKind::Sink,
                "op" => {
                    let op = n
                        .get("op")
                        .and_then(Json::as_str)
                        .ok_or_else(|| bad(&format!("operator node `{id}` without `op`")))?
                        .to_string();
                    let reads = match n.get("reads") {
                        Some(r) => Some(serde_json::from_value::<Vec<AttributePath>>(r.clone())?),
                        None => None,
                    };
                    let writes = match n.get("writes") {
                        Some(w) => Some(serde_json::from_value::<Vec<WriteDecl>>(w.clone())?),
                        None => None,
                    };
                    NodeKind::Op { op, reads, writes }
                }
                other => return Err(bad(&format!("unknown node kind `{other}`"))),
            };
            nodes.push(Node { id, kind, config });
        }
        let edges = match v.get("edges") {
            Some(e) => serde_json::from_value::<Vec<Edge>>(e.clone())?,
            None => Vec::new(),
        };
        Ok(Dataflow { nodes, edges })
    }

    pub fn to_json(&self) -> Json {
        let nodes: Vec<Json> = self
            .nodes
            .iter()
            .map(|n| {
                let mut m = Map::new();
                m.insert("id".into(), Json::from(n.id.clone()));
                match &n.kind {
                    NodeKind::Source => {
                        m.insert("kind".into(), "source".into());
                    }
                    NodeKind::Sink => {
                        m.insert("kind".into(), "sink".into());
                    }
                    NodeKind::Op { op, reads, writes } => {
                        m.insert("kind".into(), "op".into());
                        m.insert("op".into(), Json::from(op.clone()));
                        if let Some(r) = reads {
                            m.insert("reads".into(), serde_json::to_value(r).unwrap());
                        }
                        if let Some(w) = writes {
                            m.insert("writes".into(), serde_json::to_value(w).unwrap());
                        }
                    }
                }
                if !n.config.is_empty() {
                    m.insert("config".into(), Json::Object(n.config.clone()));
                }
                Json::Object(m)
            })
            .collect();
        serde_json::json!({ "nodes": nodes, "edges": self.edges })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).unwrap()
    }
}

/// Kahn's algorithm with ties broken by node id.
pub fn topological_order(d: &Dataflow) -> Result<Vec<NodeId>> {
    if d.nodes.is_empty() {
        return Err(Error::EmptyFlow);
    }
    let mut indeg: BTreeMap<&str, usize> = d.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
    for e in &d.edges {
        if let Some(c) = indeg.get_mut(e.to.as_str()) {
            *c += 1;
        }
    }
    let mut ready: BTreeSet<&str> = indeg
        .iter()
        .filter(|(_, c)| **c == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut order = Vec::with_capacity(d.nodes.len());
    while let Some(n) = ready.pop_first() {
        order.push(n.to_string());
        for e in d.edges.iter().filter(|e| e.from == n) {
            if let Some(c) = indeg.get_mut(e.to.as_str()) {
                *c -= 1;
                if *c == 0 {
                    ready.insert(e.to.as_str());
                }
            }
        }
    }
    if order.len() < d.nodes.len() {
        let stuck = indeg
            .iter()
            .find(|(n, c)| **c > 0 && !order.iter().any(|o| o == *n))
            .map(|(n, _)| n.to_string())
            .unwrap_or_default();
        return Err(Error::Cycle(stuck));
    }
    Ok(order)
}

/// Input arity of a node: 0 for sources, 1 for sinks, taxonomy arity for operators.
pub fn input_arity(n: &Node, t: &Taxonomy) -> Option<usize> {
    match &n.kind {
        NodeKind::Source => Some(0),
        NodeKind::Sink => Some(1),
        NodeKind::Op { op, .. } => t.arity(op),
    }
}

/// Forward schema propagation in topological order.
pub fn propagate_schemas(d: &Dataflow, t: &Taxonomy) -> Result<Vec<PortSchema>> {
    let order = topological_order(d)?;
    let mut out_schema: BTreeMap<NodeId, SchemaDescriptor> = BTreeMap::new();
    let mut result = Vec::new();
    for id in &order {
        let node = d.node(id).expect("ordered node exists");
        let arity = input_arity(node, t).ok_or_else(|| Error::UnknownConcept(node_label(node)))?;
        let inputs = d.inputs(id);
        let mut in_schemas = Vec::with_capacity(arity);
        for port in 0..arity {
            let e = inputs
                .iter()
                .find(|e| e.to_port == port)
                .ok_or_else(|| Error::Unconnected {
                    node: id.clone(),
                    port,
                })?;
            let s = out_schema.get(&e.from).cloned().unwrap_or_default();
            result.push(PortSchema {
                node: id.clone(),
                side: Side::In,
                port,
                schema: s.clone(),
            });
            in_schemas.push(s);
        }
        let out = match &node.kind {
            NodeKind::Source => node.source_schema(),
            NodeKind::Sink => in_schemas.into_iter().next().unwrap_or_default(),
            NodeKind::Op { op, .. } => t.output_schema(node, op, &in_schemas),
        };
        if !node.is_sink() {
            result.push(PortSchema {
                node: id.clone(),
                side: Side::Out,
                port: 0,
                schema: out.clone(),
            });
        }
        out_schema.insert(id.clone(), out);
    }
    result.sort();
    Ok(result)
}

fn node_label(n: &Node) -> String {
    n.op_name().unwrap_or(&n.id).to_string()
}

impl Serialize for Dataflow {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

/// Checks every structural and schema invariant; empty result means valid.
pub fn validate(d: &Dataflow, t: &Taxonomy) -> Vec<Violation> {
    let mut v = Vec::new();
    let mut push = |kind, subject: &str, msg: String| {
        v.push(Violation {
            kind,
            subject: subject.to_string(),
            msg,
        })
    };
    let mut ids = BTreeSet::new();
    for n in &d.nodes {
        if !ids.insert(n.id.as_str()) {
            push(ViolationKind::DuplicateNode, &n.id, "duplicate node id".into());
        }
    }
    if d.nodes.is_empty() {
        push(ViolationKind::NoSourceOrSink, "flow", "empty dataflow".into());
    }
    if d.sources().next().is_none() || d.sinks().next().is_none() {
        push(
            ViolationKind::NoSourceOrSink,
            "flow",
            "needs at least one source and one sink".into(),
        );
    }
    let mut dangling = false;
    for e in &d.edges {
        let subj = format!("{}->{}", e.from, e.to);
        match (d.node(&e.from), d.node(&e.to)) {
            (Some(f), Some(to)) => {
                if to.is_source() {
                    push(ViolationKind::SourceInput, &subj, "source has an incoming edge".into());
                }
                if f.is_sink() {
                    push(ViolationKind::SinkOutput, &subj, "sink has an outgoing edge".into());
                }
                if e.from_port != 0 {
                    push(ViolationKind::PortArity, &subj, format!("no output port {}", e.from_port));
                }
            }
            _ => {
                dangling = true;
                push(ViolationKind::DanglingEdge, &subj, "edge endpoint not in flow".into())
            }
        }
    }
    let mut arity_ok = true;
    for n in &d.nodes {
        if let NodeKind::Op { op, .. } = &n.kind {
            match t.concept(op) {
                None => {
                    push(ViolationKind::UnknownOperator, &n.id, format!("unknown operator `{op}`"));
                    arity_ok = false;
                    continue;
                }
                Some(c) if c.kind == ConceptKind::Abstract => {
                    push(ViolationKind::AbstractOperator, &n.id, format!("`{op}` is abstract"));
                }
                _ => {}
            }
        }
        let Some(arity) = input_arity(n, t) else {
            arity_ok = false;
            continue;
        };
        let ins = d.inputs(&n.id);
        for port in 0..arity {
            let c = ins.iter().filter(|e| e.to_port == port).count();
            if c != 1 {
                arity_ok = false;
                push(
                    ViolationKind::PortArity,
                    &n.id,
                    format!("input port {port} has {c} incoming edges"),
                );
            }
        }
        for e in ins.iter().filter(|e| e.to_port >= arity) {
            arity_ok = false;
            push(
                ViolationKind::PortArity,
                &n.id,
                format!("edge from `{}` into nonexistent port {}", e.from, e.to_port),
            );
        }
    }
    let acyclic = match topological_order(d) {
        Ok(_) => true,
        Err(Error::Cycle(at)) => {
            push(ViolationKind::Cycle, &at, "cycle detected".into());
            false
        }
        Err(_) => false,
    };
    if !d.nodes.is_empty() && !weakly_connected(d) {
        push(ViolationKind::Disconnected, "flow", "dataflow is not connected".into());
    }
    if acyclic && arity_ok && !dangling {
        if let Ok(schemas) = propagate_schemas(d, t) {
            for ps in schemas.iter().filter(|p| p.side == Side::In) {
                let node = d.node(&ps.node).unwrap();
                let need = t.port_requirements(node, ps.port, d.inputs(&ps.node).len());
                if !schema_contains(&ps.schema, &need) {
                    let missing: Vec<String> = need
                        .attributes
                        .iter()
                        .filter(|p| !ps.schema.contains_path(p))
                        .map(|p| p.to_string())
                        .collect();
                    push(
                        ViolationKind::Schema,
                        &format!("{}:{}", ps.node, ps.port),
                        format!("requires {} not produced upstream", missing.join(", ")),
                    );
                }
            }
        }
    }
    v
}

fn weakly_connected(d: &Dataflow) -> bool {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([d.nodes[0].id.clone()]);
    seen.insert(d.nodes[0].id.clone());
    while let Some(x) = queue.pop_front() {
        for e in &d.edges {
            let other = if e.from == x {
                &e.to
            } else if e.to == x {
                &e.from
            } else {
                continue;
            };
            if seen.insert(other.clone()) {
                queue.push_back(other.clone());
            }
        }
    }
    seen.len() == d.nodes.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Dataflow {
        Dataflow::new(
            vec![Node::source("s", &["a"]), Node::op("a", "fltr", Json::Null), Node::sink("k")],
            vec![Edge::new("s", "a", 0), Edge::new("a", "k", 0)],
        )
    }

    #[test]
    fn topo_chain_and_diamond() {
        assert_eq!(topological_order(&chain()).unwrap(), vec!["s", "a", "k"]);
        let d = Dataflow::new(
            vec![
                Node::source("s", &[]),
                Node::op("b", "x", Json::Null),
                Node::op("a", "x", Json::Null),
                Node::op("m", "x", Json::Null),
                Node::sink("k"),
            ],
            vec![
                Edge::new("s", "a", 0),
                Edge::new("s", "b", 0),
                Edge::new("a", "m", 0),
                Edge::new("b", "m", 1),
                Edge::new("m", "k", 0),
            ],
        );
        let o = topological_order(&d).unwrap();
        let pos = |x: &str| o.iter().position(|y| y == x).unwrap();
        assert_eq!(o[0], "s");
        assert_eq!(o[4], "k");
        assert!(pos("a") < pos("m") && pos("b") < pos("m"));
    }

    #[test]
    fn topo_errors() {
        assert!(matches!(topological_order(&Dataflow::default()), Err(Error::EmptyFlow)));
        let mut d = chain();
        d.edges.push(Edge::new("a", "a", 0));
        assert!(matches!(topological_order(&d), Err(Error::Cycle(_))));
    }

    #[test]
    fn json_roundtrip() {
        let text = r#"{"nodes":[{"id":"s","kind":"source","config":{"schema":["text"]}},
            {"id":"f","kind":"op","op":"fltr","config":{"pred":{"path":"year","op":">","value":2010}},
             "reads":["year"],"writes":[{"path":"es","mode":"append"}]},
            {"id":"k","kind":"sink"}],
            "edges":[{"from":"s","fromPort":0,"to":"f","toPort":0},{"from":"f","fromPort":0,"to":"k","toPort":0}]}"#;
        let d = Dataflow::from_json_str(text).unwrap();
        let again = Dataflow::from_json_str(&d.to_json_string()).unwrap();
        assert_eq!(d, again);
        assert_eq!(d.to_json(), again.to_json());
    }

    #[test]
    fn dag_shape() {
        assert!(!chain().is_dag_shaped());
    }
}
