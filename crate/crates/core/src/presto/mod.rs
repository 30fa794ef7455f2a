//! The operator-property graph: operator and property taxonomies linked by
//! isA, hasProperty, hasPrerequisite and hasPart, loaded from `.presto` files.

mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde_json::{Map, Value as Json};

use crate::dataflow::{propagate_schemas, Access, Dataflow, Edge, Node, NodeKind, Side};
use crate::datamodel::{AttributePath, SchemaDescriptor, WriteMode};
use crate::error::{Error, Result};
use crate::interpreter::{self, FieldUpdates, SchemaBehavior};
use crate::rewrite::{self, RewriteRule};

use parse::{Located, PartBlock, Stmt};

pub const OPERATOR_ROOT: &str = "operator";
pub const PROPERTY_ROOT: &str = "property";

/// Built-in package sources, in load order.
pub const BUILTIN_PACKAGES: &[(&str, &str)] = &[
    ("base", include_str!("../../../../packages/base.presto")),
    ("ie", include_str!("../../../../packages/ie.presto")),
    ("dc", include_str!("../../../../packages/dc.presto")),
    ("web", include_str!("../../../../packages/web.presto")),
];

/// Optional annotation packages for the web operator, applied on top of `web`.
pub const WEB_LEVELS: &[(&str, &str)] = &[
    ("web-l1", include_str!("../../../../packages/web-l1.presto")),
    ("web-l2", include_str!("../../../../packages/web-l2.presto")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ConceptKind {
    Root,
    Abstract,
    Concrete,
    Complex,
    AutoProperty,
    AnnotatedProperty,
}

impl ConceptKind {
    fn parse(s: &str) -> Option<ConceptKind> {
        Some(match s {
            "abstract" => ConceptKind::Abstract,
            "concrete" => ConceptKind::Concrete,
            "complex" => ConceptKind::Complex,
            "auto" => ConceptKind::AutoProperty,
            "annotated" => ConceptKind::AnnotatedProperty,
            _ => return None,
        })
    }

    pub fn is_property(self) -> bool {
        matches!(self, ConceptKind::AutoProperty | ConceptKind::AnnotatedProperty)
    }
}

impl fmt::Display for ConceptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConceptKind::Root => "root",
            ConceptKind::Abstract => "abstract",
            ConceptKind::Concrete => "concrete",
            ConceptKind::Complex => "complex",
            ConceptKind::AutoProperty => "auto",
            ConceptKind::AnnotatedProperty => "annotated",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Concept {
    pub name: String,
    pub package: String,
    pub kind: ConceptKind,
}

impl Concept {
    /// Namespaced id such as `base:fltr`.
    pub fn id(&self) -> String {
        format!("{}:{}", self.package, self.name)
    }

    pub fn is_operator(&self) -> bool {
        !self.kind.is_property() && self.name != PROPERTY_ROOT
    }
}

/// Component template of a complex operator. Endpoint names `in`, `inN` and
/// `out` denote the instance's own ports.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PartTemplate {
    pub nodes: Vec<(String, String)>,
    pub edges: Vec<(String, usize, String, usize)>,
    pub binds: Vec<(String, String)>,
    pub sets: Vec<(String, String, String)>,
}

impl From<PartBlock> for PartTemplate {
    fn from(b: PartBlock) -> Self {
        PartTemplate {
            nodes: b.nodes,
            edges: b.edges,
            binds: b.binds,
            sets: b.sets,
        }
    }
}

fn entry_port(name: &str) -> Option<usize> {
    if name == "in" {
        return Some(0);
    }
    name.strip_prefix("in").and_then(|n| n.parse().ok())
}

/// What one `load_package` call added.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PackageDelta {
    pub package: String,
    pub new_concepts: usize,
    pub new_relations: usize,
    pub new_rules: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Taxonomy {
    concepts: BTreeMap<String, Concept>,
    parents: BTreeMap<String, BTreeSet<String>>,
    props: BTreeMap<String, BTreeSet<String>>,
    auto_props: BTreeMap<String, BTreeSet<String>>,
    prereqs: BTreeSet<(String, String)>,
    parts: BTreeMap<String, PartTemplate>,
    arity: BTreeMap<String, usize>,
    reads: BTreeMap<String, BTreeSet<AttributePath>>,
    writes: BTreeMap<String, BTreeMap<AttributePath, WriteMode>>,
    costs: BTreeMap<String, BTreeMap<String, f64>>,
    rules: Vec<RewriteRule>,
    packages: Vec<String>,
    // derived on every successful load
    anc: BTreeMap<String, BTreeSet<String>>,
    pre: BTreeSet<(String, String)>,
}

impl Taxonomy {
    /// Empty taxonomy holding only the two roots.
    pub fn new() -> Taxonomy {
        let mut t = Taxonomy::default();
        for root in [OPERATOR_ROOT, PROPERTY_ROOT] {
            t.concepts.insert(
                root.into(),
                Concept {
                    name: root.into(),
                    package: "core".into(),
                    kind: ConceptKind::Root,
                },
            );
        }
        t.arity.insert(OPERATOR_ROOT.into(), 1);
        t.recompute().expect("roots are consistent");
        t
    }

    /// All built-in packages (web operator at annotation level 0).
    pub fn builtin() -> Taxonomy {
        Taxonomy::builtin_with_level(0)
    }

    /// Built-in packages with the web operator annotated up to `level` (0..=2).
    pub fn builtin_with_level(level: usize) -> Taxonomy {
        let mut t = Taxonomy::new();
        for (name, src) in BUILTIN_PACKAGES {
            t.load_package(src)
                .unwrap_or_else(|e| panic!("built-in package {name}: {e}"));
        }
        for (name, src) in WEB_LEVELS.iter().take(level) {
            t.load_package(src)
                .unwrap_or_else(|e| panic!("built-in package {name}: {e}"));
        }
        t
    }

    /// Resolves `base:fltr` or `fltr` to its short name.
    pub fn resolve(&self, name: &str) -> Option<&str> {
        if let Some(c) = self.concepts.get(name) {
            return Some(&c.name);
        }
        let (pkg, short) = name.split_once(':')?;
        match self.concepts.get(short) {
            Some(c) if c.package == pkg || pkg == "prop" && c.kind.is_property() => Some(&c.name),
            _ => None,
        }
    }

    pub fn concept(&self, name: &str) -> Option<&Concept> {
        self.resolve(name).and_then(|n| self.concepts.get(n))
    }

    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn packages(&self) -> &[String] {
        &self.packages
    }

    pub fn rules(&self) -> &[RewriteRule] {
        &self.rules
    }

    pub fn parents(&self, name: &str) -> BTreeSet<String> {
        self.resolve(name)
            .and_then(|n| self.parents.get(n))
            .cloned()
            .unwrap_or_default()
    }

    fn must(&self, name: &str) -> Result<&str> {
        self.resolve(name)
            .ok_or_else(|| Error::UnknownConcept(name.to_string()))
    }

    /// Reflexive-transitive isA closure.
    pub fn ancestors(&self, c: &str) -> Result<BTreeSet<String>> {
        let n = self.must(c)?;
        Ok(self.anc.get(n).cloned().unwrap_or_default())
    }

    pub fn is_a(&self, x: &str, y: &str) -> bool {
        match (self.resolve(x), self.resolve(y)) {
            (Some(x), Some(y)) => self.anc.get(x).is_some_and(|a| a.contains(y)),
            _ => false,
        }
    }

    /// Strict descendants included; reflexive.
    pub fn descendants(&self, c: &str) -> BTreeSet<String> {
        let Some(c) = self.resolve(c) else {
            return BTreeSet::new();
        };
        self.anc
            .iter()
            .filter(|(_, a)| a.contains(c))
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// True if some ancestor of `op` carries `p` or a specialization of `p`.
    pub fn has_property(&self, op: &str, p: &str) -> Result<bool> {
        let op = self.must(op)?;
        let p = self.must(p)?;
        Ok(self.has_property_resolved(op, p))
    }

    fn has_property_resolved(&self, op: &str, p: &str) -> bool {
        let Some(anc) = self.anc.get(op) else {
            return false;
        };
        anc.iter().any(|a| {
            self.props
                .get(a)
                .into_iter()
                .chain(self.auto_props.get(a))
                .flatten()
                .any(|q| self.anc.get(q).is_some_and(|qa| qa.contains(p)))
        })
    }

    /// Directly attached properties (declared and auto-detected), without inheritance.
    pub fn own_properties(&self, op: &str) -> (BTreeSet<String>, BTreeSet<String>) {
        let op = self.resolve(op).unwrap_or(op);
        (
            self.props.get(op).cloned().unwrap_or_default(),
            self.auto_props.get(op).cloned().unwrap_or_default(),
        )
    }

    /// `x` must run before `y`.
    pub fn has_prerequisite(&self, x: &str, y: &str) -> Result<bool> {
        let x = self.must(x)?;
        let y = self.must(y)?;
        Ok(self.pre.contains(&(x.to_string(), y.to_string())))
    }

    pub fn prerequisite_pairs(&self) -> &BTreeSet<(String, String)> {
        &self.pre
    }

    /// Input arity, inherited along isA (first declaration found breadth-first).
    pub fn arity(&self, op: &str) -> Option<usize> {
        let c = self.concept(op)?;
        if !c.is_operator() {
            return None;
        }
        let mut frontier = vec![c.name.clone()];
        let mut seen = BTreeSet::new();
        while !frontier.is_empty() {
            for f in &frontier {
                if let Some(a) = self.arity.get(f) {
                    return Some(*a);
                }
            }
            let mut next = Vec::new();
            for f in frontier {
                if seen.insert(f.clone()) {
                    next.extend(self.parents.get(&f).into_iter().flatten().cloned());
                }
            }
            frontier = next;
        }
        Some(1)
    }

    pub fn part_template(&self, op: &str) -> Option<&PartTemplate> {
        self.resolve(op).and_then(|n| self.parts.get(n))
    }

    pub fn is_complex(&self, op: &str) -> bool {
        self.concept(op).is_some_and(|c| c.kind == ConceptKind::Complex)
    }

    /// Default cost annotations declared for `op` or its nearest ancestor.
    pub fn cost_defaults(&self, op: &str) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        if let Ok(anc) = self.ancestors(op) {
            // farther ancestors first so nearer declarations win
            let mut by_depth: Vec<(usize, &String)> =
                anc.iter().map(|a| (self.anc[a].len(), a)).collect();
            by_depth.sort();
            for (_, a) in by_depth {
                if let Some(m) = self.costs.get(a) {
                    out.extend(m.iter().map(|(k, v)| (k.clone(), *v)));
                }
            }
        }
        out
    }

    /// Effective attribute access of an operator instance: declared sets on the
    /// instance win over implementation metadata, which wins over package defaults.
    pub fn access(&self, node: &Node) -> Access {
        let NodeKind::Op { op, reads, writes } = &node.kind else {
            return Access::default();
        };
        let mut acc = self.derived_access(node, op);
        if let Some(r) = reads {
            acc.reads = r.iter().cloned().collect();
        }
        if let Some(w) = writes {
            acc.writes = w.iter().map(|d| (d.path.clone(), d.mode)).collect();
        }
        acc
    }

    fn derived_access(&self, node: &Node, op: &str) -> Access {
        if let Some(imp) = interpreter::implementation(op) {
            return imp.access(&node.config);
        }
        if self.is_complex(op) {
            let mut acc = Access::default();
            if let Some(parts) = self.component_nodes(node) {
                for p in parts {
                    acc.merge(&self.access(&p));
                }
            }
            return acc;
        }
        let mut acc = Access::default();
        for a in self.ancestors(op).unwrap_or_default() {
            acc.reads.extend(self.reads.get(&a).into_iter().flatten().cloned());
            for (p, m) in self.writes.get(&a).into_iter().flatten() {
                acc.writes.insert(p.clone(), *m);
            }
        }
        acc
    }

    /// Output schema of an operator instance given its input schemas.
    pub fn output_schema(&self, node: &Node, op: &str, ins: &[SchemaDescriptor]) -> SchemaDescriptor {
        if self.is_complex(op) {
            if let Some(s) = self.complex_output_schema(node, ins) {
                return s;
            }
        }
        let acc = self.access(node);
        if let Some(imp) = interpreter::implementation(op) {
            return imp.schema_out(&node.config, ins, &acc);
        }
        let mut out = SchemaDescriptor::default();
        for s in ins {
            out.attributes.extend(s.attributes.iter().cloned());
        }
        if !self.has_property_resolved(self.resolve(op).unwrap_or(op), "S_in = S_out") {
            out.attributes.extend(acc.writes.keys().cloned());
        }
        out
    }

    fn complex_output_schema(&self, node: &Node, ins: &[SchemaDescriptor]) -> Option<SchemaDescriptor> {
        let mini = self.mini_flow(node, ins)?;
        let schemas = propagate_schemas(&mini, self).ok()?;
        schemas
            .into_iter()
            .find(|p| p.node == "out" && p.side == Side::In)
            .map(|p| p.schema)
    }

    /// Single-instance flow: one source per input port, the expanded
    /// components, and one sink.
    fn mini_flow(&self, node: &Node, ins: &[SchemaDescriptor]) -> Option<Dataflow> {
        let arity = self.arity(node.op_name()?)?;
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for port in 0..arity {
            let id = format!("in{port}");
            let schema: Vec<String> = ins
                .get(port)
                .map(|s| s.attributes.iter().map(|a| a.to_string()).collect())
                .unwrap_or_default();
            let mut src = Node::source(&id, &[]);
            src.config.insert("schema".into(), Json::from(schema));
            nodes.push(src);
            edges.push(Edge::new(&id, &node.id, port));
        }
        nodes.push(node.clone());
        nodes.push(Node::sink("out"));
        edges.push(Edge::new(&node.id, "out", 0));
        expand_complex(self, &Dataflow::new(nodes, edges)).ok()
    }

    /// Paths an instance needs on input `port`.
    pub fn port_requirements(&self, node: &Node, port: usize, _n_inputs: usize) -> SchemaDescriptor {
        let NodeKind::Op { op, reads, .. } = &node.kind else {
            return SchemaDescriptor::default();
        };
        if let Some(r) = reads {
            if self.arity(op) == Some(1) {
                return SchemaDescriptor::new(r.iter().cloned());
            }
        }
        if self.is_complex(op) {
            let Some(t) = self.part_template(op) else {
                return SchemaDescriptor::default();
            };
            let comps = self.component_nodes(node).unwrap_or_default();
            let mut out = SchemaDescriptor::default();
            for (from, _, to, tp) in &t.edges {
                if entry_port(from) == Some(port) {
                    if let Some(c) = comps.iter().find(|c| c.id == format!("{}/{}", node.id, to)) {
                        out.attributes
                            .extend(self.port_requirements(c, *tp, 1).attributes);
                    }
                }
            }
            return out;
        }
        let acc = self.access(node);
        if let Some(imp) = interpreter::implementation(op) {
            return imp.port_requirements(&node.config, port, &acc);
        }
        if self.arity(op) == Some(1) {
            SchemaDescriptor::new(acc.reads)
        } else {
            SchemaDescriptor::default()
        }
    }

    /// Component instances of a complex instance, with bound configuration.
    fn component_nodes(&self, node: &Node) -> Option<Vec<Node>> {
        let t = self.part_template(node.op_name()?)?;
        let mut out = Vec::new();
        for (local, concept) in &t.nodes {
            let mut config = Map::new();
            for (key, target) in &t.binds {
                if target != local {
                    continue;
                }
                if key == "*" {
                    config.extend(node.config.clone());
                } else if let Some(v) = node.config.get(key) {
                    config.insert(key.clone(), v.clone());
                }
            }
            for (target, key, val) in &t.sets {
                if target == local {
                    let v = serde_json::from_str::<Json>(val).unwrap_or_else(|_| Json::from(val.clone()));
                    config.insert(key.clone(), v);
                }
            }
            out.push(Node {
                id: format!("{}/{}", node.id, local),
                kind: NodeKind::Op {
                    op: concept.clone(),
                    reads: None,
                    writes: None,
                },
                config,
            });
        }
        Some(out)
    }

    /// Merges one package into the taxonomy. On error the taxonomy is unchanged.
    pub fn load_package(&mut self, src: &str) -> Result<PackageDelta> {
        let stmts = parse::parse(src)?;
        let mut next = self.clone();
        let delta = next.apply(stmts)?;
        *self = next;
        Ok(delta)
    }

    fn apply(&mut self, stmts: Vec<Located<Stmt>>) -> Result<PackageDelta> {
        let mut delta = PackageDelta::default();
        let mut pkg = String::from("user");
        let mut refs: Vec<(String, usize, usize)> = Vec::new();
        let before = self.relation_count();
        let err = |l: usize, c: usize, m: String| Error::Parse { line: l, col: c, msg: m };
        let short = |s: &str| s.split_once(':').map(|(_, b)| b.to_string()).unwrap_or_else(|| s.to_string());
        for Located { item, line, col } in stmts {
            match item {
                Stmt::Package(name) => {
                    pkg = name;
                    if !self.packages.contains(&pkg) {
                        self.packages.push(pkg.clone());
                    }
                    delta.package = pkg.clone();
                }
                Stmt::Fact { pred, args } => {
                    let args: Vec<String> = args.iter().map(|a| a.to_string()).collect();
                    let want = |n: usize| -> Result<()> {
                        if args.len() == n {
                            Ok(())
                        } else {
                            Err(err(line, col, format!("`{pred}` takes {n} arguments, got {}", args.len())))
                        }
                    };
                    match pred.as_str() {
                        "operator" | "property" => {
                            want(2)?;
                            let name = short(&args[0]);
                            let kind = ConceptKind::parse(&args[1])
                                .filter(|k| k.is_property() == (pred == "property"))
                                .ok_or_else(|| err(line, col, format!("bad {pred} kind `{}`", args[1])))?;
                            match self.concepts.get(&name) {
                                Some(old) if old.kind != kind => {
                                    return Err(Error::Redefinition {
                                        name,
                                        old: old.kind.to_string(),
                                        new: kind.to_string(),
                                    })
                                }
                                Some(_) => {}
                                None => {
                                    self.concepts.insert(
                                        name.clone(),
                                        Concept {
                                            name,
                                            package: pkg.clone(),
                                            kind,
                                        },
                                    );
                                    delta.new_concepts += 1;
                                }
                            }
                        }
                        "isA" => {
                            want(2)?;
                            let (c, p) = (short(&args[0]), short(&args[1]));
                            refs.push((c.clone(), line, col));
                            refs.push((p.clone(), line, col));
                            self.parents.entry(c).or_default().insert(p);
                        }
                        "hasProperty" => {
                            want(2)?;
                            let (o, p) = (short(&args[0]), short(&args[1]));
                            refs.push((o.clone(), line, col));
                            refs.push((p.clone(), line, col));
                            self.props.entry(o).or_default().insert(p);
                        }
                        "hasPrerequisite" => {
                            want(2)?;
                            let (x, y) = (short(&args[0]), short(&args[1]));
                            refs.push((x.clone(), line, col));
                            refs.push((y.clone(), line, col));
                            self.prereqs.insert((x, y));
                        }
                        "arity" => {
                            want(2)?;
                            let o = short(&args[0]);
                            let n: usize = args[1]
                                .parse()
                                .map_err(|_| err(line, col, format!("bad arity `{}`", args[1])))?;
                            refs.push((o.clone(), line, col));
                            self.arity.insert(o, n);
                        }
                        "reads" => {
                            want(2)?;
                            let o = short(&args[0]);
                            let p = AttributePath::parse(&args[1]).map_err(|e| err(line, col, e.to_string()))?;
                            refs.push((o.clone(), line, col));
                            self.reads.entry(o).or_default().insert(p);
                        }
                        "writes" => {
                            want(3)?;
                            let o = short(&args[0]);
                            let p = AttributePath::parse(&args[1]).map_err(|e| err(line, col, e.to_string()))?;
                            let m = match args[2].as_str() {
                                "set" => WriteMode::Set,
                                "append" => WriteMode::Append,
                                other => return Err(err(line, col, format!("bad write mode `{other}`"))),
                            };
                            refs.push((o.clone(), line, col));
                            self.writes.entry(o).or_default().insert(p, m);
                        }
                        "cost" => {
                            want(3)?;
                            let o = short(&args[0]);
                            let v: f64 = args[2]
                                .parse()
                                .map_err(|_| err(line, col, format!("bad cost value `{}`", args[2])))?;
                            refs.push((o.clone(), line, col));
                            self.costs.entry(o).or_default().insert(args[1].clone(), v);
                        }
                        other => return Err(err(line, col, format!("unknown statement `{other}`"))),
                    }
                }
                Stmt::Part(block) => {
                    let name = short(&block.complex);
                    refs.push((name.clone(), line, col));
                    for (_, c) in &block.nodes {
                        refs.push((short(c), line, col));
                    }
                    let mut tpl = PartTemplate::from(block);
                    for n in &mut tpl.nodes {
                        n.1 = short(&n.1);
                    }
                    self.parts.insert(name, tpl);
                }
                Stmt::Rule(rule) => {
                    if !self.rules.iter().any(|r| r.text == rule.text) {
                        rewrite::check_rule(&rule, &|c| self.concepts.contains_key(&short(c)))
                            .map_err(|m| Error::BadRule(format!("{} ({m}) at {line}:{col}", rule.text)))?;
                        self.rules.push(rule);
                        delta.new_rules += 1;
                    }
                }
            }
        }
        for (name, line, col) in refs {
            if !self.concepts.contains_key(&name) {
                return Err(Error::Parse {
                    line,
                    col,
                    msg: Error::Dangling(name).to_string(),
                });
            }
        }
        self.check_structure()?;
        self.recompute()?;
        self.detect_auto_properties();
        delta.new_relations = self.relation_count() - before;
        Ok(delta)
    }

    fn relation_count(&self) -> usize {
        let sum = |m: &BTreeMap<String, BTreeSet<String>>| m.values().map(BTreeSet::len).sum::<usize>();
        sum(&self.parents) + sum(&self.props) + self.prereqs.len() + self.parts.len()
    }

    fn check_structure(&self) -> Result<()> {
        for c in self.concepts.values() {
            if c.kind == ConceptKind::Root {
                continue;
            }
            let ps = self.parents.get(&c.name).cloned().unwrap_or_default();
            if ps.is_empty() {
                return Err(Error::Dangling(format!("{} has no isA parent", c.id())));
            }
            for p in ps {
                let pc = &self.concepts[&p];
                if c.kind.is_property() != (pc.kind.is_property() || pc.name == PROPERTY_ROOT) {
                    return Err(Error::BadRule(format!(
                        "isA({}, {}) crosses the operator and property taxonomies",
                        c.name, p
                    )));
                }
            }
        }
        for (op, ps) in &self.props {
            if !self.concepts[op].is_operator() {
                return Err(Error::BadRule(format!("hasProperty subject `{op}` is not an operator")));
            }
            for p in ps {
                let k = self.concepts[p].kind;
                if !k.is_property() {
                    return Err(Error::BadRule(format!("`{p}` is not a property")));
                }
            }
        }
        for (name, tpl) in &self.parts {
            if self.concepts[name].kind != ConceptKind::Complex {
                return Err(Error::BadRule(format!("hasPart on non-complex operator `{name}`")));
            }
            let locals: BTreeSet<&str> = tpl.nodes.iter().map(|(l, _)| l.as_str()).collect();
            for (f, _, t, _) in &tpl.edges {
                let f_ok = locals.contains(f.as_str()) || entry_port(f).is_some();
                let t_ok = locals.contains(t.as_str()) || t == "out";
                if !f_ok || !t_ok {
                    return Err(Error::BadRule(format!("hasPart({name}) edge {f} -> {t} names an unknown node")));
                }
            }
            if !tpl.edges.iter().any(|(_, _, t, _)| t == "out") {
                return Err(Error::BadRule(format!("hasPart({name}) has no edge to `out`")));
            }
        }
        Ok(())
    }

    fn recompute(&mut self) -> Result<()> {
        // isA closure with cycle detection
        let mut anc = BTreeMap::new();
        for c in self.concepts.keys() {
            let mut seen = BTreeSet::from([c.clone()]);
            let mut stack: Vec<String> = self.parents.get(c).into_iter().flatten().cloned().collect();
            while let Some(p) = stack.pop() {
                if p == *c {
                    return Err(Error::IsACycle(c.clone()));
                }
                if seen.insert(p.clone()) {
                    stack.extend(self.parents.get(&p).into_iter().flatten().cloned());
                }
            }
            anc.insert(c.clone(), seen);
        }
        self.anc = anc;

        // prerequisite closure: declared pairs hold for all descendants of
        // either side, then transitively
        let ops: Vec<String> = self
            .concepts
            .values()
            .filter(|c| c.is_operator())
            .map(|c| c.name.clone())
            .collect();
        let idx: BTreeMap<&str, usize> = ops.iter().enumerate().map(|(i, o)| (o.as_str(), i)).collect();
        let n = ops.len();
        let mut m = vec![vec![false; n]; n];
        for (a, b) in &self.prereqs {
            let da = self.descendants(a);
            let db = self.descendants(b);
            for x in &da {
                for y in &db {
                    if let (Some(&i), Some(&j)) = (idx.get(x.as_str()), idx.get(y.as_str())) {
                        m[i][j] = true;
                    }
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                if m[i][k] {
                    for j in 0..n {
                        if m[k][j] {
                            m[i][j] = true;
                        }
                    }
                }
            }
        }
        let mut pre = BTreeSet::new();
        for i in 0..n {
            if m[i][i] {
                return Err(Error::PrerequisiteCycle(ops[i].clone()));
            }
            for j in 0..n {
                if m[i][j] {
                    pre.insert((ops[i].clone(), ops[j].clone()));
                }
            }
        }
        self.pre = pre;
        Ok(())
    }

    /// Attaches properties derivable from registered implementations: input
    /// count, parallelization function, schema relation and field-update
    /// discipline.
    fn detect_auto_properties(&mut self) {
        let mut found: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for c in self.concepts.values() {
            if !matches!(c.kind, ConceptKind::Concrete | ConceptKind::Complex) {
                continue;
            }
            let mut ps = BTreeSet::new();
            match self.arity(&c.name) {
                Some(1) => {
                    ps.insert("single-in".to_string());
                }
                Some(n) if n > 1 => {
                    ps.insert("multi-in".to_string());
                }
                _ => {}
            }
            if let Some(imp) = interpreter::implementation(&c.name) {
                let meta = imp.meta();
                ps.insert(meta.parallelization.property().to_string());
                match meta.schema {
                    SchemaBehavior::Preserving => {
                        ps.insert("S_in = S_out".into());
                    }
                    SchemaBehavior::Reducing => {
                        ps.insert("S_in contains S_out".into());
                    }
                    SchemaBehavior::Other => {}
                }
                ps.insert(
                    match meta.updates {
                        FieldUpdates::None => "no field updates",
                        FieldUpdates::AddOnly => "add-only",
                        FieldUpdates::Arbitrary => "field-updates",
                    }
                    .to_string(),
                );
            }
            ps.retain(|p| self.concepts.contains_key(p));
            if !ps.is_empty() {
                found.insert(c.name.clone(), ps);
            }
        }
        self.auto_props = found;
    }

    /// Human-readable summary of one concept for `packages show`.
    pub fn describe(&self, name: &str) -> Result<String> {
        let n = self.must(name)?.to_string();
        let c = &self.concepts[&n];
        let mut s = format!("{} ({})\n", c.id(), c.kind);
        let join = |v: &BTreeSet<String>| v.iter().cloned().collect::<Vec<_>>().join(", ");
        s += &format!("  isA: {}\n", join(&self.parents(&n)));
        let mut anc = self.anc[&n].clone();
        anc.remove(&n);
        s += &format!("  ancestors: {}\n", join(&anc));
        if c.is_operator() {
            let (own, auto) = self.own_properties(&n);
            s += &format!("  hasProperty (declared): {}\n", join(&own));
            s += &format!("  hasProperty (auto): {}\n", join(&auto));
            let all: BTreeSet<String> = self
                .concepts
                .values()
                .filter(|p| p.kind.is_property() && self.has_property_resolved(&n, &p.name))
                .map(|p| p.name.clone())
                .collect();
            s += &format!("  hasProperty (inherited closure): {}\n", join(&all));
            let before: BTreeSet<String> = self.pre.iter().filter(|(_, y)| *y == n).map(|(x, _)| x.clone()).collect();
            s += &format!("  prerequisites: {}\n", join(&before));
            if let Some(a) = self.arity(&n) {
                s += &format!("  arity: {a}\n");
            }
            if let Some(t) = self.parts.get(&n) {
                let parts: Vec<String> = t.nodes.iter().map(|(l, c)| format!("{l}:{c}")).collect();
                s += &format!("  hasPart: {}\n", parts.join(" -> "));
            }
        }
        Ok(s)
    }
}

/// Replaces every complex instance by its component template, repeatedly,
/// until only elementary operators remain.
pub fn expand_complex(t: &Taxonomy, d: &Dataflow) -> Result<Dataflow> {
    let mut cur = d.clone();
    for _ in 0..32 {
        let Some(pos) = cur
            .nodes
            .iter()
            .position(|n| n.op_name().is_some_and(|o| t.is_complex(o)))
        else {
            return Ok(cur);
        };
        let node = cur.nodes[pos].clone();
        let op = node.op_name().unwrap().to_string();
        let tpl = t.part_template(&op).ok_or_else(|| Error::NoParts(op.clone()))?;
        let comps = t.component_nodes(&node).ok_or_else(|| Error::NoParts(op.clone()))?;
        let local = |l: &str| format!("{}/{}", node.id, l);
        let mut edges: Vec<Edge> = cur
            .edges
            .iter()
            .filter(|e| e.from != node.id && e.to != node.id)
            .cloned()
            .collect();
        for (f, fp, to, tp) in &tpl.edges {
            match (entry_port(f), to.as_str()) {
                (Some(port), "out") => {
                    for i in cur.edges.iter().filter(|e| e.to == node.id && e.to_port == port) {
                        for o in cur.edges.iter().filter(|e| e.from == node.id) {
                            edges.push(Edge {
                                from: i.from.clone(),
                                from_port: i.from_port,
                                to: o.to.clone(),
                                to_port: o.to_port,
                            });
                        }
                    }
                }
                (Some(port), _) => {
                    for i in cur.edges.iter().filter(|e| e.to == node.id && e.to_port == port) {
                        edges.push(Edge {
                            from: i.from.clone(),
                            from_port: i.from_port,
                            to: local(to),
                            to_port: *tp,
                        });
                    }
                }
                (None, "out") => {
                    for o in cur.edges.iter().filter(|e| e.from == node.id) {
                        edges.push(Edge {
                            from: local(f),
                            from_port: *fp,
                            to: o.to.clone(),
                            to_port: o.to_port,
                        });
                    }
                }
                (None, _) => edges.push(Edge {
                    from: local(f),
                    from_port: *fp,
                    to: local(to),
                    to_port: *tp,
                }),
            }
        }
        cur.nodes.splice(pos..=pos, comps);
        cur.edges = edges;
    }
    Err(Error::BadRule("hasPart nesting deeper than 32 levels".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roots_only() {
        let t = Taxonomy::new();
        assert_eq!(t.ancestors("operator").unwrap(), BTreeSet::from(["operator".to_string()]));
        assert!(t.ancestors("nope").is_err());
    }

    #[test]
    fn rejects_dangling_and_cycles() {
        let mut t = Taxonomy::new();
        let e = t.load_package("package p.\noperator(a, concrete).\nisA(a, nonexistent).").unwrap_err();
        assert!(e.to_string().contains("nonexistent"), "{e}");
        let e = t
            .load_package("operator(a, abstract). operator(b, abstract). isA(a, b). isA(b, a).")
            .unwrap_err();
        assert!(matches!(e, Error::IsACycle(_)), "{e}");
        assert!(t.concept("a").is_none(), "failed load leaves taxonomy untouched");
    }

    #[test]
    fn redefinition_with_other_kind_rejected() {
        let mut t = Taxonomy::new();
        t.load_package("operator(a, concrete). isA(a, operator).").unwrap();
        let e = t.load_package("operator(a, abstract). isA(a, operator).").unwrap_err();
        assert!(matches!(e, Error::Redefinition { .. }));
    }

    #[test]
    fn prerequisite_inherits_and_chains() {
        let mut t = Taxonomy::new();
        t.load_package(
            "operator(x, abstract). isA(x, operator). operator(x1, concrete). isA(x1, x).\n\
             operator(y, concrete). isA(y, operator). operator(z, concrete). isA(z, operator).\n\
             hasPrerequisite(x, y). hasPrerequisite(y, z).",
        )
        .unwrap();
        assert!(t.has_prerequisite("x1", "y").unwrap());
        assert!(t.has_prerequisite("x1", "z").unwrap());
        assert!(!t.has_prerequisite("z", "x1").unwrap());
        let e = t.load_package("hasPrerequisite(z, x1).").unwrap_err();
        assert!(matches!(e, Error::PrerequisiteCycle(_)));
    }
}
