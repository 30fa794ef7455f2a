//! Deterministic in-memory execution of dataflows, used as the equivalence
//! oracle and for statistics sampling.

pub mod conformance;
pub mod corpus;
mod ops;
mod text;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, OnceLock};

use serde_json::{Map, Value as Json};

use crate::dataflow::{topological_order, Access, Dataflow, NodeId, NodeKind};
use crate::datamodel::{read_path, AttributePath, Dataset, Record, SchemaDescriptor, Value, WriteMode};
use crate::error::{Error, Result};
use crate::presto::{expand_complex, Taxonomy};

pub use conformance::{conformance_cases, run_conformance, ConformanceCase};
pub use corpus::{generate_corpus, CorpusConfig, CorpusKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelization {
    Map,
    Reduce,
    Cogroup,
    Match,
    Cross,
}

impl Parallelization {
    /// Name of the matching property concept.
    pub fn property(self) -> &'static str {
        match self {
            Parallelization::Map => "map-pact",
            Parallelization::Reduce => "reduce-pact",
            Parallelization::Cogroup => "cogroup-pact",
            Parallelization::Match => "match-pact",
            Parallelization::Cross => "cross-pact",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaBehavior {
    /// Output attributes equal input attributes.
    Preserving,
    /// Output attributes are a subset of input attributes.
    Reducing,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldUpdates {
    None,
    AddOnly,
    Arbitrary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IoRatio {
    Equal,
    AtMost,
    AtLeast,
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImplMeta {
    pub parallelization: Parallelization,
    pub schema: SchemaBehavior,
    pub updates: FieldUpdates,
    pub io: IoRatio,
}

pub type Config = Map<String, Json>;

/// An executable operator. `eval` must be a pure function of its inputs.
pub trait OperatorImpl: Send + Sync {
    fn concept(&self) -> &'static str;

    fn arity(&self) -> usize {
        1
    }

    fn meta(&self) -> ImplMeta;

    /// Attribute access for a given configuration.
    fn access(&self, cfg: &Config) -> Access;

    /// Top-level or nested paths removed from the schema.
    fn removes(&self, _cfg: &Config) -> Vec<AttributePath> {
        Vec::new()
    }

    fn schema_out(&self, cfg: &Config, ins: &[SchemaDescriptor], acc: &Access) -> SchemaDescriptor {
        let mut out = SchemaDescriptor::default();
        for s in ins {
            out.attributes.extend(s.attributes.iter().cloned());
        }
        if self.meta().schema != SchemaBehavior::Preserving {
            out.attributes.extend(acc.writes.keys().cloned());
        }
        let removed = self.removes(cfg);
        out.attributes.retain(|a| !removed.iter().any(|r| r.is_prefix_of(a)));
        out
    }

    fn port_requirements(&self, _cfg: &Config, port: usize, acc: &Access) -> SchemaDescriptor {
        if port == 0 && self.arity() == 1 {
            SchemaDescriptor::new(acc.reads.iter().cloned())
        } else {
            SchemaDescriptor::default()
        }
    }

    fn eval(&self, cfg: &Config, inputs: &[&Dataset]) -> std::result::Result<Dataset, String>;

    /// Abstract cost units per consumed record.
    fn unit_cost(&self, _cfg: &Config) -> f64 {
        1.0
    }

    /// Units charged once per invocation.
    fn startup(&self, _cfg: &Config) -> f64 {
        0.0
    }
}

fn registry() -> &'static BTreeMap<&'static str, Box<dyn OperatorImpl>> {
    static REG: OnceLock<BTreeMap<&'static str, Box<dyn OperatorImpl>>> = OnceLock::new();
    REG.get_or_init(|| ops::all().into_iter().map(|o| (o.concept(), o)).collect())
}

/// Registered implementation of a concrete operator concept.
pub fn implementation(op: &str) -> Option<&'static dyn OperatorImpl> {
    let short = op.split_once(':').map(|(_, s)| s).unwrap_or(op);
    registry().get(short).map(|b| b.as_ref())
}

pub fn implemented_concepts() -> Vec<&'static str> {
    registry().keys().copied().collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OpTrace {
    /// Records consumed per input port.
    pub consumed: Vec<usize>,
    pub produced: usize,
    pub invocations: usize,
    pub units: f64,
    /// Net entries added to append-mode paths.
    pub appended: usize,
}

impl OpTrace {
    pub fn consumed_total(&self) -> usize {
        self.consumed.iter().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecutionTrace {
    pub ops: BTreeMap<NodeId, OpTrace>,
}

impl ExecutionTrace {
    pub fn total_units(&self) -> f64 {
        self.ops.values().map(|o| o.units).sum()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Check each operator's output against its declared metadata.
    pub strict: bool,
}

pub type SinkOutputs = BTreeMap<NodeId, Dataset>;

/// Executes `d` over datasets keyed by source dataset name.
pub fn run(
    d: &Dataflow,
    t: &Taxonomy,
    sources: &BTreeMap<String, Dataset>,
    opts: RunOptions,
) -> Result<(SinkOutputs, ExecutionTrace)> {
    let mut trace = ExecutionTrace::default();
    let outs = run_inner(d, t, sources, opts, &mut trace, None)?;
    Ok((outs, trace))
}

/// Structural keys of intermediate results: two nodes get the same key when
/// they run the same operator with the same configuration on inputs with
/// the same keys.
#[derive(Debug, Default)]
struct KeyInterner {
    ids: HashMap<(NodeId, String, Vec<(usize, u32)>), u32>,
}

impl KeyInterner {
    fn keys(&mut self, d: &Dataflow) -> Result<BTreeMap<NodeId, u32>> {
        let mut out = BTreeMap::new();
        for id in topological_order(d)? {
            let n = d.node(&id).unwrap();
            let mut ins: Vec<(usize, u32)> = d.inputs(&id).iter().map(|e| (e.to_port, out[&e.from])).collect();
            ins.sort_unstable();
            let what = format!("{}{}", n.op_name().unwrap_or(""), Json::Object(n.config.clone()));
            let next = self.ids.len() as u32;
            let k = *self.ids.entry((id.clone(), what, ins)).or_insert(next);
            out.insert(id, k);
        }
        Ok(out)
    }
}

type Cache<'a> = (&'a BTreeMap<NodeId, u32>, &'a mut HashMap<u32, Arc<Dataset>>);

/// Runs many plans over the same sources. Plans are visited so that shared
/// upstream sub-plans are adjacent, and results a plan shares with the next
/// one are reused. Outputs come back in input order.
pub fn run_batch(
    plans: &[&Dataflow],
    t: &Taxonomy,
    sources: &BTreeMap<String, Dataset>,
    opts: RunOptions,
) -> Vec<Result<SinkOutputs>> {
    let mut interner = KeyInterner::default();
    let keyed: Vec<Result<BTreeMap<NodeId, u32>>> = plans.iter().map(|d| interner.keys(d)).collect();
    let seq = |i: usize| -> Vec<u32> {
        match (&keyed[i], topological_order(plans[i])) {
            (Ok(k), Ok(order)) => order.iter().map(|id| k[id]).collect(),
            _ => Vec::new(),
        }
    };
    let seqs: Vec<Vec<u32>> = (0..plans.len()).map(seq).collect();
    let mut visit: Vec<usize> = (0..plans.len()).collect();
    visit.sort_by(|a, b| seqs[*a].cmp(&seqs[*b]));
    let mut out: Vec<Option<Result<SinkOutputs>>> = (0..plans.len()).map(|_| None).collect();
    let mut cache: HashMap<u32, Arc<Dataset>> = HashMap::new();
    for (pos, &i) in visit.iter().enumerate() {
        let r = match &keyed[i] {
            Ok(keys) => {
                let mut trace = ExecutionTrace::default();
                run_inner(plans[i], t, sources, opts, &mut trace, Some((keys, &mut cache)))
            }
            Err(_) => run(plans[i], t, sources, opts).map(|r| r.0),
        };
        out[i] = Some(r);
        let next: BTreeSet<u32> = visit.get(pos + 1).map(|&j| seqs[j].iter().copied().collect()).unwrap_or_default();
        cache.retain(|k, _| next.contains(k));
    }
    out.into_iter().map(|r| r.expect("every plan visited")).collect()
}

fn run_inner(
    d: &Dataflow,
    t: &Taxonomy,
    sources: &BTreeMap<String, Dataset>,
    opts: RunOptions,
    trace: &mut ExecutionTrace,
    mut cache: Option<Cache<'_>>,
) -> Result<SinkOutputs> {
    let order = topological_order(d)?;
    let mut results: BTreeMap<NodeId, Arc<Dataset>> = BTreeMap::new();
    let mut sinks = SinkOutputs::new();
    for id in order {
        let node = d.node(&id).unwrap();
        if let Some((keys, store)) = &cache {
            if let Some(ds) = store.get(&keys[&id]) {
                if !node.is_sink() {
                    results.insert(id.clone(), ds.clone());
                    continue;
                }
            }
        }
        let ins: Vec<&Dataset> = d
            .inputs(&id)
            .iter()
            .map(|e| results.get(&e.from).expect("producer evaluated first").as_ref())
            .collect();
        match &node.kind {
            NodeKind::Source => {
                let name = node.dataset_name();
                let ds = sources.get(name).ok_or_else(|| Error::Exec {
                    node: id.clone(),
                    msg: format!("no dataset bound to source `{name}`"),
                })?;
                results.insert(id.clone(), Arc::new(ds.clone()));
            }
            NodeKind::Sink => {
                let ds = ins.first().map(|d| (*d).clone()).unwrap_or_default();
                sinks.insert(id.clone(), ds);
            }
            NodeKind::Op { op, .. } => {
                let consumed: Vec<usize> = ins.iter().map(|d| d.len()).collect();
                let (out, units, appended) = if t.is_complex(op) {
                    eval_complex(node, t, &ins, opts)?
                } else {
                    let imp = implementation(op).ok_or_else(|| Error::Exec {
                        node: id.clone(),
                        msg: format!("no implementation registered for `{op}`"),
                    })?;
                    let out = imp.eval(&node.config, &ins).map_err(|msg| Error::Exec {
                        node: id.clone(),
                        msg,
                    })?;
                    if opts.strict {
                        check_metadata(imp, &node.config, &ins, &out).map_err(|msg| Error::Metadata {
                            node: format!("{id} ({op})"),
                            msg,
                        })?;
                    }
                    let units = imp.startup(&node.config)
                        + imp.unit_cost(&node.config) * consumed.iter().sum::<usize>() as f64;
                    let appended = appended_entries(&t.access(node), &ins, &out);
                    (out, units, appended)
                };
                trace.ops.insert(
                    id.clone(),
                    OpTrace {
                        consumed,
                        produced: out.len(),
                        invocations: 1,
                        units,
                        appended,
                    },
                );
                let out = Arc::new(out);
                if let Some((keys, store)) = &mut cache {
                    store.insert(keys[&id], out.clone());
                }
                results.insert(id.clone(), out);
            }
        }
    }
    Ok(sinks)
}

/// Evaluates a complex instance by running its expansion on the given inputs.
fn eval_complex(
    node: &crate::dataflow::Node,
    t: &Taxonomy,
    ins: &[&Dataset],
    opts: RunOptions,
) -> Result<(Dataset, f64, usize)> {
    use crate::dataflow::{Edge, Node};
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut bound = BTreeMap::new();
    for (p, ds) in ins.iter().enumerate() {
        let sid = format!("in{p}");
        nodes.push(Node::source(&sid, &[]));
        edges.push(Edge::new(&sid, &node.id, p));
        bound.insert(sid, (*ds).clone());
    }
    nodes.push(node.clone());
    nodes.push(Node::sink("out"));
    edges.push(Edge::new(&node.id, "out", 0));
    let mini = expand_complex(t, &Dataflow::new(nodes, edges))?;
    let mut sub = ExecutionTrace::default();
    let mut outs = run_inner(&mini, t, &bound, opts, &mut sub, None)?;
    let appended = sub.ops.values().map(|o| o.appended).sum();
    Ok((outs.remove("out").unwrap_or_default(), sub.total_units(), appended))
}

fn appended_entries(acc: &crate::dataflow::Access, ins: &[&Dataset], out: &Dataset) -> usize {
    let count = |ds: &Dataset, p: &AttributePath| -> usize {
        ds.records
            .iter()
            .flat_map(|r| read_path(r, p))
            .map(|v| v.as_array().map_or(0, Vec::len))
            .sum()
    };
    acc.writes
        .iter()
        .filter(|(_, m)| **m == WriteMode::Append)
        .map(|(p, _)| {
            let before: usize = ins.iter().map(|d| count(d, p)).sum();
            count(out, p).saturating_sub(before)
        })
        .sum()
}

fn top_keys(r: &Record) -> BTreeSet<&str> {
    r.fields().keys().map(String::as_str).collect()
}

/// Every value of `a` is kept in `b`; arrays may only grow (as multisets),
/// objects recursively.
fn only_added(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => x
            .iter()
            .all(|(k, v)| y.get(k).is_some_and(|w| only_added(v, w))),
        (Value::Array(x), Value::Array(y)) => {
            let mut pool: Vec<&Value> = y.iter().collect();
            x.iter().all(|v| match pool.iter().position(|w| *w == v) {
                Some(i) => {
                    pool.swap_remove(i);
                    true
                }
                None => false,
            })
        }
        _ => a == b,
    }
}

/// Leaves present in `out` agree with `inp`.
fn unchanged_where_present(out: &Value, inp: &Value) -> bool {
    match (out, inp) {
        (Value::Object(x), Value::Object(y)) => x
            .iter()
            .all(|(k, v)| y.get(k).is_some_and(|w| unchanged_where_present(v, w))),
        _ => out == inp,
    }
}

/// Strict-mode conformance of one invocation with the declared metadata.
pub fn check_metadata(
    imp: &dyn OperatorImpl,
    cfg: &Config,
    ins: &[&Dataset],
    out: &Dataset,
) -> std::result::Result<(), String> {
    let meta = imp.meta();
    let n_in: usize = ins.iter().map(|d| d.len()).sum();
    let n_out = out.len();
    let io_ok = match meta.io {
        IoRatio::Equal => n_in == n_out,
        IoRatio::AtMost => n_out <= n_in,
        IoRatio::AtLeast => n_out >= n_in,
        IoRatio::Any => true,
    };
    if !io_ok {
        return Err(format!("declared {:?} input/output ratio, consumed {n_in} produced {n_out}", meta.io));
    }
    match meta.schema {
        SchemaBehavior::Preserving => {
            let shapes: BTreeSet<BTreeSet<&str>> = ins.iter().flat_map(|d| d.records.iter()).map(top_keys).collect();
            if let Some(r) = out.records.iter().find(|r| !shapes.contains(&top_keys(r))) {
                return Err(format!("schema-preserving but produced attributes {:?}", top_keys(r)));
            }
        }
        SchemaBehavior::Reducing => {
            let in_keys: BTreeSet<&str> = ins.iter().flat_map(|d| d.records.iter()).flat_map(top_keys).collect();
            let out_keys: BTreeSet<&str> = out.records.iter().flat_map(top_keys).collect();
            if !out_keys.is_subset(&in_keys) {
                return Err(format!("schema-reducing but added attributes: {:?}", out_keys.difference(&in_keys)));
            }
        }
        SchemaBehavior::Other => {}
    }
    let one_to_one = meta.io == IoRatio::Equal && meta.parallelization == Parallelization::Map && ins.len() == 1;
    match meta.updates {
        FieldUpdates::None => {
            for r in &out.records {
                let ok = if one_to_one {
                    true
                } else {
                    ins.iter()
                        .flat_map(|d| d.records.iter())
                        .any(|i| unchanged_where_present(r.root(), i.root()))
                };
                if !ok {
                    return Err(format!("no-field-updates but produced modified record {}", r.to_json_string()));
                }
            }
            if one_to_one {
                for (i, r) in ins[0].records.iter().zip(&out.records) {
                    if !unchanged_where_present(r.root(), i.root()) {
                        return Err(format!("no-field-updates but modified {}", i.to_json_string()));
                    }
                }
            }
        }
        FieldUpdates::AddOnly if one_to_one => {
            for (i, r) in ins[0].records.iter().zip(&out.records) {
                if !only_added(i.root(), r.root()) {
                    return Err(format!("add-only but removed or changed values of {}", i.to_json_string()));
                }
            }
        }
        _ => {}
    }
    // append-mode paths may only grow
    if one_to_one {
        let acc = imp.access(cfg);
        for (p, m) in &acc.writes {
            if *m != WriteMode::Append {
                continue;
            }
            for (i, r) in ins[0].records.iter().zip(&out.records) {
                let before: Vec<&Value> = read_path(i, p);
                let after: Vec<&Value> = read_path(r, p);
                let ok = match (before.first(), after.first()) {
                    (None, _) => true,
                    (Some(b), Some(a)) => only_added(b, a),
                    (Some(_), None) => false,
                };
                if !ok {
                    return Err(format!("append path `{p}` lost entries"));
                }
            }
        }
    }
    Ok(())
}

/// Outcome of an equivalence check.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass { seeds: usize },
    Counterexample {
        seed: u64,
        sink: String,
        left_only: Vec<Record>,
        right_only: Vec<Record>,
    },
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass { .. })
    }
}

/// Multiset difference a \ b in canonical order.
pub fn bag_difference(a: &Dataset, b: &Dataset) -> Vec<Record> {
    let mut pool = b.canonical();
    let mut out = Vec::new();
    for r in a.canonical() {
        match pool.binary_search(&r) {
            Ok(i) => {
                pool.remove(i);
            }
            Err(_) => out.push(r),
        }
    }
    out
}

/// Source datasets for one seed: one generated corpus per source dataset name.
pub fn corpora_for(d: &Dataflow, cfgs: &BTreeMap<String, CorpusConfig>, seed: u64) -> BTreeMap<String, Dataset> {
    let mut out = BTreeMap::new();
    for (i, s) in d.sources().enumerate() {
        let name = s.dataset_name().to_string();
        let cfg = cfgs.get(&name).cloned().unwrap_or_default();
        let ds = generate_corpus(&cfg, seed.wrapping_mul(31).wrapping_add(i as u64));
        out.insert(name, ds);
    }
    out
}

/// Runs both flows on seeded corpora; first counterexample wins (lowest seed).
pub fn check_equivalence(
    d1: &Dataflow,
    d2: &Dataflow,
    t: &Taxonomy,
    cfgs: &BTreeMap<String, CorpusConfig>,
    seeds: &[u64],
) -> Result<Verdict> {
    let results: Vec<Result<Option<Verdict>>> = crate::par::map(seeds, |&seed| {
        let data = corpora_for(d1, cfgs, seed);
        let (a, _) = run(d1, t, &data, RunOptions::default())?;
        let (b, _) = run(d2, t, &data, RunOptions::default())?;
        let names: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
        for sink in names {
            let empty = Dataset::default();
            let x = a.get(sink).unwrap_or(&empty);
            let y = b.get(sink).unwrap_or(&empty);
            if x != y {
                return Ok(Some(Verdict::Counterexample {
                    seed,
                    sink: sink.clone(),
                    left_only: bag_difference(x, y),
                    right_only: bag_difference(y, x),
                }));
            }
        }
        Ok(None)
    });
    for r in results {
        if let Some(v) = r? {
            return Ok(v);
        }
    }
    Ok(Verdict::Pass { seeds: seeds.len() })
}
