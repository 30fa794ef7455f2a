//! Cardinality propagation, the weighted cost formula and sampled statistics.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{DiscreteCDF, Poisson};

use crate::dataflow::{topological_order, Dataflow, Node, NodeId, NodeKind};
use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::interpreter::{self, RunOptions};
use crate::presto::{expand_complex, Taxonomy};

/// Source size assumed when a model has no statistics at all.
pub const DEFAULT_SOURCE_SIZE: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorStats {
    /// Output records per input record.
    pub sel: f64,
    /// Per-input-port selectivity for multi-input operators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sel_in: Option<Vec<f64>>,
    pub c: f64,
    pub s: f64,
    pub d: f64,
    pub n: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proj: Option<f64>,
}

impl Default for OperatorStats {
    fn default() -> Self {
        OperatorStats {
            sel: 1.0,
            sel_in: None,
            c: 1.0,
            s: 0.0,
            d: 1.0,
            n: 1.0,
            proj: None,
        }
    }
}

impl OperatorStats {
    pub fn port_sel(&self, port: usize) -> f64 {
        self.sel_in
            .as_ref()
            .and_then(|v| v.get(port).copied())
            .unwrap_or(self.sel)
    }
}

/// A stats-file entry; absent fields fall back to taxonomy defaults, then to
/// `OperatorStats::default()`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sel_in: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proj: Option<f64>,
}

impl StatsEntry {
    fn from_map(m: &BTreeMap<String, f64>) -> StatsEntry {
        StatsEntry {
            sel: m.get("sel").copied(),
            sel_in: None,
            c: m.get("c").copied(),
            s: m.get("s").copied(),
            d: m.get("d").copied(),
            n: m.get("n").copied(),
            proj: m.get("proj").copied(),
        }
    }

    fn is_empty(&self) -> bool {
        *self == StatsEntry::default()
    }

    fn apply(&self, st: &mut OperatorStats) {
        if let Some(v) = self.sel {
            st.sel = v;
        }
        if let Some(v) = &self.sel_in {
            st.sel_in = Some(v.clone());
        }
        for (dst, src) in [(&mut st.c, self.c), (&mut st.s, self.s), (&mut st.d, self.d), (&mut st.n, self.n)] {
            if let Some(v) = src {
                *dst = v;
            }
        }
        if self.proj.is_some() {
            st.proj = self.proj;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// I/O
    pub u: f64,
    /// shipping
    pub v: f64,
    /// CPU
    pub w: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { u: 1.0, v: 1.0, w: 1.0 }
    }
}

impl CostWeights {
    pub fn check(&self) -> Result<()> {
        let all = [self.u, self.v, self.w];
        if all.iter().any(|x| !x.is_finite() || *x < 0.0) || all.iter().all(|x| *x == 0.0) {
            return Err(Error::MissingStats(format!(
                "weights must be non-negative and not all zero (u={}, v={}, w={})",
                self.u, self.v, self.w
            )));
        }
        Ok(())
    }
}

/// On-disk statistics: `{"operators":{..},"weights":{..},"sources":{..}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    #[serde(default)]
    pub operators: BTreeMap<NodeId, StatsEntry>,
    #[serde(default)]
    pub weights: CostWeights,
    #[serde(default)]
    pub sources: BTreeMap<NodeId, f64>,
}

impl StatsFile {
    pub fn from_json_str(s: &str) -> Result<StatsFile> {
        let f: StatsFile = serde_json::from_str(s)?;
        f.weights.check()?;
        Ok(f)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub cpu: f64,
    pub io: f64,
    pub ship: f64,
    pub total: f64,
}

/// `w·(c·r + s) + u·(d·r) + v·(n·out)`, where `out = r·sel` for a
/// single-input operator.
pub fn operator_cost(r: f64, out: f64, st: &OperatorStats, wts: &CostWeights) -> CostBreakdown {
    let cpu = wts.w * (st.c * r + st.s);
    let io = wts.u * (st.d * r);
    let ship = wts.v * (st.n * out);
    CostBreakdown {
        cpu,
        io,
        ship,
        total: cpu + io + ship,
    }
}

pub type CostHook = Arc<dyn Fn(f64, f64, &OperatorStats, &CostWeights) -> CostBreakdown + Send + Sync>;

/// Statistics lookup plus the cost formula.
#[derive(Clone)]
pub struct CostModel {
    pub file: StatsFile,
    defaults: BTreeMap<String, StatsEntry>,
    hooks: BTreeMap<String, CostHook>,
    /// Source size used when the file has none; `None` makes it an error.
    pub default_source: Option<f64>,
}

impl std::fmt::Debug for CostModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CostModel")
            .field("file", &self.file)
            .field("hooks", &self.hooks.keys().collect::<Vec<_>>())
            .finish()
    }
}

/// Per-operator estimate used in cost reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpCost {
    pub op: String,
    pub r: f64,
    pub out: f64,
    #[serde(flatten)]
    pub cost: CostBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CostReport {
    pub ops: BTreeMap<NodeId, OpCost>,
    pub total: f64,
    /// Operators costed with built-in defaults.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Estimated input count `r` and output count per node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cardinalities {
    pub r: BTreeMap<NodeId, f64>,
    pub out: BTreeMap<NodeId, f64>,
}

impl CostModel {
    pub fn new(t: &Taxonomy, file: StatsFile) -> CostModel {
        let defaults = t
            .concepts()
            .filter(|c| c.is_operator())
            .map(|c| (c.name.clone(), StatsEntry::from_map(&t.cost_defaults(&c.name))))
            .filter(|(_, e)| !e.is_empty())
            .collect();
        CostModel {
            file,
            defaults,
            hooks: BTreeMap::new(),
            default_source: None,
        }
    }

    /// Model with no file: taxonomy defaults and a fixed source size.
    pub fn defaults(t: &Taxonomy) -> CostModel {
        let mut m = CostModel::new(t, StatsFile::default());
        m.default_source = Some(DEFAULT_SOURCE_SIZE);
        m
    }

    /// Replaces the default formula for instances of `concept`.
    pub fn with_hook(mut self, concept: &str, hook: CostHook) -> CostModel {
        self.hooks.insert(concept.to_string(), hook);
        self
    }

    pub fn weights(&self) -> &CostWeights {
        &self.file.weights
    }

    /// Layered lookup: built-in defaults < taxonomy `cost` facts < file entry.
    /// The flag reports whether anything beyond built-in defaults applied.
    pub fn stats_for(&self, node: &Node) -> (OperatorStats, bool) {
        let mut st = OperatorStats::default();
        let mut known = false;
        if let Some(e) = node.op_name().and_then(|op| self.defaults.get(op.rsplit(':').next().unwrap_or(op))) {
            e.apply(&mut st);
            known = true;
        }
        if let Some(e) = self.file.operators.get(&node.id) {
            e.apply(&mut st);
            known = true;
        }
        (st, known)
    }

    fn has_explicit_sel(&self, node: &Node) -> bool {
        let op = node.op_name().unwrap_or_default();
        self.file.operators.get(&node.id).is_some_and(|e| e.sel.is_some() || e.sel_in.is_some())
            || self.defaults.get(op).is_some_and(|e| e.sel.is_some())
    }

    pub fn source_size(&self, id: &str) -> Result<f64> {
        match (self.file.sources.get(id), self.default_source) {
            (Some(n), _) => Ok(*n),
            (None, Some(n)) => Ok(n),
            (None, None) => Err(Error::MissingStats(format!("no size for source `{id}`"))),
        }
    }

    /// Effective selectivity of every operator in `d`, including the
    /// projectivity-derived value for annotation-count filters.
    fn effective_stats(&self, d: &Dataflow) -> BTreeMap<NodeId, OperatorStats> {
        let mut out = BTreeMap::new();
        for n in d.operators() {
            let (mut st, _) = self.stats_for(n);
            if !self.has_explicit_sel(n) {
                if let Some(sel) = self.annotation_filter_sel(d, n) {
                    st.sel = sel;
                }
            }
            out.insert(n.id.clone(), st);
        }
        out
    }

    /// `P(X > k)` for `X ~ Poisson(proj)`, where `proj` belongs to the
    /// nearest upstream operator appending to the counted path.
    fn annotation_filter_sel(&self, d: &Dataflow, n: &Node) -> Option<f64> {
        let pred = n.config.get("pred")?;
        let path = pred.get("count")?.as_str()?;
        let k = pred.get("value")?.as_f64()?;
        let op = pred.get("op")?.as_str()?;
        let mut cur = d.inputs(&n.id).first().map(|e| e.from.clone());
        while let Some(id) = cur {
            let up = d.node(&id)?;
            let writes_path = match &up.kind {
                NodeKind::Op { op, .. } => interpreter::implementation(op).is_some_and(|imp| {
                    imp.access(&up.config).writes.keys().any(|w| w.to_string() == path)
                }),
                _ => return None,
            };
            if writes_path {
                let proj = self.stats_for(up).0.proj?;
                return poisson_tail(proj, op, k);
            }
            cur = d.inputs(&id).first().map(|e| e.from.clone());
        }
        None
    }

    pub fn propagate(&self, d: &Dataflow) -> Result<Cardinalities> {
        let stats = self.effective_stats(d);
        propagate_cardinalities(d, &stats, &|id| self.source_size(id))
    }

    pub fn plan_cost(&self, d: &Dataflow) -> Result<CostReport> {
        let stats = self.effective_stats(d);
        let card = propagate_cardinalities(d, &stats, &|id| self.source_size(id))?;
        let mut rep = CostReport::default();
        for n in d.operators() {
            let op = n.op_name().unwrap().to_string();
            let st = &stats[&n.id];
            let (r, out) = (card.r[&n.id], card.out[&n.id]);
            let cost = self.cost_of(&op, r, out, st);
            if !self.stats_for(n).1 {
                rep.warnings
                    .push(format!("`{}` ({op}) has no statistics; using defaults", n.id));
            }
            rep.total += cost.total;
            rep.ops.insert(n.id.clone(), OpCost { op, r, out, cost });
        }
        Ok(rep)
    }

    pub fn cost_of(&self, op: &str, r: f64, out: f64, st: &OperatorStats) -> CostBreakdown {
        match self.hooks.get(op.rsplit(':').next().unwrap_or(op)) {
            Some(h) => h(r, out, st, &self.file.weights),
            None => operator_cost(r, out, st, &self.file.weights),
        }
    }

    /// Effective stats of every operator in `d` (for the enumerator's bounds).
    pub fn stats_map(&self, d: &Dataflow) -> BTreeMap<NodeId, OperatorStats> {
        self.effective_stats(d)
    }
}

fn poisson_tail(lambda: f64, op: &str, k: f64) -> Option<f64> {
    if lambda <= 0.0 {
        return Some(if op == ">=" && k <= 0.0 { 1.0 } else { 0.0 });
    }
    let p = Poisson::new(lambda).ok()?;
    let k = k.floor();
    match op {
        ">" if k < 0.0 => Some(1.0),
        ">" => Some(1.0 - p.cdf(k as u64)),
        ">=" if k <= 0.0 => Some(1.0),
        ">=" => Some(1.0 - p.cdf(k as u64 - 1)),
        _ => None,
    }
}

/// `r_i = Σ_(h,i) out_h`; `out_h = Σ_p r_(h,p)·sel_(h,p)`.
pub fn propagate_cardinalities(
    d: &Dataflow,
    stats: &BTreeMap<NodeId, OperatorStats>,
    source_size: &dyn Fn(&str) -> Result<f64>,
) -> Result<Cardinalities> {
    let mut card = Cardinalities::default();
    for id in topological_order(d)? {
        let n = d.node(&id).unwrap();
        let ins = d.inputs(&id);
        let per_port: Vec<(usize, f64)> = ins.iter().map(|e| (e.to_port, card.out[&e.from])).collect();
        let r: f64 = per_port.iter().map(|(_, x)| x).sum();
        let out = match &n.kind {
            NodeKind::Source => source_size(&id)?,
            NodeKind::Sink => r,
            NodeKind::Op { .. } => {
                let st = stats
                    .get(&id)
                    .ok_or_else(|| Error::MissingStats(format!("no statistics for `{id}`")))?;
                per_port.iter().map(|(p, x)| x * st.port_sel(*p)).sum()
            }
        };
        card.r.insert(id.clone(), r);
        card.out.insert(id, out);
    }
    Ok(card)
}

/// Uniform sample of `fraction` of each dataset, in original order.
pub fn sample_sources(
    data: &BTreeMap<String, Dataset>,
    fraction: f64,
    seed: u64,
) -> BTreeMap<String, Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    data.iter()
        .map(|(name, ds)| {
            let k = ((ds.len() as f64) * fraction).round() as usize;
            let mut idx: Vec<usize> = (0..ds.len()).collect();
            idx.shuffle(&mut rng);
            let mut keep = idx[..k.min(ds.len())].to_vec();
            keep.sort_unstable();
            (name.clone(), Dataset::new(keep.into_iter().map(|i| ds.records[i].clone()).collect()))
        })
        .collect()
}

/// Runs `d` (collapsed and expanded) on a seeded sample and records
/// selectivity, projectivity and unit costs per node. `c`/`s` are the
/// interpreter's deterministic unit charges and `d = n = 0`, so predicted
/// cost equals runtime units when cardinalities are exact.
pub fn sample_stats(
    d: &Dataflow,
    t: &Taxonomy,
    data: &BTreeMap<String, Dataset>,
    fraction: f64,
    seed: u64,
) -> Result<StatsFile> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::MissingStats(format!("fraction {fraction} not in (0, 1]")));
    }
    let sample = sample_sources(data, fraction, seed);
    if sample.values().any(Dataset::is_empty) {
        return Err(Error::EmptySample);
    }
    let mut file = StatsFile::default();
    for s in d.sources() {
        let full = data.get(s.dataset_name()).map_or(0, Dataset::len);
        file.sources.insert(s.id.clone(), full as f64);
    }
    let expanded = expand_complex(t, d)?;
    for flow in [d, &expanded] {
        let (_, trace) = interpreter::run(flow, t, &sample, RunOptions::default())?;
        for n in flow.operators() {
            let Some(tr) = trace.ops.get(&n.id) else { continue };
            let op = n.op_name().unwrap();
            let consumed = tr.consumed_total();
            let k = tr.consumed.len().max(1);
            let mut e = StatsEntry {
                d: Some(0.0),
                n: Some(0.0),
                ..StatsEntry::default()
            };
            if consumed > 0 {
                e.sel = Some(tr.produced as f64 / consumed as f64);
            }
            if k > 1 {
                e.sel_in = Some(
                    tr.consumed
                        .iter()
                        .map(|&c| if c == 0 { 0.0 } else { tr.produced as f64 / (k * c) as f64 })
                        .collect(),
                );
            }
            if t.is_a(op, "anntt") || tr.appended > 0 {
                if consumed > 0 {
                    e.proj = Some(tr.appended as f64 / consumed as f64);
                }
            }
            let (c, s) = unit_costs(t, n, tr.units, consumed)?;
            e.c = Some(c);
            e.s = Some(s);
            file.operators.insert(n.id.clone(), e);
        }
    }
    Ok(file)
}

/// Per-record and startup units; for a complex node these come from its
/// components (startup summed, per-record cost fitted to the trace).
fn unit_costs(t: &Taxonomy, n: &Node, units: f64, consumed: usize) -> Result<(f64, f64)> {
    let op = n.op_name().unwrap();
    if let Some(imp) = interpreter::implementation(op) {
        return Ok((imp.unit_cost(&n.config), imp.startup(&n.config)));
    }
    let mini = Dataflow::new(vec![Node::source("in0", &[]), n.clone(), Node::sink("out")], vec![
        crate::dataflow::Edge::new("in0", &n.id, 0),
        crate::dataflow::Edge::new(&n.id, "out", 0),
    ]);
    let ex = expand_complex(t, &mini)?;
    let mut s = 0.0;
    let mut c = 0.0;
    for m in ex.operators() {
        if let Some(imp) = m.op_name().and_then(interpreter::implementation) {
            s += imp.startup(&m.config);
            c += imp.unit_cost(&m.config);
        }
    }
    if consumed > 0 {
        c = ((units - s) / consumed as f64).max(0.0);
    }
    Ok((c, s))
}
