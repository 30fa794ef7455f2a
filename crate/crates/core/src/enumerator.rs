//! Backward plan enumeration over a precedence graph with accumulated-cost
//! pruning.
//!
//! Nodes are added sink-first: a node is a candidate once none of its
//! precedence successors remain. A newly added node feeds all of its original
//! consumers that still have an open input (the required wiring). Further
//! branches add other open inputs cumulatively, one consumer at a time at its
//! lowest open port: branch k wires the required consumers plus the first k
//! others. Finished plans must fill every input and pass validation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::dataflow::{validate, Dataflow, Edge, NodeId, NodeKind};
use crate::datamodel::{schema_contains, SchemaDescriptor};
use crate::error::{Error, Result};
use crate::precedence::{build_precedence, PrecedenceGraph};
use crate::presto::{expand_complex, Taxonomy};
use crate::rewrite::QueryFacts;

const MAX_NODES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    Collapsed,
    Expanded,
    #[default]
    Both,
}

impl FromStr for Pass {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Pass, String> {
        match s {
            "collapsed" => Ok(Pass::Collapsed),
            "expanded" => Ok(Pass::Expanded),
            "both" => Ok(Pass::Both),
            _ => Err(format!("unknown pass `{s}` (collapsed|expanded|both)")),
        }
    }
}

/// Which pass produced a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PassKind {
    Collapsed,
    Expanded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundPolicy {
    /// Prune against the original plan's cost only.
    Original,
    /// Also tighten to the best complete plan found so far.
    #[default]
    Tightening,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationConfig {
    pub prune: bool,
    /// Stop after this many distinct plans (at least 1).
    pub limit: usize,
    pub pass: Pass,
    pub bound: BoundPolicy,
    /// Shuffle candidate order; `None` explores in node-id order.
    pub seed: Option<u64>,
    /// Record per-stage branch counts (disables memoization).
    pub trace_stages: bool,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        EnumerationConfig {
            prune: true,
            limit: 1_000_000,
            pass: Pass::Both,
            bound: BoundPolicy::Tightening,
            seed: None,
            trace_stages: false,
        }
    }
}

impl EnumerationConfig {
    pub fn unpruned() -> EnumerationConfig {
        EnumerationConfig {
            prune: false,
            ..EnumerationConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanAlternative {
    pub plan: Dataflow,
    pub cost: f64,
    /// Enumeration choices, one per added node.
    pub provenance: Vec<String>,
    pub pass: PassKind,
}

#[derive(Debug, Clone, Default)]
pub struct Enumeration {
    /// Distinct plans in exploration order.
    pub plans: Vec<PlanAlternative>,
    /// Complete valid plans counted once per choice sequence (before dedup).
    pub raw_plans: usize,
    /// Distinct choice sequences of length k+1 (node plus wiring) that
    /// complete to a valid plan; filled only with `trace_stages`.
    pub stage_branches: Vec<usize>,
    pub pruned_branches: usize,
    pub truncated: bool,
}

impl Enumeration {
    pub fn keys(&self) -> BTreeSet<String> {
        self.plans.iter().map(|p| p.plan.canonical_key()).collect()
    }

    pub fn best(&self) -> Option<&PlanAlternative> {
        rank(self.plans.clone()).into_iter().next().and_then(|b| {
            self.plans.iter().find(|p| p.plan.canonical_key() == b.plan.canonical_key())
        })
    }
}

/// Ascending by cost; ties keep their input order.
pub fn rank(mut plans: Vec<PlanAlternative>) -> Vec<PlanAlternative> {
    plans.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    plans
}

type Wire = (u8, u8, u8);

struct Ctx<'a> {
    d: &'a Dataflow,
    t: &'a Taxonomy,
    model: &'a CostModel,
    pass: PassKind,
    ids: Vec<NodeId>,
    arity: Vec<usize>,
    is_sink: Vec<bool>,
    pg_succ: Vec<u64>,
    orig: HashSet<Wire>,
    ub: Vec<SchemaDescriptor>,
    req: Vec<Vec<SchemaDescriptor>>,
    min_sel: Vec<f64>,
    op_name: Vec<Option<String>>,
    stats: BTreeMap<NodeId, crate::cost::OperatorStats>,
    min_src: f64,
    original_cost: f64,
}

#[derive(Clone)]
struct State {
    remaining: u64,
    edges: Vec<Wire>,
    open: Vec<(u8, u8)>,
    lb: f64,
    steps: Vec<String>,
}

#[derive(Default)]
struct Acc {
    plans: Vec<PlanAlternative>,
    keys: HashSet<String>,
    prefixes: Vec<HashSet<Vec<String>>>,
    pruned: usize,
    truncated: bool,
    memo: HashMap<(u64, Vec<Wire>), usize>,
    bound: f64,
    tighten: bool,
}

impl<'a> Ctx<'a> {
    fn new(d: &'a Dataflow, t: &'a Taxonomy, pg: &PrecedenceGraph, model: &'a CostModel, pass: PassKind) -> Result<Ctx<'a>> {
        let violations = validate(d, t);
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        if d.nodes.len() > MAX_NODES {
            return Err(Error::Exec {
                node: "flow".into(),
                msg: format!("enumeration supports at most {MAX_NODES} nodes"),
            });
        }
        let ids: Vec<NodeId> = d.nodes.iter().map(|n| n.id.clone()).collect();
        let ix: HashMap<&str, u8> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i as u8)).collect();
        let mut pg_succ = vec![0u64; ids.len()];
        for (u, v) in &pg.edges {
            if let (Some(&a), Some(&b)) = (ix.get(u.as_str()), ix.get(v.as_str())) {
                pg_succ[a as usize] |= 1u64 << b;
            }
        }
        let orig = d
            .edges
            .iter()
            .map(|e| (ix[e.from.as_str()], ix[e.to.as_str()], e.to_port as u8))
            .collect();
        let arity: Vec<usize> = d
            .nodes
            .iter()
            .map(|n| crate::dataflow::input_arity(n, t).unwrap_or(0))
            .collect();
        // widest schema any producer could see; output schemas are monotone in
        // their inputs, so this bounds every node's possible output
        let mut universe = SchemaDescriptor::default();
        for n in &d.nodes {
            match &n.kind {
                NodeKind::Source => universe.attributes.extend(n.source_schema().attributes),
                NodeKind::Op { .. } => universe.attributes.extend(t.access(n).writes.into_keys()),
                NodeKind::Sink => {}
            }
        }
        let mut ub = Vec::new();
        let mut req = Vec::new();
        for (i, n) in d.nodes.iter().enumerate() {
            ub.push(match &n.kind {
                NodeKind::Source => n.source_schema(),
                NodeKind::Op { op, .. } => t.output_schema(n, op, &vec![universe.clone(); arity[i]]),
                NodeKind::Sink => SchemaDescriptor::default(),
            });
            req.push((0..arity[i]).map(|p| t.port_requirements(n, p, arity[i])).collect());
        }
        let stats = model.stats_map(d);
        let min_sel = d
            .nodes
            .iter()
            .map(|n| match stats.get(&n.id) {
                Some(st) => {
                    let mut m = st.sel.min(1.0);
                    if let Some(v) = &st.sel_in {
                        m = v.iter().fold(m, |a, b| a.min(*b));
                    }
                    m.max(0.0)
                }
                None => 1.0,
            })
            .collect();
        let min_src = d
            .sources()
            .map(|s| model.source_size(&s.id))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let original_cost = model.plan_cost(d)?.total;
        Ok(Ctx {
            d,
            t,
            model,
            pass,
            is_sink: d.nodes.iter().map(|n| n.is_sink()).collect(),
            op_name: d.nodes.iter().map(|n| n.op_name().map(str::to_string)).collect(),
            ids,
            arity,
            pg_succ,
            orig,
            ub,
            req,
            min_sel,
            stats,
            min_src: if min_src.is_finite() { min_src } else { 0.0 },
            original_cost,
        })
    }

    fn root(&self) -> State {
        State {
            remaining: if self.ids.len() == 64 { u64::MAX } else { (1u64 << self.ids.len()) - 1 },
            edges: Vec::new(),
            open: Vec::new(),
            lb: 0.0,
            steps: Vec::new(),
        }
    }

    /// Cost of `n` at the smallest input it could see: any operator still
    /// to be placed may end up upstream.
    fn lower_bound(&self, n: usize, rem: u64) -> f64 {
        let Some(op) = &self.op_name[n] else { return 0.0 };
        let mut r = self.min_src;
        for (i, s) in self.min_sel.iter().enumerate() {
            if rem & (1 << i) != 0 && self.op_name[i].is_some() {
                r *= s;
            }
        }
        let st = &self.stats[&self.ids[n]];
        self.model.cost_of(op, r, r * self.min_sel[n], st).total
    }

    fn candidates(&self, rem: u64, rng: &mut Option<ChaCha8Rng>) -> Vec<usize> {
        let mut c: Vec<usize> = (0..self.ids.len())
            .filter(|&i| rem & (1 << i) != 0 && self.pg_succ[i] & rem == 0)
            .collect();
        c.sort_by(|a, b| self.ids[*a].cmp(&self.ids[*b]));
        if let Some(r) = rng {
            c.shuffle(r);
        }
        c
    }

    fn wirings(&self, n: usize, open: &[(u8, u8)]) -> Vec<Vec<Wire>> {
        if self.is_sink[n] {
            return vec![Vec::new()];
        }
        let n8 = n as u8;
        let required: Vec<Wire> = open
            .iter()
            .filter(|(m, p)| self.orig.contains(&(n8, *m, *p)))
            .map(|(m, p)| (n8, *m, *p))
            .collect();
        let mut out = Vec::new();
        if !required.is_empty() {
            out.push(required.clone());
        }
        // optional successors accumulate: each branch keeps the edges of
        // the branches before it
        let mut cur = required.clone();
        let mut seen = BTreeSet::new();
        for (m, p) in open {
            if required.iter().any(|w| w.1 == *m) || !seen.insert(*m) {
                continue;
            }
            cur.push((n8, *m, *p));
            out.push(cur.clone());
        }
        out.retain(|w| {
            w.iter()
                .all(|(_, m, p)| schema_contains(&self.ub[n], &self.req[*m as usize][*p as usize]))
        });
        out
    }

    fn children(&self, st: &State, rng: &mut Option<ChaCha8Rng>) -> Vec<State> {
        let mut out = Vec::new();
        for n in self.candidates(st.remaining, rng) {
            let rem = st.remaining & !(1 << n);
            let lb = st.lb + self.lower_bound(n, rem);
            for w in self.wirings(n, &st.open) {
                let mut edges = st.edges.clone();
                edges.extend(w.iter().copied());
                edges.sort_unstable();
                let mut open: Vec<(u8, u8)> = st
                    .open
                    .iter()
                    .filter(|(m, p)| !w.iter().any(|x| x.1 == *m && x.2 == *p))
                    .copied()
                    .collect();
                open.extend((0..self.arity[n]).map(|p| (n as u8, p as u8)));
                open.sort_unstable();
                let mut steps = st.steps.clone();
                steps.push(self.step_label(n, &w));
                out.push(State {
                    remaining: rem,
                    edges,
                    open,
                    lb,
                    steps,
                });
            }
        }
        out
    }

    fn step_label(&self, n: usize, w: &[Wire]) -> String {
        if w.is_empty() {
            return self.ids[n].clone();
        }
        let to: Vec<String> = w
            .iter()
            .map(|(_, m, p)| format!("{}.{}", self.ids[*m as usize], p))
            .collect();
        format!("{}->{}", self.ids[n], to.join("+"))
    }

    fn leaf(&self, st: &State, acc: &mut Acc, trace: bool) -> usize {
        if !st.open.is_empty() {
            return 0;
        }
        let edges: Vec<Edge> = st
            .edges
            .iter()
            .map(|(a, b, p)| Edge::new(&self.ids[*a as usize], &self.ids[*b as usize], *p as usize))
            .collect();
        let plan = Dataflow::new(self.d.nodes.clone(), edges);
        let key = plan.canonical_key();
        if !acc.keys.contains(&key) {
            if !validate(&plan, self.t).is_empty() {
                return 0;
            }
            let Ok(rep) = self.model.plan_cost(&plan) else { return 0 };
            acc.keys.insert(key);
            if acc.tighten && rep.total < acc.bound {
                acc.bound = rep.total;
            }
            acc.plans.push(PlanAlternative {
                plan,
                cost: rep.total,
                provenance: st.steps.clone(),
                pass: self.pass,
            });
        }
        if trace {
            for k in 1..=st.steps.len() {
                if acc.prefixes.len() < k {
                    acc.prefixes.push(HashSet::new());
                }
                acc.prefixes[k - 1].insert(st.steps[..k].to_vec());
            }
        }
        1
    }

    /// Depth-first search below `st`; returns the raw leaf count.
    fn dfs(&self, st: &State, cfg: &EnumerationConfig, acc: &mut Acc, rng: &mut Option<ChaCha8Rng>) -> usize {
        if acc.plans.len() >= cfg.limit {
            acc.truncated = true;
            return 0;
        }
        if st.remaining == 0 {
            return self.leaf(st, acc, cfg.trace_stages);
        }
        let memo = !cfg.trace_stages;
        let key = (st.remaining, st.edges.clone());
        if memo {
            if let Some(n) = acc.memo.get(&key) {
                return *n;
            }
        }
        let mut raw = 0;
        for c in self.children(st, rng) {
            if cfg.prune && c.lb > acc.bound * (1.0 + 1e-9) + 1e-9 {
                acc.pruned += 1;
                continue;
            }
            raw += self.dfs(&c, cfg, acc, rng);
        }
        if memo {
            acc.memo.insert(key, raw);
        }
        raw
    }
}

/// Enumerates the plans of `d` permitted by `pg`.
pub fn enumerate(
    d: &Dataflow,
    t: &Taxonomy,
    pg: &PrecedenceGraph,
    model: &CostModel,
    cfg: &EnumerationConfig,
) -> Result<Enumeration> {
    enumerate_pass(d, t, pg, model, cfg, PassKind::Collapsed)
}

fn enumerate_pass(
    d: &Dataflow,
    t: &Taxonomy,
    pg: &PrecedenceGraph,
    model: &CostModel,
    cfg: &EnumerationConfig,
    pass: PassKind,
) -> Result<Enumeration> {
    let cfg = EnumerationConfig {
        limit: cfg.limit.max(1),
        ..cfg.clone()
    };
    let ctx = Ctx::new(d, t, pg, model, pass)?;
    let bound = if cfg.prune { ctx.original_cost } else { f64::INFINITY };
    let tighten = cfg.prune && cfg.bound == BoundPolicy::Tightening;
    let mut rng = cfg.seed.map(ChaCha8Rng::seed_from_u64);
    let sequential = cfg.prune || cfg.seed.is_some() || cfg.trace_stages;
    let accs: Vec<(Acc, usize)> = if sequential {
        let mut acc = Acc {
            bound,
            tighten,
            ..Acc::default()
        };
        let raw = ctx.dfs(&ctx.root(), &cfg, &mut acc, &mut rng);
        vec![(acc, raw)]
    } else {
        // split the top of the tree breadth-first, then search subtrees in
        // parallel; results merge in frontier order
        let mut frontier = vec![ctx.root()];
        let mut done: Vec<State> = Vec::new();
        while !frontier.is_empty() && frontier.len() + done.len() < 64 {
            let mut next = Vec::new();
            for s in frontier {
                if s.remaining == 0 {
                    done.push(s);
                } else {
                    next.extend(ctx.children(&s, &mut None));
                }
            }
            frontier = next;
        }
        frontier.extend(done);
        crate::par::map(&frontier, |s| {
            let mut acc = Acc {
                bound,
                tighten,
                ..Acc::default()
            };
            let raw = ctx.dfs(s, &cfg, &mut acc, &mut None);
            (acc, raw)
        })
    };
    let mut out = Enumeration::default();
    let mut keys = HashSet::new();
    let mut prefixes: Vec<HashSet<Vec<String>>> = Vec::new();
    for (acc, raw) in accs {
        out.raw_plans += raw;
        out.pruned_branches += acc.pruned;
        out.truncated |= acc.truncated;
        for p in acc.plans {
            if out.plans.len() >= cfg.limit {
                out.truncated = true;
                break;
            }
            if keys.insert(p.plan.canonical_key()) {
                out.plans.push(p);
            }
        }
        for (k, set) in acc.prefixes.into_iter().enumerate() {
            if prefixes.len() <= k {
                prefixes.push(HashSet::new());
            }
            prefixes[k].extend(set);
        }
    }
    out.stage_branches = prefixes.iter().map(HashSet::len).collect();
    Ok(out)
}

/// One optimizer pass: the flow it ran on, its precedence graph and plans.
#[derive(Debug, Clone)]
pub struct PassResult {
    pub pass: PassKind,
    pub flow: Dataflow,
    pub pg: PrecedenceGraph,
    pub enumeration: Enumeration,
}

#[derive(Debug, Clone)]
pub struct Optimized {
    pub best: PlanAlternative,
    pub original_cost: f64,
    pub passes: Vec<PassResult>,
}

impl Optimized {
    /// All plans of all passes, ranked.
    pub fn ranked(&self) -> Vec<PlanAlternative> {
        rank(self.passes.iter().flat_map(|p| p.enumeration.plans.iter().cloned()).collect())
    }

    /// Distinct plans across passes, compared in expanded form.
    pub fn space(&self, t: &Taxonomy) -> Result<BTreeSet<String>> {
        plan_space(t, self.passes.iter().flat_map(|p| p.enumeration.plans.iter()))
    }
}

/// Canonical keys of the expanded forms of `plans`.
pub fn plan_space<'a>(t: &Taxonomy, plans: impl Iterator<Item = &'a PlanAlternative>) -> Result<BTreeSet<String>> {
    plans
        .map(|p| expand_complex(t, &p.plan).map(|e| e.canonical_key()))
        .collect()
}

/// Precedence analysis, enumeration and ranking on the collapsed flow and
/// on its expansion; returns the cheapest plan overall.
pub fn optimize(d: &Dataflow, t: &Taxonomy, model: &CostModel, cfg: &EnumerationConfig) -> Result<Optimized> {
    let violations = validate(d, t);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    let original_cost = model.plan_cost(d)?.total;
    let mut passes = Vec::new();
    let expanded = expand_complex(t, d)?;
    let has_complex = expanded != *d;
    let mut flows = Vec::new();
    if matches!(cfg.pass, Pass::Collapsed | Pass::Both) || !has_complex {
        flows.push((PassKind::Collapsed, d.clone()));
    }
    if matches!(cfg.pass, Pass::Expanded | Pass::Both) && has_complex {
        flows.push((PassKind::Expanded, expanded));
    }
    for (kind, flow) in flows {
        let facts = QueryFacts::derive(&flow, t)?;
        let pg = build_precedence(&flow, t, &facts);
        let enumeration = enumerate_pass(&flow, t, &pg, model, cfg, kind)?;
        passes.push(PassResult {
            pass: kind,
            flow,
            pg,
            enumeration,
        });
    }
    let best = passes
        .iter()
        .flat_map(|p| p.enumeration.plans.iter())
        .fold(None::<&PlanAlternative>, |b, p| match b {
            Some(b) if b.cost <= p.cost => Some(b),
            _ => Some(p),
        })
        .cloned()
        .unwrap_or_else(|| PlanAlternative {
            plan: d.clone(),
            cost: original_cost,
            provenance: Vec::new(),
            pass: PassKind::Collapsed,
        });
    Ok(Optimized {
        best,
        original_cost,
        passes,
    })
}
