//! Restricted optimizer modes: read/write-set reordering (RW), filter
//! movement (FILTERPUSH) and adjacent swaps (SISO). RW and FILTERPUSH reuse
//! the enumerator with a smaller rule set; SISO explores swap closures.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::cost::CostModel;
use crate::dataflow::{validate, Dataflow, Edge};
use crate::datamodel::Dataset;
use crate::enumerator::{enumerate, optimize, plan_space, rank, EnumerationConfig, PassKind, PlanAlternative};
use crate::error::{Error, Result};
use crate::interpreter::{self, RunOptions};
use crate::precedence::{build_with, PrecedenceGraph};
use crate::presto::Taxonomy;
use crate::rewrite::{read_write_conflicts, QueryFacts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sofa,
    Rw,
    FilterPush,
    Siso,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Sofa, Mode::Rw, Mode::FilterPush, Mode::Siso];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sofa => "sofa",
            Mode::Rw => "rw",
            Mode::FilterPush => "filterpush",
            Mode::Siso => "siso",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Mode, String> {
        match s.to_ascii_lowercase().as_str() {
            "sofa" => Ok(Mode::Sofa),
            "rw" => Ok(Mode::Rw),
            "filterpush" => Ok(Mode::FilterPush),
            "siso" => Ok(Mode::Siso),
            _ => Err(format!("unknown mode `{s}` (sofa|rw|filterpush|siso)")),
        }
    }
}

fn prop(t: &Taxonomy, facts: &QueryFacts, id: &str, p: &str) -> bool {
    facts
        .instances
        .get(id)
        .is_some_and(|f| t.has_property(&f.concept, p).unwrap_or(false))
}

fn is_a(facts: &QueryFacts, t: &Taxonomy, id: &str, c: &str) -> bool {
    facts.instances.get(id).is_some_and(|f| t.is_a(&f.concept, c))
}

/// Two record-at-a-time single-input operators without access conflicts.
pub fn rw_reorderable(t: &Taxonomy, facts: &QueryFacts, u: &str, v: &str) -> bool {
    let raat = |x| prop(t, facts, x, "single-in") && prop(t, facts, x, "RAAT");
    raat(u) && raat(v) && !read_write_conflicts(facts, u, v)
}

/// Filter movement: a filter commutes with another filter, with a
/// conflict-free record-at-a-time operator, or past an inner merge.
pub fn filter_reorderable(t: &Taxonomy, facts: &QueryFacts, u: &str, v: &str) -> bool {
    let (fu, fv) = (is_a(facts, t, u, "fltr"), is_a(facts, t, v, "fltr"));
    if !(fu || fv) {
        return false;
    }
    if fu && fv && prop(t, facts, u, "commutative") && prop(t, facts, v, "commutative") {
        return true;
    }
    if rw_reorderable(t, facts, u, v) {
        return true;
    }
    fv && prop(t, facts, u, "inner-merge") && !read_write_conflicts(facts, u, v)
}

/// Precedence graph of a restricted mode (SOFA uses the full rule base).
pub fn precedence_for(mode: Mode, d: &Dataflow, t: &Taxonomy, facts: &QueryFacts) -> PrecedenceGraph {
    let none = BTreeSet::new();
    match mode {
        Mode::Sofa => crate::precedence::build_precedence(d, t, facts),
        Mode::Rw | Mode::Siso => build_with(d, facts, &none, |u, v| {
            rw_reorderable(t, facts, u, v).then(|| "read/write sets".to_string())
        }),
        Mode::FilterPush => build_with(d, facts, &none, |u, v| {
            filter_reorderable(t, facts, u, v).then(|| "filter movement".to_string())
        }),
    }
}

/// Plans of one mode, collapsed flow only for the baselines.
pub fn enumerate_mode(
    mode: Mode,
    d: &Dataflow,
    t: &Taxonomy,
    model: &CostModel,
    cfg: &EnumerationConfig,
) -> Result<Vec<PlanAlternative>> {
    let violations = validate(d, t);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    match mode {
        Mode::Sofa => {
            let o = optimize(d, t, model, cfg)?;
            Ok(o.passes.into_iter().flat_map(|p| p.enumeration.plans).collect())
        }
        Mode::Rw | Mode::FilterPush => {
            if mode == Mode::Rw && d.is_dag_shaped() {
                return Ok(vec![original(d, model)?]);
            }
            let facts = QueryFacts::derive(d, t)?;
            let pg = precedence_for(mode, d, t, &facts);
            Ok(enumerate(d, t, &pg, model, cfg)?.plans)
        }
        Mode::Siso => enumerate_siso(d, t, model, cfg),
    }
}

fn original(d: &Dataflow, model: &CostModel) -> Result<PlanAlternative> {
    Ok(PlanAlternative {
        plan: d.clone(),
        cost: model.plan_cost(d)?.total,
        provenance: Vec::new(),
        pass: PassKind::Collapsed,
    })
}

/// Closure of the original plan under swaps of adjacent single-input,
/// single-output operators that `rw_reorderable` permits.
pub fn enumerate_siso(d: &Dataflow, t: &Taxonomy, model: &CostModel, cfg: &EnumerationConfig) -> Result<Vec<PlanAlternative>> {
    let mut out = vec![original(d, model)?];
    if d.is_dag_shaped() {
        return Ok(out);
    }
    let facts = QueryFacts::derive(d, t)?;
    let mut seen = BTreeSet::from([d.canonical_key()]);
    let mut queue = VecDeque::from([(d.clone(), Vec::<String>::new())]);
    while let Some((p, prov)) = queue.pop_front() {
        for e in &p.edges {
            let (a, b) = (&e.from, &e.to);
            if !facts.instances.contains_key(a) || !facts.instances.contains_key(b) {
                continue;
            }
            let a_out = p.outputs(a);
            let b_in = p.inputs(b);
            let a_in = p.inputs(a);
            if a_out.len() != 1 || b_in.len() != 1 || a_in.len() != 1 || p.outputs(b).len() != 1 {
                continue;
            }
            if !rw_reorderable(t, &facts, a, b) {
                continue;
            }
            let feed = a_in[0].clone();
            let next = p.outputs(b)[0].clone();
            let mut edges: Vec<Edge> = p
                .edges
                .iter()
                .filter(|x| **x != feed && **x != next && !(x.from == *a && x.to == *b))
                .cloned()
                .collect();
            edges.push(Edge {
                from: feed.from.clone(),
                from_port: feed.from_port,
                to: b.clone(),
                to_port: 0,
            });
            edges.push(Edge::new(b, a, 0));
            edges.push(Edge {
                from: a.clone(),
                from_port: 0,
                to: next.to.clone(),
                to_port: next.to_port,
            });
            let q = Dataflow::new(p.nodes.clone(), edges);
            if !seen.insert(q.canonical_key()) || !validate(&q, t).is_empty() {
                continue;
            }
            let mut prov2 = prov.clone();
            prov2.push(format!("swap {a} {b}"));
            out.push(PlanAlternative {
                plan: q.clone(),
                cost: model.plan_cost(&q)?.total,
                provenance: prov2.clone(),
                pass: PassKind::Collapsed,
            });
            if out.len() >= cfg.limit.max(1) {
                return Ok(out);
            }
            queue.push_back((q, prov2));
        }
    }
    Ok(out)
}

/// One row of a mode comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ModeRow {
    pub mode: Mode,
    pub plans: usize,
    #[serde(rename = "plansPruned")]
    pub plans_pruned: usize,
    #[serde(rename = "bestCost")]
    pub best_cost: f64,
    #[serde(rename = "runtimeUnits")]
    pub runtime_units: Option<f64>,
    #[serde(skip)]
    pub best: PlanAlternative,
    /// Expanded canonical forms of the unpruned space.
    #[serde(skip)]
    pub space: BTreeSet<String>,
}

/// Plan counts (unpruned, pruned), best estimated cost and, when data is
/// given, interpreter runtime units of each mode's best plan.
pub fn compare_modes(
    d: &Dataflow,
    t: &Taxonomy,
    model: &CostModel,
    modes: &[Mode],
    data: Option<&BTreeMap<String, Dataset>>,
) -> Result<Vec<ModeRow>> {
    let rows = crate::par::map(modes, |&mode| -> Result<ModeRow> {
        let unpruned = enumerate_mode(mode, d, t, model, &EnumerationConfig::unpruned())?;
        let pruned = enumerate_mode(mode, d, t, model, &EnumerationConfig::default())?;
        let space = plan_space(t, unpruned.iter())?;
        let pruned_space = plan_space(t, pruned.iter())?;
        let best = rank(unpruned).into_iter().next().expect("original plan is always present");
        let runtime_units = match data {
            Some(data) => Some(interpreter::run(&best.plan, t, data, RunOptions::default())?.1.total_units()),
            None => None,
        };
        Ok(ModeRow {
            mode,
            plans: space.len(),
            plans_pruned: pruned_space.len(),
            best_cost: best.cost,
            runtime_units,
            best,
            space,
        })
    });
    rows.into_iter().collect()
}

/// CSV rendering with the columns `mode,plans,plansPruned,bestCost,runtimeUnits`.
pub fn rows_to_csv(rows: &[ModeRow]) -> String {
    let mut s = String::from("mode,plans,plansPruned,bestCost,runtimeUnits\n");
    for r in rows {
        let units = r.runtime_units.map(|u| format!("{u}")).unwrap_or_default();
        s += &format!("{},{},{},{},{}\n", r.mode, r.plans, r.plans_pruned, r.best_cost, units);
    }
    s
}
