//! Per-query precedence graph: transitive closure of the dataflow minus the
//! edges whose endpoints the rules prove reorderable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::dataflow::{Dataflow, NodeId};
use crate::presto::Taxonomy;
use crate::rewrite::{join_push_side, QueryFacts, Resolver};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrecedenceGraph {
    pub nodes: Vec<NodeId>,
    pub edges: BTreeSet<(NodeId, NodeId)>,
    /// Removed edges with the rule that licensed each removal.
    pub removed: BTreeMap<(NodeId, NodeId), String>,
}

impl PrecedenceGraph {
    pub fn has_edge(&self, u: &str, v: &str) -> bool {
        self.edges.contains(&(u.to_string(), v.to_string()))
    }

    pub fn out_degree(&self, u: &str) -> usize {
        self.edges.iter().filter(|(a, _)| a == u).count()
    }

    /// Edges not implied by a two-step path; the drawing form.
    pub fn reduced_edges(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.edges
            .iter()
            .filter(|(u, v)| {
                !self
                    .nodes
                    .iter()
                    .any(|w| w != u && w != v && self.has_edge(u, w) && self.has_edge(w, v))
            })
            .cloned()
            .collect()
    }

    pub fn is_acyclic(&self) -> bool {
        let mut indeg: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.as_str(), 0)).collect();
        for (_, v) in &self.edges {
            *indeg.entry(v.as_str()).or_default() += 1;
        }
        let mut ready: Vec<&str> = indeg.iter().filter(|(_, c)| **c == 0).map(|(n, _)| *n).collect();
        let mut seen = 0;
        while let Some(n) = ready.pop() {
            seen += 1;
            for (_, v) in self.edges.iter().filter(|(a, _)| a == n) {
                let c = indeg.get_mut(v.as_str()).unwrap();
                *c -= 1;
                if *c == 0 {
                    ready.push(v);
                }
            }
        }
        seen == indeg.len()
    }

    /// DOT rendering with stable node and edge order.
    pub fn to_dot(&self, d: &Dataflow, reduced: bool) -> String {
        let mut s = String::from("digraph precedence {\n  rankdir=LR;\n");
        let mut nodes = self.nodes.clone();
        nodes.sort();
        for n in &nodes {
            let label = d
                .node(n)
                .map(|x| match x.op_name() {
                    Some(op) => format!("{n}\\n{op}"),
                    None => n.clone(),
                })
                .unwrap_or_else(|| n.clone());
            let _ = writeln!(s, "  \"{n}\" [label=\"{label}\"];");
        }
        let edges = if reduced { self.reduced_edges() } else { self.edges.clone() };
        for (u, v) in edges {
            let _ = writeln!(s, "  \"{u}\" -> \"{v}\";");
        }
        s.push_str("}\n");
        s
    }
}

/// Floyd-Warshall reachability over the dataflow's nodes.
pub fn transitive_closure(d: &Dataflow) -> PrecedenceGraph {
    let nodes: Vec<NodeId> = d.nodes.iter().map(|n| n.id.clone()).collect();
    let idx: BTreeMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let n = nodes.len();
    let mut m = vec![vec![false; n]; n];
    for e in &d.edges {
        if let (Some(&i), Some(&j)) = (idx.get(e.from.as_str()), idx.get(e.to.as_str())) {
            m[i][j] = true;
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
    let mut edges = BTreeSet::new();
    for i in 0..n {
        for j in 0..n {
            if m[i][j] && i != j {
                edges.insert((nodes[i].clone(), nodes[j].clone()));
            }
        }
    }
    PrecedenceGraph {
        nodes,
        edges,
        removed: BTreeMap::new(),
    }
}

/// Closure minus operator-operator edges licensed by a rule.
pub fn build_precedence(d: &Dataflow, t: &Taxonomy, facts: &QueryFacts) -> PrecedenceGraph {
    build_precedence_ablated(d, t, facts, &BTreeSet::new())
}

/// As `build_precedence`, but the listed pairs are treated as not derivable.
pub fn build_precedence_ablated(
    d: &Dataflow,
    t: &Taxonomy,
    facts: &QueryFacts,
    ablate: &BTreeSet<(NodeId, NodeId)>,
) -> PrecedenceGraph {
    let resolver = Resolver::new(t, Some(facts));
    build_with(d, facts, ablate, |u, v| {
        if let Some(der) = resolver_explain(&resolver, u, v) {
            return Some(der);
        }
        join_push_side(t, facts, d, u, v).map(|_| "join-trnsf push-through".to_string())
    })
}

fn resolver_explain(r: &Resolver<'_>, u: &str, v: &str) -> Option<String> {
    match r.explain(u, v) {
        crate::rewrite::Explanation::Proved(d) => d.rule,
        crate::rewrite::Explanation::Failed(_) => None,
    }
}

/// Shared skeleton for rule sets: `reorderable(u,v)` returns the licensing
/// reason, if any.
pub fn build_with(
    d: &Dataflow,
    facts: &QueryFacts,
    ablate: &BTreeSet<(NodeId, NodeId)>,
    reorderable: impl Fn(&str, &str) -> Option<String>,
) -> PrecedenceGraph {
    let mut pg = transitive_closure(d);
    let candidates: Vec<(NodeId, NodeId)> = pg
        .edges
        .iter()
        .filter(|(u, v)| facts.instances.contains_key(u) && facts.instances.contains_key(v))
        .cloned()
        .collect();
    for (u, v) in candidates {
        if ablate.contains(&(u.clone(), v.clone())) {
            continue;
        }
        if let Some(reason) = reorderable(&u, &v) {
            pg.edges.remove(&(u.clone(), v.clone()));
            pg.removed.insert((u, v), reason);
        }
    }
    pg
}
