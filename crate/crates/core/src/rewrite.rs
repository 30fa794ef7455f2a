//! Datalog-style rewrite rules deriving `reorder(X,Y)`, resolved top-down
//! over the taxonomy plus per-query facts.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::dataflow::{propagate_schemas, validate, Access, Dataflow, Edge, NodeId, NodeKind, Side};
use crate::datamodel::{AttributePath, SchemaDescriptor, WriteMode};
use crate::error::Result;
use crate::presto::{ConceptKind, Taxonomy};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(String),
    Const(String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => f.write_str(v),
            Term::Const(c) if c.chars().all(|ch| ch.is_alphanumeric() || ch == '-' || ch == '_') => {
                f.write_str(c)
            }
            Term::Const(c) => write!(f, "'{c}'"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleAtom {
    pub pred: String,
    pub args: Vec<Term>,
}

impl fmt::Display for RuleAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args: Vec<String> = self.args.iter().map(|a| a.to_string()).collect();
        write!(f, "{}({})", self.pred, args.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Literal {
    pub negated: bool,
    pub atom: RuleAtom,
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("not ")?;
        }
        write!(f, "{}", self.atom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteRule {
    pub head: RuleAtom,
    pub body: Vec<Literal>,
    pub text: String,
    pub phase: Phase,
}

impl RewriteRule {
    pub fn new(head: RuleAtom, body: Vec<Literal>, text: String) -> RewriteRule {
        let phase = if body.iter().any(|l| is_dynamic(&l.atom.pred)) {
            Phase::Dynamic
        } else {
            Phase::Static
        };
        RewriteRule {
            head,
            body,
            text,
            phase,
        }
    }
}

const PREDICATES: &[(&str, usize, bool)] = &[
    ("reorder", 2, false),
    ("isA", 2, false),
    ("hasProperty", 2, false),
    ("hasPrerequisite", 2, false),
    ("readWriteConflicts", 2, true),
    ("accessedFields", 2, true),
    ("S_out", 2, true),
    ("contains", 2, true),
];

fn is_dynamic(pred: &str) -> bool {
    PREDICATES.iter().any(|(p, _, d)| *p == pred && *d)
}

fn vars(a: &RuleAtom) -> impl Iterator<Item = &str> {
    a.args.iter().filter_map(|t| match t {
        Term::Var(v) => Some(v.as_str()),
        Term::Const(_) => None,
    })
}

/// Load-time checks: known predicates with fixed arity, a `reorder` head,
/// safety, ground negation, constants naming known concepts, and recursion
/// only as `reorder(Z,Y)` with `Z` bound by a positive `isA` from a head variable.
pub fn check_rule(r: &RewriteRule, concept_exists: &dyn Fn(&str) -> bool) -> std::result::Result<(), String> {
    if r.head.pred != "reorder" || r.head.args.len() != 2 {
        return Err("head must be reorder/2".into());
    }
    let mut atoms = vec![&r.head];
    atoms.extend(r.body.iter().map(|l| &l.atom));
    for a in &atoms {
        match PREDICATES.iter().find(|(p, _, _)| *p == a.pred) {
            None => return Err(format!("unknown predicate `{}`", a.pred)),
            Some((_, n, _)) if *n != a.args.len() => {
                return Err(format!("`{}` takes {n} arguments", a.pred))
            }
            _ => {}
        }
        if matches!(a.pred.as_str(), "isA" | "hasProperty" | "hasPrerequisite") {
            for t in &a.args {
                if let Term::Const(c) = t {
                    if !concept_exists(c) {
                        return Err(format!("unknown concept `{c}`"));
                    }
                }
            }
        }
    }
    let head_vars: BTreeSet<&str> = vars(&r.head).collect();
    let positive: BTreeSet<&str> = r
        .body
        .iter()
        .filter(|l| !l.negated)
        .flat_map(|l| vars(&l.atom))
        .collect();
    if let Some(v) = head_vars.iter().find(|v| !positive.contains(*v)) {
        return Err(format!("head variable {v} does not occur in a positive body literal"));
    }
    let mut bound: BTreeSet<&str> = head_vars.clone();
    for l in &r.body {
        if l.negated {
            if let Some(v) = vars(&l.atom).find(|v| !bound.contains(v)) {
                return Err(format!("variable {v} in negated literal `{l}` is not bound"));
            }
            if l.atom.pred == "reorder" {
                return Err("negated reorder is not stratified".into());
            }
        } else {
            bound.extend(vars(&l.atom));
        }
    }
    for (i, l) in r.body.iter().enumerate() {
        if l.atom.pred != "reorder" {
            continue;
        }
        let ok = match (&l.atom.args[0], &l.atom.args[1], &r.head.args[0], &r.head.args[1]) {
            (Term::Var(z), Term::Var(y), Term::Var(hx), Term::Var(hy)) if y == hy => {
                climbs(&r.body[..i], hx, z)
            }
            (Term::Var(x), Term::Var(z), Term::Var(hx), Term::Var(hy)) if x == hx => {
                climbs(&r.body[..i], hy, z)
            }
            _ => false,
        };
        if !ok {
            return Err("recursion allowed only through isA: reorder(Z,Y) after isA(X,Z)".into());
        }
    }
    Ok(())
}

fn climbs(before: &[Literal], from: &str, to: &str) -> bool {
    before.iter().any(|l| {
        !l.negated
            && l.atom.pred == "isA"
            && l.atom.args == [Term::Var(from.into()), Term::Var(to.into())]
            && from != to
    })
}

/// Per-instance facts of one concrete dataflow.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFacts {
    pub concept: String,
    pub access: Access,
    pub s_out: SchemaDescriptor,
    pub inputs: Vec<SchemaDescriptor>,
    pub arity: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryFacts {
    pub instances: BTreeMap<NodeId, InstanceFacts>,
}

impl QueryFacts {
    pub fn derive(d: &Dataflow, t: &Taxonomy) -> Result<QueryFacts> {
        let schemas = propagate_schemas(d, t)?;
        let mut instances = BTreeMap::new();
        for n in d.operators() {
            let op = n.op_name().unwrap();
            let concept = t.resolve(op).unwrap_or(op).to_string();
            let s_out = schemas
                .iter()
                .find(|p| p.node == n.id && p.side == Side::Out)
                .map(|p| p.schema.clone())
                .unwrap_or_default();
            let inputs = schemas
                .iter()
                .filter(|p| p.node == n.id && p.side == Side::In)
                .map(|p| p.schema.clone())
                .collect();
            instances.insert(
                n.id.clone(),
                InstanceFacts {
                    concept,
                    access: t.access(n),
                    s_out,
                    inputs,
                    arity: t.arity(op).unwrap_or(1),
                },
            );
        }
        Ok(QueryFacts { instances })
    }
}

/// Write/read, read/write or write/write overlap (prefix-or-equal). Two
/// append-mode writes to the same path do not conflict.
pub fn access_conflicts(a: &Access, b: &Access) -> bool {
    let wr = |x: &Access, y: &Access| {
        x.writes
            .keys()
            .any(|w| y.reads.iter().any(|r| w.overlaps(r)))
    };
    if wr(a, b) || wr(b, a) {
        return true;
    }
    a.writes.iter().any(|(p, m)| {
        b.writes.iter().any(|(q, n)| {
            p.overlaps(q) && !(p == q && *m == WriteMode::Append && *n == WriteMode::Append)
        })
    })
}

pub fn read_write_conflicts(facts: &QueryFacts, x: &str, y: &str) -> bool {
    match (facts.instances.get(x), facts.instances.get(y)) {
        (Some(a), Some(b)) => access_conflicts(&a.access, &b.access),
        _ => true,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Val {
    Inst(String, String),
    Concept(String),
    /// A top-level concept query: an unnamed instance of the concept.
    Generic(String),
    Paths(BTreeSet<AttributePath>),
}

impl Val {
    fn concept(&self) -> Option<&str> {
        match self {
            Val::Inst(_, c) | Val::Concept(c) | Val::Generic(c) => Some(c),
            Val::Paths(_) => None,
        }
    }

    fn same(&self, other: &Val) -> bool {
        match (self, other) {
            (Val::Paths(a), Val::Paths(b)) => a == b,
            _ => self.concept().is_some() && self.concept() == other.concept(),
        }
    }

    fn key(&self) -> String {
        match self {
            Val::Inst(i, _) => format!("#{i}"),
            Val::Concept(c) => c.clone(),
            Val::Generic(c) => format!("*{c}"),
            Val::Paths(p) => format!("{p:?}"),
        }
    }
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Inst(i, c) => write!(f, "{i}:{c}"),
            Val::Concept(c) | Val::Generic(c) => write!(f, "{c}"),
            Val::Paths(p) => {
                let v: Vec<String> = p.iter().map(|x| x.to_string()).collect();
                write!(f, "{{{}}}", v.join(","))
            }
        }
    }
}

type Env = BTreeMap<String, Val>;

/// A successful proof: the goal, the rule used (none for base facts), and
/// sub-proofs of its body literals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Derivation {
    pub goal: String,
    pub rule: Option<String>,
    pub children: Vec<Derivation>,
}

impl Derivation {
    pub fn render(&self) -> String {
        let mut s = String::new();
        self.render_into(0, &mut s);
        s
    }

    fn render_into(&self, depth: usize, out: &mut String) {
        out.push_str(&"  ".repeat(depth));
        out.push_str(&self.goal);
        if let Some(r) = &self.rule {
            out.push_str("   by ");
            out.push_str(r);
        }
        out.push('\n');
        for c in &self.children {
            c.render_into(depth + 1, out);
        }
    }
}

/// Outcome of `Resolver::explain`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Explanation {
    Proved(Derivation),
    /// Each tried rule with the body literal at which it failed.
    Failed(Vec<(String, String)>),
}

enum Truth {
    Sols(Vec<(Env, Derivation)>),
    Unknown,
}

/// One resolution session; the memo table lives as long as the resolver.
pub struct Resolver<'a> {
    t: &'a Taxonomy,
    facts: Option<&'a QueryFacts>,
    rules: Vec<&'a RewriteRule>,
    memo: RefCell<HashMap<(String, String), Option<Derivation>>>,
    active: RefCell<BTreeSet<(String, String)>>,
}

impl<'a> Resolver<'a> {
    pub fn new(t: &'a Taxonomy, facts: Option<&'a QueryFacts>) -> Resolver<'a> {
        Resolver {
            t,
            facts,
            rules: t.rules().iter().collect(),
            memo: RefCell::new(HashMap::new()),
            active: RefCell::new(BTreeSet::new()),
        }
    }

    /// Restricts the session to rules accepted by `keep`.
    pub fn with_rules(mut self, keep: impl Fn(&RewriteRule) -> bool) -> Resolver<'a> {
        self.rules.retain(|r| keep(r));
        self
    }

    fn inst(&self, id: &str) -> Option<Val> {
        let f = self.facts?.instances.get(id)?;
        Some(Val::Inst(id.to_string(), f.concept.clone()))
    }

    fn val_of(&self, s: &str) -> Option<Val> {
        if let Some(v) = self.inst(s) {
            return Some(v);
        }
        self.t.resolve(s).map(|c| Val::Generic(c.to_string()))
    }

    /// `reorder(x,y)` for two instance ids (or concept names).
    pub fn resolve_reorder(&self, x: &str, y: &str) -> bool {
        match (self.val_of(x), self.val_of(y)) {
            (Some(a), Some(b)) => self.reorder(&a, &b).is_some(),
            _ => false,
        }
    }

    pub fn explain(&self, x: &str, y: &str) -> Explanation {
        let (Some(a), Some(b)) = (self.val_of(x), self.val_of(y)) else {
            return Explanation::Failed(vec![("-".into(), format!("unknown operator {x} or {y}"))]);
        };
        if let Some(d) = self.reorder(&a, &b) {
            return Explanation::Proved(d);
        }
        let mut fails = Vec::new();
        for r in &self.rules {
            let mut env = Env::new();
            if !unify_head(&r.head, &[a.clone(), b.clone()], &mut env) {
                fails.push((r.text.clone(), "head does not unify".to_string()));
                continue;
            }
            let mut envs = vec![env];
            let mut failed_at = None;
            for l in &r.body {
                let mut next = Vec::new();
                for e in &envs {
                    for (e2, _) in self.literal(l, e) {
                        next.push(e2);
                    }
                }
                if next.is_empty() {
                    failed_at = Some(l.to_string());
                    break;
                }
                envs = next;
            }
            fails.push((r.text.clone(), failed_at.unwrap_or_else(|| "?".into())));
        }
        Explanation::Failed(fails)
    }

    fn reorder(&self, a: &Val, b: &Val) -> Option<Derivation> {
        let key = (a.key(), b.key());
        if let Some(m) = self.memo.borrow().get(&key) {
            return m.clone();
        }
        if !self.active.borrow_mut().insert(key.clone()) {
            return None;
        }
        let mut found = None;
        for r in &self.rules {
            let mut env = Env::new();
            if !unify_head(&r.head, &[a.clone(), b.clone()], &mut env) {
                continue;
            }
            if let Some((_, kids)) = self.body(&r.body, env) {
                found = Some(Derivation {
                    goal: format!("reorder({a},{b})"),
                    rule: Some(r.text.clone()),
                    children: kids,
                });
                break;
            }
        }
        self.active.borrow_mut().remove(&key);
        self.memo.borrow_mut().insert(key, found.clone());
        found
    }

    fn body(&self, lits: &[Literal], env: Env) -> Option<(Env, Vec<Derivation>)> {
        let Some((first, rest)) = lits.split_first() else {
            return Some((env, Vec::new()));
        };
        for (e2, d) in self.literal(first, &env) {
            if let Some((e3, mut ds)) = self.body(rest, e2) {
                ds.insert(0, d);
                return Some((e3, ds));
            }
        }
        None
    }

    fn literal(&self, l: &Literal, env: &Env) -> Vec<(Env, Derivation)> {
        let truth = self.atom(&l.atom, env);
        if !l.negated {
            return match truth {
                Truth::Sols(s) => s,
                Truth::Unknown => Vec::new(),
            };
        }
        match truth {
            Truth::Sols(s) if s.is_empty() => {
                let args: Vec<String> = l.atom.args.iter().map(|t| show(t, env)).collect();
                vec![(
                    env.clone(),
                    Derivation {
                        goal: format!("not {}({})", l.atom.pred, args.join(",")),
                        rule: None,
                        children: Vec::new(),
                    },
                )]
            }
            // unknown under negation fails: conservative
            _ => Vec::new(),
        }
    }

    fn atom(&self, a: &RuleAtom, env: &Env) -> Truth {
        let arg = |i: usize| -> Option<Val> {
            match &a.args[i] {
                Term::Var(v) => env.get(v).cloned(),
                Term::Const(c) => self.t.resolve(c).map(|c| Val::Concept(c.to_string())),
            }
        };
        let leaf = |e: Env, goal: String| (e, Derivation { goal, rule: None, children: Vec::new() });
        let bind = |i: usize, v: Val| -> Option<Env> {
            let mut e = env.clone();
            match &a.args[i] {
                Term::Var(name) => match e.get(name) {
                    Some(old) if !old.same(&v) => None,
                    _ => {
                        e.insert(name.clone(), v);
                        Some(e)
                    }
                },
                Term::Const(c) => match self.t.resolve(c) {
                    Some(cc) if v.concept() == Some(cc) => Some(e),
                    _ => None,
                },
            }
        };
        let (x, y) = (arg(0), arg(1));
        match a.pred.as_str() {
            "isA" => {
                let Some(x) = x else { return Truth::Sols(Vec::new()) };
                let Some(cx) = x.concept() else { return Truth::Sols(Vec::new()) };
                // strict ancestors; an instance or generic query also isA its own concept
                let mut cands: Vec<String> = self
                    .t
                    .ancestors(cx)
                    .unwrap_or_default()
                    .into_iter()
                    .filter(|c| c != cx)
                    .collect();
                if matches!(x, Val::Inst(..) | Val::Generic(..)) {
                    cands.insert(0, cx.to_string());
                }
                let mut out = Vec::new();
                for c in cands {
                    if let Some(e) = bind(1, Val::Concept(c.clone())) {
                        out.push(leaf(e, format!("isA({x},{c})")));
                    }
                }
                Truth::Sols(out)
            }
            "hasProperty" => {
                let Some(cx) = x.as_ref().and_then(|v| v.concept().map(str::to_string)) else {
                    return Truth::Sols(Vec::new());
                };
                let props: Vec<String> = match &y {
                    Some(p) => p.concept().map(|c| vec![c.to_string()]).unwrap_or_default(),
                    None => self
                        .t
                        .concepts()
                        .filter(|c| c.kind.is_property())
                        .map(|c| c.name.clone())
                        .collect(),
                };
                let mut out = Vec::new();
                for p in props {
                    if self.t.has_property(&cx, &p).unwrap_or(false) {
                        if let Some(e) = bind(1, Val::Concept(p.clone())) {
                            out.push(leaf(e, format!("hasProperty({},'{p}')", x.as_ref().unwrap())));
                        }
                    }
                }
                Truth::Sols(out)
            }
            "hasPrerequisite" => match (x.as_ref().and_then(Val::concept), y.as_ref().and_then(Val::concept)) {
                (Some(cx), Some(cy)) => {
                    if self.t.has_prerequisite(cx, cy).unwrap_or(false) {
                        Truth::Sols(vec![leaf(env.clone(), format!("hasPrerequisite({cx},{cy})"))])
                    } else {
                        Truth::Sols(Vec::new())
                    }
                }
                _ => Truth::Sols(Vec::new()),
            },
            "readWriteConflicts" => match (&x, &y, self.facts) {
                (Some(Val::Inst(i, _)), Some(Val::Inst(j, _)), Some(f)) => {
                    if read_write_conflicts(f, i, j) {
                        Truth::Sols(vec![leaf(env.clone(), format!("readWriteConflicts({i},{j})"))])
                    } else {
                        Truth::Sols(Vec::new())
                    }
                }
                _ => Truth::Unknown,
            },
            "accessedFields" | "S_out" => match (&x, self.facts) {
                (Some(Val::Inst(i, _)), Some(f)) => {
                    let Some(inst) = f.instances.get(i) else { return Truth::Unknown };
                    let paths = if a.pred == "S_out" {
                        inst.s_out.attributes.clone()
                    } else {
                        inst.access.accessed()
                    };
                    let v = Val::Paths(paths);
                    match bind(1, v.clone()) {
                        Some(e) => Truth::Sols(vec![leaf(e, format!("{}({i},{v})", a.pred))]),
                        None => Truth::Sols(Vec::new()),
                    }
                }
                _ => Truth::Unknown,
            },
            "contains" => match (&x, &y) {
                (Some(Val::Paths(p)), Some(Val::Paths(q))) => {
                    let ok = q.iter().all(|c| p.iter().any(|a| a.is_prefix_of(c)));
                    if ok {
                        Truth::Sols(vec![leaf(env.clone(), "contains(OUT,ACC)".into())])
                    } else {
                        Truth::Sols(Vec::new())
                    }
                }
                _ => Truth::Unknown,
            },
            "reorder" => match (&x, &y) {
                (Some(p), Some(q)) => match self.reorder(p, q) {
                    Some(d) => Truth::Sols(vec![(env.clone(), d)]),
                    None => Truth::Sols(Vec::new()),
                },
                _ => Truth::Sols(Vec::new()),
            },
            _ => Truth::Sols(Vec::new()),
        }
    }
}

fn show(t: &Term, env: &Env) -> String {
    match t {
        Term::Var(v) => env.get(v).map(|x| x.to_string()).unwrap_or_else(|| v.clone()),
        Term::Const(c) => c.clone(),
    }
}

fn unify_head(head: &RuleAtom, goal: &[Val], env: &mut Env) -> bool {
    for (t, v) in head.args.iter().zip(goal) {
        match t {
            Term::Var(name) => match env.get(name) {
                Some(old) if !old.same(v) => return false,
                Some(_) => {}
                None => {
                    env.insert(name.clone(), v.clone());
                }
            },
            Term::Const(c) => {
                if v.concept() != Some(c.as_str()) {
                    return false;
                }
            }
        }
    }
    true
}

/// Concept pairs derivable without query facts.
pub fn evaluate_static_rules(t: &Taxonomy) -> BTreeSet<(String, String)> {
    let r = Resolver::new(t, None);
    let ops: Vec<String> = t
        .concepts()
        .filter(|c| matches!(c.kind, ConceptKind::Concrete | ConceptKind::Complex))
        .map(|c| c.name.clone())
        .collect();
    let mut out = BTreeSet::new();
    for x in &ops {
        for y in &ops {
            if r.resolve_reorder(x, y) {
                out.insert((x.clone(), y.clone()));
            }
        }
    }
    out
}

/// A structural rewrite site.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralMatch {
    pub rule: &'static str,
    pub site: Vec<NodeId>,
    pub rewritten: Dataflow,
}

fn join_keys(cfg: &serde_json::Map<String, serde_json::Value>, side: usize) -> Vec<AttributePath> {
    let key = if side == 0 { "left" } else { "right" };
    let names: Vec<&str> = match cfg.get(key).or_else(|| cfg.get("on")) {
        Some(serde_json::Value::String(s)) => vec![s.as_str()],
        Some(serde_json::Value::Array(a)) => a.iter().filter_map(|p| p.as_str()).collect(),
        _ => Vec::new(),
    };
    names.into_iter().filter_map(|p| AttributePath::parse(p).ok()).collect()
}

/// Join input port a trnsf-like consumer `v` of join `u` may be pushed to:
/// `v` is adjacent to `u`, isA trnsf, and touches only non-key attributes
/// present on exactly that side.
pub fn join_push_side(t: &Taxonomy, facts: &QueryFacts, d: &Dataflow, u: &str, v: &str) -> Option<usize> {
    let un = d.node(u)?;
    let vn = d.node(v)?;
    let (uo, vo) = (un.op_name()?, vn.op_name()?);
    if !t.is_a(uo, "join") || !t.is_a(vo, "trnsf") {
        return None;
    }
    if !d.inputs(v).iter().all(|e| e.from == u) || d.outputs(u).len() != 1 {
        return None;
    }
    let uf = facts.instances.get(u)?;
    let vf = facts.instances.get(v)?;
    let acc = vf.access.accessed();
    if acc.is_empty() || uf.inputs.len() != 2 {
        return None;
    }
    for side in 0..2 {
        let mine = &uf.inputs[side];
        let other = &uf.inputs[1 - side];
        let keys = join_keys(&un.config, side);
        let ok = acc.iter().all(|p| {
            mine.contains_path(p)
                && !other.attributes.iter().any(|o| o.overlaps(p))
                && !keys.iter().any(|k| k.overlaps(p))
        });
        if ok {
            return Some(side);
        }
    }
    None
}

/// All structural rule applications on `d`, each validated.
pub fn match_structural(t: &Taxonomy, d: &Dataflow) -> Vec<StructuralMatch> {
    let Ok(facts) = QueryFacts::derive(d, t) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for e in &d.edges {
        if let Some(side) = join_push_side(t, &facts, d, &e.from, &e.to) {
            let (j, x) = (&e.from, &e.to);
            let feed = d.inputs(j).into_iter().find(|i| i.to_port == side).cloned();
            let Some(feed) = feed else { continue };
            let mut edges: Vec<Edge> = d
                .edges
                .iter()
                .filter(|k| *k != &feed && !(k.from == *j && k.to == *x))
                .cloned()
                .map(|mut k| {
                    if k.from == *x {
                        k.from = j.clone();
                    }
                    k
                })
                .collect();
            edges.push(Edge {
                from: feed.from.clone(),
                from_port: feed.from_port,
                to: x.clone(),
                to_port: 0,
            });
            edges.push(Edge::new(x, j, side));
            let r = Dataflow::new(d.nodes.clone(), edges);
            if validate(&r, t).is_empty() {
                out.push(StructuralMatch {
                    rule: "join-trnsf",
                    site: vec![j.clone(), x.clone()],
                    rewritten: r,
                });
            }
        }
    }
    // Extrapolated removal rule: an identity-like operator (|I|=|O|, schema
    // preserving, no field updates) can be dropped.
    for n in d.operators() {
        let op = n.op_name().unwrap();
        let yes = |p| t.has_property(op, p).unwrap_or(false);
        let Some(f) = facts.instances.get(&n.id) else { continue };
        if f.arity != 1 || !f.access.writes.is_empty() {
            continue;
        }
        if !(yes("|I|=|O|") && yes("S_in = S_out") && yes("no field updates")) {
            continue;
        }
        let ins = d.inputs(&n.id);
        let Some(i) = ins.first() else { continue };
        let mut edges: Vec<Edge> = d
            .edges
            .iter()
            .filter(|e| e.to != n.id && e.from != n.id)
            .cloned()
            .collect();
        for o in d.outputs(&n.id) {
            edges.push(Edge {
                from: i.from.clone(),
                from_port: i.from_port,
                to: o.to.clone(),
                to_port: o.to_port,
            });
        }
        let nodes = d.nodes.iter().filter(|m| m.id != n.id).cloned().collect();
        let r = Dataflow::new(nodes, edges);
        if validate(&r, t).is_empty() {
            out.push(StructuralMatch {
                rule: "no-op-removal",
                site: vec![n.id.clone()],
                rewritten: r,
            });
        }
    }
    out
}

/// Operator kind label used by diagnostics.
pub fn instance_label(d: &Dataflow, id: &str) -> String {
    match d.node(id).map(|n| &n.kind) {
        Some(NodeKind::Op { op, .. }) => format!("{id} ({op})"),
        _ => id.to_string(),
    }
}
